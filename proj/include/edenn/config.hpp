#pragma once

// Text configuration: INI-style sections of key = value lines. '#' or ';'
// start a comment.
//
//   [network]   preset (custom | table1 | table1_reduced | flow_unet), width,
//               height, in_channels, divisor, base_channels, mode, head,
//               head_dim, head_bias, output_scale, initial_gamma, seed
//   [layer]     kernel, channels, stride, upsample, mode, activation,
//               emits_flow   (repeat once per layer; preset = custom only)
//   [skip]      from, to     (repeatable; preset = custom only)
//   [train]     epochs, batch_size, learning_rate, settle_ms, settle_us, seed
//
// Preset keys (divisor, base_channels) and mode apply when the preset is
// built; head keys override the preset's head afterwards.

#include <charconv>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "edenn/network.hpp"
#include "edenn/train.hpp"

namespace edenn {

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
};

namespace detail {

struct ConfigEntry {
  std::string value;
  std::size_t line;
};

struct ConfigSection {
  std::string name;
  std::size_t line;
  std::map<std::string, ConfigEntry> entries;
};

inline std::string line_prefix(std::size_t line) { return "config line " + std::to_string(line) + ": "; }

class SectionReader {
 public:
  explicit SectionReader(const ConfigSection& s) : s_(s) {}

  bool has(const std::string& key) const { return s_.entries.count(key) != 0; }

  std::size_t size(const std::string& key, std::size_t fallback) {
    auto e = take(key);
    if (!e) return fallback;
    std::size_t v = 0;
    const auto* end = e->value.data() + e->value.size();
    auto [p, ec] = std::from_chars(e->value.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError(line_prefix(e->line) + key + " expects a non-negative integer, got '" + e->value + "'");
    return v;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    auto e = take(key);
    if (!e) return fallback;
    std::uint64_t v = 0;
    const auto* end = e->value.data() + e->value.size();
    auto [p, ec] = std::from_chars(e->value.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError(line_prefix(e->line) + key + " expects an unsigned integer, got '" + e->value + "'");
    return v;
  }

  double real(const std::string& key, double fallback) {
    auto e = take(key);
    if (!e) return fallback;
    std::istringstream ss(e->value);
    ss.imbue(std::locale::classic());
    double v = 0;
    char extra = 0;
    if (!(ss >> v) || (ss >> extra)) throw ConfigError(line_prefix(e->line) + key + " expects a number, got '" + e->value + "'");
    return v;
  }

  bool boolean(const std::string& key, bool fallback) {
    auto e = take(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw ConfigError(line_prefix(e->line) + key + " expects true or false, got '" + e->value + "'");
  }

  template <typename Fn>
  auto parsed(const std::string& key, Fn&& parse) -> std::optional<decltype(parse(std::string{}))> {
    auto e = take(key);
    if (!e) return std::nullopt;
    try {
      return parse(e->value);
    } catch (const std::exception& ex) {
      throw ConfigError(line_prefix(e->line) + ex.what());
    }
  }

  std::string text(const std::string& key, const std::string& fallback) {
    auto e = take(key);
    return e ? e->value : fallback;
  }

  /// Throws on the first key nobody asked for.
  void finish() const {
    for (const auto& [k, e] : s_.entries)
      if (!used_.count(k)) throw ConfigError(line_prefix(e.line) + "unknown key '" + k + "' in [" + s_.name + "]");
  }

 private:
  std::optional<ConfigEntry> take(const std::string& key) {
    auto it = s_.entries.find(key);
    if (it == s_.entries.end()) return std::nullopt;
    used_[key] = true;
    return it->second;
  }

  const ConfigSection& s_;
  std::map<std::string, bool> used_;
};

inline std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline HeadKind parse_head(const std::string& s) {
  if (s == "scalar_regression" || s == "scalar") return HeadKind::scalar_regression;
  if (s == "dense_per_pixel" || s == "dense") return HeadKind::dense_per_pixel;
  throw std::invalid_argument("unknown head '" + s + "'");
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in) {
  using detail::ConfigSection;
  std::vector<ConfigSection> sections;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = detail::strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(detail::line_prefix(lineno) + "unterminated section header");
      const auto name = detail::strip(line.substr(1, line.size() - 2));
      if (name != "network" && name != "layer" && name != "skip" && name != "train") {
        throw ConfigError(detail::line_prefix(lineno) + "unknown section [" + name + "]");
      }
      if ((name == "network" || name == "train")) {
        for (const auto& s : sections)
          if (s.name == name) throw ConfigError(detail::line_prefix(lineno) + "duplicate section [" + name + "]");
      }
      sections.push_back({name, lineno, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(detail::line_prefix(lineno) + "expected key = value");
    if (sections.empty()) throw ConfigError(detail::line_prefix(lineno) + "key outside of any section");
    const auto key = detail::strip(line.substr(0, eq)), value = detail::strip(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(detail::line_prefix(lineno) + "empty key");
    if (!sections.back().entries.emplace(key, detail::ConfigEntry{value, lineno}).second) {
      throw ConfigError(detail::line_prefix(lineno) + "duplicate key '" + key + "'");
    }
  }

  RunConfig cfg;
  const ConfigSection empty{"network", 0, {}};
  const ConfigSection* net_section = &empty;
  for (const auto& s : sections)
    if (s.name == "network") net_section = &s;

  detail::SectionReader net(*net_section);
  const std::string preset = net.text("preset", "custom");
  const std::size_t width = net.size("width", 64), height = net.size("height", 64);
  const auto mode = net.parsed("mode", [](const std::string& s) { return parse_mode(s); });
  NetworkConfig& nc = cfg.network;
  if (preset == "table1") {
    nc = NetworkConfig::table1(width, height, mode.value_or(EdecMode::partial_weighted));
  } else if (preset == "table1_reduced") {
    nc = NetworkConfig::table1_reduced(width, height, net.size("divisor", 4), mode.value_or(EdecMode::partial_weighted));
  } else if (preset == "flow_unet") {
    nc = NetworkConfig::flow_unet(width, height, net.size("base_channels", 8), mode.value_or(EdecMode::streaming));
  } else if (preset == "custom") {
    nc.width = width;
    nc.height = height;
  } else {
    throw ConfigError(detail::line_prefix(net_section->entries.at("preset").line) + "unknown preset '" + preset + "'");
  }
  nc.in_channels = net.size("in_channels", nc.in_channels);
  if (auto h = net.parsed("head", detail::parse_head)) nc.head.kind = *h;
  nc.head.dim = net.size("head_dim", nc.head.dim);
  nc.head.bias = net.boolean("head_bias", nc.head.bias);
  nc.head.output_scale = net.real("output_scale", nc.head.output_scale);
  nc.initial_gamma = net.real("initial_gamma", nc.initial_gamma);
  nc.seed = net.u64("seed", nc.seed);
  net.finish();

  for (const auto& s : sections) {
    if (s.name != "layer" && s.name != "skip") continue;
    if (preset != "custom") throw ConfigError(detail::line_prefix(s.line) + "[" + s.name + "] sections need preset = custom");
    detail::SectionReader r(s);
    if (s.name == "layer") {
      LayerSpec l;
      l.kernel = r.size("kernel", l.kernel);
      l.channels = r.size("channels", l.channels);
      l.stride = r.size("stride", l.stride);
      l.upsample = r.size("upsample", l.upsample);
      l.mode = r.parsed("mode", [](const std::string& v) { return parse_mode(v); }).value_or(mode.value_or(l.mode));
      l.activation = r.parsed("activation", detail::parse_activation).value_or(l.activation);
      l.emits_flow = r.boolean("emits_flow", l.emits_flow);
      nc.layers.push_back(l);
    } else {
      Skip sk;
      if (!r.has("from") || !r.has("to")) throw ConfigError(detail::line_prefix(s.line) + "[skip] needs from and to");
      sk.from = r.size("from", 0);
      sk.to = r.size("to", 0);
      nc.skips.push_back(sk);
    }
    r.finish();
  }

  for (const auto& s : sections) {
    if (s.name != "train") continue;
    detail::SectionReader r(s);
    auto& t = cfg.train;
    t.epochs = r.size("epochs", t.epochs);
    t.batch_size = r.size("batch_size", t.batch_size);
    t.learning_rate = r.real("learning_rate", t.learning_rate);
    t.seed = r.u64("seed", t.seed);
    if (r.has("settle_ms") && r.has("settle_us")) throw ConfigError(detail::line_prefix(s.line) + "give settle_ms or settle_us, not both");
    if (r.has("settle_ms")) t.settle = Micros(static_cast<std::int64_t>(r.size("settle_ms", 0) * 1000));
    if (r.has("settle_us")) t.settle = Micros(static_cast<std::int64_t>(r.size("settle_us", 0)));
    r.finish();
    if (t.batch_size == 0) throw ConfigError(detail::line_prefix(s.line) + "batch_size must be positive");
  }

  try {
    nc.resolve();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// Fully expanded form (preset = custom) that parses back to an equal config.
inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17);
  const auto& n = cfg.network;
  os << "[network]\npreset = custom\n";
  os << "width = " << n.width << "\nheight = " << n.height << "\nin_channels = " << n.in_channels << "\n";
  os << "head = " << to_string(n.head.kind) << "\nhead_dim = " << n.head.dim << "\n";
  os << "head_bias = " << (n.head.bias ? "true" : "false") << "\n";
  os << "output_scale = " << n.head.output_scale << "\n";
  os << "initial_gamma = " << n.initial_gamma << "\nseed = " << n.seed << "\n";
  for (const auto& l : n.layers) {
    os << "\n[layer]\nkernel = " << l.kernel << "\nchannels = " << l.channels << "\nstride = " << l.stride
       << "\nupsample = " << l.upsample << "\nmode = " << to_string(l.mode) << "\nactivation = " << to_string(l.activation)
       << "\nemits_flow = " << (l.emits_flow ? "true" : "false") << "\n";
  }
  for (const auto& s : n.skips) os << "\n[skip]\nfrom = " << s.from << "\nto = " << s.to << "\n";
  const auto& t = cfg.train;
  os << "\n[train]\nepochs = " << t.epochs << "\nbatch_size = " << t.batch_size << "\nlearning_rate = " << t.learning_rate
     << "\nseed = " << t.seed << "\n";
  if (t.settle) os << "settle_us = " << t.settle->count() << "\n";
  return os.str();
}

}  // namespace edenn
