#pragma once

// Checkpoint layout, all integers little-endian:
//
//   8 bytes   magic "EDNNCKPT"
//   u32       version (1)
//   u32       config length N, then N bytes of serialized config text
//   u32       parameter count P
//   P times:  u32 name length, name bytes,
//             u32 rank, rank x u32 dims,
//             prod(dims) x f64 values (IEEE 754, little-endian)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "edenn/config.hpp"
#include "edenn/network.hpp"

namespace edenn {

inline constexpr char kCheckpointMagic[8] = {'E', 'D', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint64_t get_bytes(std::istream& in, int n, const char* what) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), n)) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in, const char* what) { return static_cast<std::uint32_t>(get_bytes(in, 4, what)); }

inline std::string get_string(std::istream& in, std::uint32_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(std::ostream& os, const Network<T>& net, const TrainConfig& train = {}) {
  const std::string config = serialize_config({net.config(), train});
  os.write(kCheckpointMagic, 8);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto& params = net.parameters();
  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = net.parameter_names()[i];
    const auto& v = params[i].value();
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(v.rank()));
    for (auto d : v.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (auto x : v.values()) detail::put_f64(os, static_cast<double>(x));
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

template <typename T = double>
struct LoadedCheckpoint {
  Network<T> network;
  RunConfig config;
};

/// Rebuilds the network from the stored config and overwrites every
/// parameter; names and shapes must match what the config builds.
template <typename T = double>
LoadedCheckpoint<T> load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = detail::get_u32(in, "version");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto config_len = detail::get_u32(in, "config length");
  const auto text = detail::get_string(in, config_len, "config");
  RunConfig cfg;
  try {
    cfg = parse_config(text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  LoadedCheckpoint<T> out{Network<T>(cfg.network), cfg};
  auto& params = out.network.parameters();
  const auto count = detail::get_u32(in, "parameter count");
  if (count != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(count) + " parameters, config builds " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto name = detail::get_string(in, detail::get_u32(in, "name length"), "name");
    if (name != out.network.parameter_names()[i]) {
      throw CheckpointError("checkpoint parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                            out.network.parameter_names()[i] + "'");
    }
    const auto rank = detail::get_u32(in, "rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get_u32(in, "dims"));
    auto& value = params[i].mutable_value();
    if (shape != value.shape()) {
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " + to_string(shape) + ", config expects " +
                            to_string(value.shape()));
    }
    for (auto& x : value.values()) x = static_cast<T>(std::bit_cast<double>(detail::get_bytes(in, 8, name.c_str())));
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const Network<T>& net, const TrainConfig& train = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  save_checkpoint(os, net, train);
}

template <typename T = double>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return load_checkpoint<T>(in);
}

}  // namespace edenn
