#pragma once

// Synthetic event streams with exact ground truth.
//
// Both generators render an analytic log-intensity field (bright Gaussian
// blobs on a dark background) at a few sub-steps per bin. Every pixel keeps a
// reference log intensity; whenever the current value moves a full contrast
// threshold away from it, the pixel fires an event of that sign and the
// reference steps by one threshold.
//
//  - rotating_pattern: the blob pattern rotates about the image centre with
//    angular velocity w_z(t) (degrees/s, positive turns +x towards +y) while
//    the x and y axes contribute small image-plane shifts through a pinhole of
//    focal length `focal_px`. Ground truth per bin: the bin-averaged (w_x,
//    w_y, w_z).
//  - translating_edges: a periodic blob texture translates with a piecewise
//    constant flow in pixels per frame (one frame = one bin). On top of it,
//    `patches` brighter rectangular patches, each with its own texture, move
//    with their own flows (wrapping around the frame, later patches in front).
//    Ground truth per pixel and bin: (u, v) of whatever layer covers the pixel
//    at the bin centre; valid pixels are the ones that fired in that bin.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edenn/events.hpp"
#include "edenn/random.hpp"
#include "edenn/tensor.hpp"
#include "edenn/train.hpp"

namespace edenn {

enum class Scenario { rotating_pattern, translating_edges };

inline const char* to_string(Scenario s) { return s == Scenario::rotating_pattern ? "rotating" : "translating"; }

inline Scenario parse_scenario(const std::string& s) {
  if (s == "rotating" || s == "rotating_pattern") return Scenario::rotating_pattern;
  if (s == "translating" || s == "translating_edges" || s == "flow") return Scenario::translating_edges;
  throw std::invalid_argument("unknown scenario '" + s + "' (expected rotating or translating)");
}

struct SceneSpec {
  Scenario scenario = Scenario::rotating_pattern;
  Geometry geometry{32, 32};
  Micros duration{100'000};
  Micros bin_width{2'000};
  std::uint64_t seed = 1;

  std::size_t blobs = 24;
  double blob_sigma = 1.5;  // pixels
  double contrast_threshold = 0.2;
  std::size_t substeps = 4;  // field samples per bin

  // rotating_pattern
  double omega_max = 360.0;                  // peak |w_z|, degrees/s
  double out_of_plane = 0.2;                 // peak |w_x|, |w_y| as a fraction of omega_max
  double focal_px = 0.0;                     // 0: image width
  std::optional<std::array<double, 3>> omega_const;  // overrides the random profile
  bool reverse = false;                      // negates the angular velocity profile
  bool mirror = false;                       // reflects the pattern across the horizontal centre line

  // translating_edges
  double flow_max = 1.0;  // peak |flow| component, pixels/frame
  std::size_t flow_segments = 1;
  std::size_t patches = 1;                          // independently moving foreground patches
  std::optional<std::array<double, 2>> flow_const;  // whole scene moves rigidly with this flow

  std::size_t bins() const { return static_cast<std::size_t>(duration / bin_width); }
  double focal() const { return focal_px > 0.0 ? focal_px : static_cast<double>(geometry.width); }

  void validate() const {
    if (geometry.width < 4 || geometry.height < 4) throw std::invalid_argument("scene geometry must be at least 4x4");
    WindowSpec(duration, bin_width).validate();
    if (substeps == 0) throw std::invalid_argument("scene needs at least one sub-step per bin");
    if (!(contrast_threshold > 0.0)) throw std::invalid_argument("contrast threshold must be positive");
    if (!(blob_sigma > 0.0) || blobs == 0) throw std::invalid_argument("scene needs at least one blob of positive size");
    const double bound = std::min(geometry.width, geometry.height) / 4.0;
    if (scenario == Scenario::rotating_pattern) {
      if (!(std::abs(omega_max) <= 3600.0)) throw std::invalid_argument("omega_max must be within 3600 deg/s");
      if (omega_const) {
        for (double w : *omega_const)
          if (!(std::abs(w) <= 3600.0)) throw std::invalid_argument("angular velocity must be within 3600 deg/s");
      }
    } else {
      if (flow_segments == 0 || flow_segments > bins()) throw std::invalid_argument("flow segments must be in [1, bins]");
      const double peak = flow_const ? std::max(std::abs((*flow_const)[0]), std::abs((*flow_const)[1])) : flow_max;
      if (!(peak < bound)) {
        throw std::invalid_argument("flow magnitude must stay below min(W,H)/4 = " + std::to_string(bound) + " px/frame");
      }
    }
  }
};

/// Per-axis sinusoidal angular velocity, degrees/s.
struct AngularProfile {
  std::array<double, 3> amplitude{}, frequency{}, phase{}, offset{};

  double omega(std::size_t axis, double t_s) const {
    return offset[axis] + amplitude[axis] * std::sin(2.0 * std::numbers::pi * frequency[axis] * t_s + phase[axis]);
  }
  /// Integrated angle in degrees since t = 0.
  double angle(std::size_t axis, double t_s) const {
    double a = offset[axis] * t_s;
    if (frequency[axis] > 0.0) {
      const double w = 2.0 * std::numbers::pi * frequency[axis];
      a += amplitude[axis] / w * (std::cos(phase[axis]) - std::cos(w * t_s + phase[axis]));
    }
    return a;
  }
};

/// Piecewise-constant flow, pixels/frame, one value per segment.
struct FlowProfile {
  std::vector<std::array<double, 2>> segments;
  std::size_t bins_per_segment = 1;

  std::array<double, 2> flow_at_bin(std::size_t bin) const {
    return segments[std::min(segments.size() - 1, bin / bins_per_segment)];
  }
  /// Displacement in pixels after `frames` (fractional) frames.
  std::array<double, 2> displacement(double frames) const {
    std::array<double, 2> d{0.0, 0.0};
    double done = 0.0;
    for (std::size_t s = 0; s < segments.size() && done < frames; ++s) {
      const double len = s + 1 == segments.size() ? frames - done : std::min(frames - done, double(bins_per_segment));
      d[0] += segments[s][0] * len;
      d[1] += segments[s][1] * len;
      done += len;
    }
    return d;
  }
};

struct Blob {
  double x, y, amplitude;
};

/// One generated sample. gt is (3, T) degrees/s for rotating scenes and
/// (W, H, 2, T) pixels/frame for translating scenes.
struct LabelledSample {
  Scenario scenario = Scenario::rotating_pattern;
  Geometry geometry;
  WindowSpec window;
  std::vector<Event> events;
  Tensor<double> gt;
};

namespace detail {

inline std::vector<Blob> make_blobs(const SceneSpec& spec, Rng& rng, bool disk) {
  const double W = spec.geometry.width, H = spec.geometry.height;
  const double cx = (W - 1) / 2, cy = (H - 1) / 2, radius = 0.5 * std::hypot(W, H);
  std::vector<Blob> blobs;
  while (blobs.size() < spec.blobs) {
    Blob b{rng.uniform(0.0, W), rng.uniform(0.0, H), rng.uniform(0.5, 1.5)};
    if (disk) {
      b.x = rng.uniform(cx - radius, cx + radius);
      b.y = rng.uniform(cy - radius, cy + radius);
      if (std::hypot(b.x - cx, b.y - cy) > radius) continue;
    }
    blobs.push_back(b);
  }
  return blobs;
}

constexpr double kBackground = 0.1;

/// Runs the threshold-crossing event model over `bins * substeps` samples of
/// `log_field(t_seconds, out)`, which fills a W*H row-major (y outer) buffer.
template <typename Field>
std::vector<Event> emit_events(const SceneSpec& spec, Field&& log_field) {
  const std::size_t W = spec.geometry.width, H = spec.geometry.height, S = spec.substeps, TT = spec.bins();
  std::vector<double> ref(W * H), cur(W * H);
  log_field(0.0, ref);
  std::vector<Event> events;
  const double bin_us = static_cast<double>(spec.bin_width.count());
  for (std::size_t k = 0; k < TT * S; ++k) {
    const double t_us = (static_cast<double>(k) + 0.5) * bin_us / static_cast<double>(S);
    log_field(t_us * 1e-6, cur);
    const auto stamp = static_cast<std::int64_t>(std::floor(t_us));
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = y * W + x;
        while (cur[i] - ref[i] >= spec.contrast_threshold) {
          events.push_back({stamp, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 1});
          ref[i] += spec.contrast_threshold;
        }
        while (ref[i] - cur[i] >= spec.contrast_threshold) {
          events.push_back({stamp, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), -1});
          ref[i] -= spec.contrast_threshold;
        }
      }
  }
  return events;
}

}  // namespace detail

inline AngularProfile make_angular_profile(const SceneSpec& spec) {
  AngularProfile p;
  Rng rng(spec.seed ^ 0x5eedULL);
  const double sign = spec.reverse ? -1.0 : 1.0;
  if (spec.omega_const) {
    for (std::size_t a = 0; a < 3; ++a) p.offset[a] = sign * (*spec.omega_const)[a];
    return p;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    const double peak = a == 2 ? spec.omega_max : spec.omega_max * spec.out_of_plane;
    p.amplitude[a] = sign * rng.uniform(-peak, peak);
    p.frequency[a] = rng.uniform(2.0, 8.0);
    p.phase[a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return p;
}

/// Flow of layer `layer` (0 = background, 1.. = patches).
inline FlowProfile make_flow_profile(const SceneSpec& spec, std::size_t layer = 0) {
  FlowProfile p;
  p.bins_per_segment = (spec.bins() + spec.flow_segments - 1) / spec.flow_segments;
  if (spec.flow_const) {
    p.segments.assign(1, *spec.flow_const);
    p.bins_per_segment = spec.bins();
    return p;
  }
  Rng rng((spec.seed ^ 0xf10eULL) + 0x9e3779b97f4a7c15ULL * layer);
  for (std::size_t s = 0; s < spec.flow_segments; ++s)
    p.segments.push_back({rng.uniform(-spec.flow_max, spec.flow_max), rng.uniform(-spec.flow_max, spec.flow_max)});
  return p;
}

inline LabelledSample gen_angular(const SceneSpec& spec) {
  spec.validate();
  if (spec.scenario != Scenario::rotating_pattern) throw std::invalid_argument("gen_angular needs a rotating scene");
  Rng rng(spec.seed);
  auto blobs = detail::make_blobs(spec, rng, true);
  const std::size_t W = spec.geometry.width, H = spec.geometry.height, TT = spec.bins();
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  if (spec.mirror)
    for (auto& b : blobs) b.y = 2 * cy - b.y;
  const auto profile = make_angular_profile(spec);
  const double f = spec.focal(), deg = std::numbers::pi / 180.0;
  const double inv2s2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma), cutoff = 5.0 * spec.blob_sigma;

  auto field = [&](double t, std::vector<double>& out) {
    const double phi = profile.angle(2, t) * deg;
    // rotation about the camera x axis moves the image vertically, about y horizontally
    const double sx = f * std::tan(profile.angle(1, t) * deg), sy = f * std::tan(profile.angle(0, t) * deg);
    const double c = std::cos(phi), s = std::sin(phi);
    std::vector<std::array<double, 3>> placed;
    for (const auto& b : blobs) {
      const double dx = b.x - cx, dy = b.y - cy;
      placed.push_back({cx + c * dx - s * dy + sx, cy + s * dx + c * dy + sy, b.amplitude});
    }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double v = detail::kBackground;
        for (const auto& p : placed) {
          const double ex = static_cast<double>(x) - p[0], ey = static_cast<double>(y) - p[1];
          if (std::abs(ex) > cutoff || std::abs(ey) > cutoff) continue;
          v += p[2] * std::exp(-(ex * ex + ey * ey) * inv2s2);
        }
        out[y * W + x] = std::log(v);
      }
  };

  LabelledSample out{spec.scenario, spec.geometry, WindowSpec(spec.duration, spec.bin_width), {}, Tensor<double>({3, TT})};
  out.events = detail::emit_events(spec, field);
  const double bw = static_cast<double>(spec.bin_width.count()) * 1e-6;
  for (std::size_t t = 0; t < TT; ++t)
    for (std::size_t a = 0; a < 3; ++a)
      out.gt(a, t) = (profile.angle(a, (t + 1) * bw) - profile.angle(a, t * bw)) / bw;
  return out;
}

struct FlowPatch {
  double x, y, w, h;  // top-left corner and size at t = 0, pixels
  double base;        // flat intensity under the patch texture
};

inline LabelledSample gen_flow(const SceneSpec& spec) {
  spec.validate();
  if (spec.scenario != Scenario::translating_edges) throw std::invalid_argument("gen_flow needs a translating scene");
  Rng rng(spec.seed);
  const std::size_t W = spec.geometry.width, H = spec.geometry.height, TT = spec.bins(), L = 1 + spec.patches;
  const double Wd = static_cast<double>(W), Hd = static_cast<double>(H);
  std::vector<std::vector<Blob>> textures;
  std::vector<FlowProfile> profiles;
  std::vector<FlowPatch> patches;
  for (std::size_t l = 0; l < L; ++l) {
    textures.push_back(detail::make_blobs(spec, rng, false));
    profiles.push_back(make_flow_profile(spec, l));
    if (l > 0) {
      const double w = rng.uniform(0.25, 0.5) * Wd, h = rng.uniform(0.25, 0.5) * Hd;
      patches.push_back({rng.uniform(0.0, Wd), rng.uniform(0.0, Hd), w, h, rng.uniform(0.2, 0.4)});
    }
  }
  const double bin_s = static_cast<double>(spec.bin_width.count()) * 1e-6;
  const double inv2s2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma), cutoff = 5.0 * spec.blob_sigma;

  auto wrap = [](double d, double period) { return d - period * std::round(d / period); };
  auto wrap_pos = [](double d, double period) { return d - period * std::floor(d / period); };
  // topmost layer covering (x, y) given per-layer displacements
  auto cover = [&](double x, double y, const std::vector<std::array<double, 2>>& d) {
    for (std::size_t l = L - 1; l > 0; --l) {
      const auto& p = patches[l - 1];
      if (wrap_pos(x - p.x - d[l][0], Wd) < p.w && wrap_pos(y - p.y - d[l][1], Hd) < p.h) return l;
    }
    return std::size_t{0};
  };
  auto displacements = [&](double frames) {
    std::vector<std::array<double, 2>> d;
    for (const auto& p : profiles) d.push_back(p.displacement(frames));
    return d;
  };
  auto field = [&](double t, std::vector<double>& out) {
    const auto d = displacements(t / bin_s);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        const std::size_t l = cover(fx, fy, d);
        double v = l == 0 ? detail::kBackground : patches[l - 1].base;
        for (const auto& b : textures[l]) {
          const double ex = wrap(fx - d[l][0] - b.x, Wd);
          const double ey = wrap(fy - d[l][1] - b.y, Hd);
          if (std::abs(ex) > cutoff || std::abs(ey) > cutoff) continue;
          v += b.amplitude * std::exp(-(ex * ex + ey * ey) * inv2s2);
        }
        out[y * W + x] = std::log(v);
      }
  };

  LabelledSample out{spec.scenario, spec.geometry, WindowSpec(spec.duration, spec.bin_width), {}, Tensor<double>({W, H, 2, TT})};
  out.events = detail::emit_events(spec, field);
  for (std::size_t t = 0; t < TT; ++t) {
    const auto d = displacements(static_cast<double>(t) + 0.5);
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t y = 0; y < H; ++y) {
        const auto f = profiles[cover(static_cast<double>(x), static_cast<double>(y), d)].flow_at_bin(t);
        out.gt(x, y, 0, t) = f[0];
        out.gt(x, y, 1, t) = f[1];
      }
  }
  return out;
}

inline LabelledSample generate(const SceneSpec& spec) {
  return spec.scenario == Scenario::rotating_pattern ? gen_angular(spec) : gen_flow(spec);
}

/// Training form of a labelled sample: indicator volume, first-layer mask,
/// and a target/valid pair as the network losses expect them.
template <typename T = double>
Sample<T> to_sample(const LabelledSample& ls) {
  auto vol = build_event_volume<T>(ls.events, ls.geometry, ls.window);
  Sample<T> s;
  s.mask = initial_mask(vol);
  s.bin_width = ls.window.bin_width;
  const std::size_t TT = ls.window.bins();
  if (ls.scenario == Scenario::rotating_pattern) {
    s.target = ls.gt.cast<T>();
    s.valid = Tensor<T>::scalar(T{1});
  } else {
    if (ls.gt.shape() != Shape{ls.geometry.width, ls.geometry.height, 2, TT}) throw ShapeError("flow ground truth shape");
    s.target = ls.gt.cast<T>();
    s.valid = s.mask;
  }
  s.volume = std::move(vol.tensor);
  return s;
}

/// Ground-truth sidecar: a header line, then one "bin t_start_us wx wy wz"
/// line per bin (rotating) or one "bin t_start_us x y u v" line per pixel and
/// bin (translating).
inline void write_ground_truth(std::ostream& os, const LabelledSample& ls) {
  os << std::setprecision(17);
  auto start = [&](std::size_t t) { return (ls.window.t0 + ls.window.bin_width * static_cast<std::int64_t>(t)).count(); };
  if (ls.scenario == Scenario::rotating_pattern) {
    os << "# bin t_us wx_dps wy_dps wz_dps\n";
    for (std::size_t t = 0; t < ls.gt.dim(1); ++t) {
      os << t << ' ' << start(t);
      for (std::size_t d = 0; d < ls.gt.dim(0); ++d) os << ' ' << ls.gt(d, t);
      os << '\n';
    }
    return;
  }
  os << "# bin t_us x y u_px v_px\n";
  for (std::size_t t = 0; t < ls.gt.dim(3); ++t)
    for (std::size_t y = 0; y < ls.gt.dim(1); ++y)
      for (std::size_t x = 0; x < ls.gt.dim(0); ++x)
        os << t << ' ' << start(t) << ' ' << x << ' ' << y << ' ' << ls.gt(x, y, 0, t) << ' ' << ls.gt(x, y, 1, t) << '\n';
}

inline Tensor<double> read_ground_truth(std::istream& in, std::size_t dim, std::size_t bins) {
  Tensor<double> gt({dim, bins});
  std::vector<bool> seen(bins, false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t bin = 0;
    long long t_us = 0;
    if (!(ss >> bin >> t_us) || bin >= bins) throw ParseError("ground truth line " + std::to_string(lineno) + ": bad bin");
    for (std::size_t d = 0; d < dim; ++d)
      if (!(ss >> gt(d, bin))) throw ParseError("ground truth line " + std::to_string(lineno) + ": expected " + std::to_string(dim) + " values");
    seen[bin] = true;
  }
  for (std::size_t t = 0; t < bins; ++t)
    if (!seen[t]) throw ParseError("ground truth missing bin " + std::to_string(t));
  return gt;
}

/// Per-pixel flow sidecar into a (W, H, 2, T) tensor; every pixel of every
/// bin must appear.
inline Tensor<double> read_flow_ground_truth(std::istream& in, const Geometry& geometry, std::size_t bins) {
  const std::size_t W = geometry.width, H = geometry.height;
  Tensor<double> gt({W, H, 2, bins});
  std::vector<bool> seen(W * H * bins, false);
  std::size_t count = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t bin = 0, x = 0, y = 0;
    long long t_us = 0;
    double u = 0, v = 0;
    if (!(ss >> bin >> t_us >> x >> y >> u >> v) || bin >= bins || x >= W || y >= H) {
      throw ParseError("ground truth line " + std::to_string(lineno) + ": expected bin t_us x y u v inside the window");
    }
    gt(x, y, 0, bin) = u;
    gt(x, y, 1, bin) = v;
    const std::size_t key = (bin * H + y) * W + x;
    if (!seen[key]) ++count;
    seen[key] = true;
  }
  if (count != seen.size()) throw ParseError("ground truth covers " + std::to_string(count) + " of " + std::to_string(seen.size()) + " pixel-bins");
  return gt;
}

/// A generated dataset on disk: manifest.txt plus one event file and one
/// ground-truth sidecar per sample.
struct DatasetManifest {
  Scenario scenario = Scenario::rotating_pattern;
  Geometry geometry;
  Micros duration{100'000};
  Micros bin_width{2'000};
  std::uint64_t seed = 1;
  EventFormat format = EventFormat::csv;
  std::vector<std::pair<std::string, std::string>> files;  // events, ground truth

  std::size_t bins() const { return static_cast<std::size_t>(duration / bin_width); }
};

inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << "scenario=" << to_string(m.scenario) << "\n";
  os << "width=" << m.geometry.width << "\nheight=" << m.geometry.height << "\n";
  os << "duration_us=" << m.duration.count() << "\nbin_width_us=" << m.bin_width.count() << "\n";
  os << "bins=" << m.bins() << "\nseed=" << m.seed << "\n";
  os << "format=" << (m.format == EventFormat::csv ? "csv" : "binary") << "\n";
  os << "samples=" << m.files.size() << "\n";
  for (const auto& [ev, gt] : m.files) os << "sample=" << ev << ' ' << gt << "\n";
}

inline DatasetManifest read_manifest(std::istream& in) {
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("manifest line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "sample") {
      std::istringstream ss(value);
      std::string ev, gt;
      if (!(ss >> ev >> gt)) throw ParseError("manifest line " + std::to_string(lineno) + ": sample needs two files");
      m.files.emplace_back(ev, gt);
    } else {
      kv[key] = value;
    }
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("manifest missing ") + key);
    return it->second;
  };
  try {
    m.scenario = parse_scenario(need("scenario"));
    m.geometry = {static_cast<std::uint16_t>(std::stoul(need("width"))), static_cast<std::uint16_t>(std::stoul(need("height")))};
    m.duration = Micros(std::stoll(need("duration_us")));
    m.bin_width = Micros(std::stoll(need("bin_width_us")));
    m.seed = std::stoull(need("seed"));
  } catch (const std::logic_error& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  const auto& fmt = need("format");
  if (fmt != "csv" && fmt != "binary") throw ParseError("manifest: unknown format " + fmt);
  m.format = fmt == "csv" ? EventFormat::csv : EventFormat::binary;
  return m;
}

/// Writes `count` samples generated with seeds seed, seed+1, ... into `dir`.
inline DatasetManifest write_dataset(const std::filesystem::path& dir, SceneSpec spec, std::size_t count, EventFormat format) {
  std::filesystem::create_directories(dir);
  DatasetManifest m{spec.scenario, spec.geometry, spec.duration, spec.bin_width, spec.seed, format, {}};
  const std::uint64_t base = spec.seed;
  for (std::size_t i = 0; i < count; ++i) {
    spec.seed = base + i;
    const auto ls = generate(spec);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    const std::string ev = std::string(name) + (format == EventFormat::csv ? ".csv" : ".evt");
    const std::string gt = std::string(name) + ".gt";
    std::ofstream evf(dir / ev, std::ios::binary), gtf(dir / gt, std::ios::binary);
    if (!evf || !gtf) throw std::runtime_error("cannot write into " + dir.string());
    if (format == EventFormat::csv) {
      write_events_csv(evf, ls.events);
    } else {
      write_events_binary(evf, ls.events, ls.geometry);
    }
    write_ground_truth(gtf, ls);
    m.files.emplace_back(ev, gt);
  }
  std::ofstream mf(dir / "manifest.txt", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write manifest into " + dir.string());
  write_manifest(mf, m);
  return m;
}

inline std::vector<LabelledSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) throw std::runtime_error("no manifest.txt in " + dir.string());
  const auto m = read_manifest(mf);
  std::vector<LabelledSample> out;
  for (const auto& [ev, gt] : m.files) {
    std::ifstream evf(dir / ev, std::ios::binary), gtf(dir / gt);
    if (!evf || !gtf) throw std::runtime_error("cannot read sample " + ev);
    LabelledSample ls{m.scenario, m.geometry, WindowSpec(m.duration, m.bin_width), {}, {}};
    try {
      ls.events = parse_events(evf, m.format, m.geometry);
      ls.gt = m.scenario == Scenario::rotating_pattern ? read_ground_truth(gtf, 3, m.bins())
                                                       : read_flow_ground_truth(gtf, m.geometry, m.bins());
    } catch (const std::exception& e) {
      throw ParseError(ev + ": " + e.what());
    }
    out.push_back(std::move(ls));
  }
  return out;
}

template <typename T = double>
Dataset<T> to_dataset(const std::vector<LabelledSample>& samples) {
  Dataset<T> d;
  for (const auto& s : samples) d.push_back(to_sample<T>(s));
  return d;
}

}  // namespace edenn
