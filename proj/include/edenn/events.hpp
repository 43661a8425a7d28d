#pragma once

// Event streams and their quantisation into binary event volumes.
//
// CSV format: optional header line, then one event per line `t_us,x,y,p`
// with p in {1, -1}.
// Binary format (little endian): 16-byte header "EVT0", uint16 W, uint16 H,
// 8 zero bytes; then 13-byte records uint64 t_us, uint16 x, uint16 y, int8 p.

#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "edenn/tensor.hpp"

namespace edenn {

using Micros = std::chrono::microseconds;

struct Event {
  std::int64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;

  bool operator==(const Event&) const = default;
};

struct Geometry {
  std::uint16_t width = 0;
  std::uint16_t height = 0;

  bool contains(const Event& e) const { return e.x < width && e.y < height; }
  bool operator==(const Geometry&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EventFormat { csv, binary };

/// Time window split into equal bins. The window is half open:
/// t0 <= t < t0 + length.
struct WindowSpec {
  Micros length{48'000};
  Micros bin_width{2'000};
  Micros t0{0};

  WindowSpec() = default;
  WindowSpec(Micros length_, Micros bin_width_, Micros t0_ = Micros{0})
      : length(length_), bin_width(bin_width_), t0(t0_) {
    validate();
  }

  void validate() const {
    if (bin_width.count() <= 0) throw std::invalid_argument("window bin width must be positive");
    if (length.count() <= 0 || length.count() % bin_width.count() != 0) {
      throw std::invalid_argument("window length " + std::to_string(length.count()) +
                                  "us is not a positive multiple of bin width " +
                                  std::to_string(bin_width.count()) + "us");
    }
  }

  std::size_t bins() const { return static_cast<std::size_t>(length / bin_width); }
};

template <typename T = double>
struct EventVolume {
  Tensor<T> tensor;  // (W, H, 2, T); channel 0 is p = +1, channel 1 is p = -1
  WindowSpec spec;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename Int>
bool parse_int(std::string_view field, Int& out) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc{} && ptr == field.data() + field.size() && !field.empty();
}

inline void check_bounds(const Event& e, const Geometry& g, std::size_t index) {
  if (!g.contains(e)) {
    throw ParseError("event " + std::to_string(index) + " at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                     ") lies outside the " + std::to_string(g.width) + "x" + std::to_string(g.height) + " sensor");
  }
}

template <typename Int>
void put_le(std::ostream& os, Int v) {
  using U = std::make_unsigned_t<Int>;
  auto u = static_cast<U>(v);
  std::array<char, sizeof(Int)> buf{};
  for (std::size_t i = 0; i < sizeof(Int); ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename Int>
Int get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<Int>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(Int); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return static_cast<Int>(u);
}

constexpr std::size_t kBinaryHeaderSize = 16;
constexpr std::size_t kBinaryRecordSize = 13;

}  // namespace detail

inline std::vector<Event> parse_events_csv(std::istream& in, const Geometry& geometry) {
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    if (line_no == 1 && !text.empty() && (std::isalpha(static_cast<unsigned char>(text.front())) != 0)) continue;

    std::array<std::string_view, 4> fields;
    std::size_t n = 0, start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
      if (i == text.size() || text[i] == ',') {
        if (n == fields.size()) {
          n = fields.size() + 1;
          break;
        }
        fields[n++] = text.substr(start, i - start);
        start = i + 1;
      }
    }
    Event e;
    long long p = 0;
    if (n != 4 || !detail::parse_int(fields[0], e.t_us) || !detail::parse_int(fields[1], e.x) ||
        !detail::parse_int(fields[2], e.y) || !detail::parse_int(fields[3], p)) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed event record '" + std::string(text) + "'");
    }
    if (e.t_us < 0) throw ParseError("line " + std::to_string(line_no) + ": negative timestamp");
    if (p != 1 && p != -1) throw ParseError("line " + std::to_string(line_no) + ": polarity must be 1 or -1");
    e.p = static_cast<std::int8_t>(p);
    detail::check_bounds(e, geometry, events.size());
    events.push_back(e);
  }
  return events;
}

/// Reads the sensor geometry stored in a binary event file header.
inline Geometry read_binary_geometry(std::string_view bytes) {
  if (bytes.size() < detail::kBinaryHeaderSize || bytes.substr(0, 4) != "EVT0") {
    throw ParseError("offset 0: missing EVT0 header");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  return Geometry{detail::get_le<std::uint16_t>(p + 4), detail::get_le<std::uint16_t>(p + 6)};
}

inline std::vector<Event> parse_events_binary(std::string_view bytes, const Geometry& geometry) {
  const Geometry stored = read_binary_geometry(bytes);
  if (stored != geometry) {
    throw ParseError("offset 4: file geometry " + std::to_string(stored.width) + "x" + std::to_string(stored.height) +
                     " does not match declared " + std::to_string(geometry.width) + "x" +
                     std::to_string(geometry.height));
  }
  const std::size_t body = bytes.size() - detail::kBinaryHeaderSize;
  if (body % detail::kBinaryRecordSize != 0) {
    const std::size_t bad = detail::kBinaryHeaderSize + body / detail::kBinaryRecordSize * detail::kBinaryRecordSize;
    throw ParseError("offset " + std::to_string(bad) + ": truncated event record");
  }
  std::vector<Event> events;
  events.reserve(body / detail::kBinaryRecordSize);
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t off = detail::kBinaryHeaderSize; off < bytes.size(); off += detail::kBinaryRecordSize) {
    const unsigned char* r = base + off;
    const auto t = detail::get_le<std::uint64_t>(r);
    Event e;
    e.x = detail::get_le<std::uint16_t>(r + 8);
    e.y = detail::get_le<std::uint16_t>(r + 10);
    e.p = static_cast<std::int8_t>(r[12]);
    if (t > static_cast<std::uint64_t>(INT64_MAX)) {
      throw ParseError("offset " + std::to_string(off) + ": timestamp out of range");
    }
    e.t_us = static_cast<std::int64_t>(t);
    if (e.p != 1 && e.p != -1) throw ParseError("offset " + std::to_string(off + 12) + ": polarity must be 1 or -1");
    detail::check_bounds(e, geometry, events.size());
    events.push_back(e);
  }
  return events;
}

inline std::vector<Event> parse_events(std::istream& in, EventFormat format, const Geometry& geometry) {
  if (format == EventFormat::csv) return parse_events_csv(in, geometry);
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_events_binary(bytes, geometry);
}

inline void write_events_csv(std::ostream& os, const std::vector<Event>& events) {
  for (const auto& e : events) os << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
}

inline void write_events_binary(std::ostream& os, const std::vector<Event>& events, const Geometry& geometry) {
  os.write("EVT0", 4);
  detail::put_le<std::uint16_t>(os, geometry.width);
  detail::put_le<std::uint16_t>(os, geometry.height);
  detail::put_le<std::uint64_t>(os, 0);
  for (const auto& e : events) {
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e.t_us));
    detail::put_le<std::uint16_t>(os, e.x);
    detail::put_le<std::uint16_t>(os, e.y);
    detail::put_le<std::int8_t>(os, e.p);
  }
}

/// Indicator volume: cell (x, y, chan(p), bin) is 1 iff at least one event
/// lands there. Events outside [t0, t0 + length) are ignored.
template <typename T = double>
EventVolume<T> build_event_volume(const std::vector<Event>& events, const Geometry& geometry, const WindowSpec& spec) {
  spec.validate();
  const std::size_t TT = spec.bins();
  EventVolume<T> vol{Tensor<T>({geometry.width, geometry.height, 2, TT}), spec};
  const std::int64_t t0 = spec.t0.count(), len = spec.length.count(), bw = spec.bin_width.count();
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (!geometry.contains(e)) throw std::out_of_range("event " + std::to_string(i) + " outside sensor geometry");
    const std::int64_t dt = e.t_us - t0;
    if (dt < 0 || dt >= len) continue;
    const std::size_t bin = static_cast<std::size_t>(dt / bw);
    const std::size_t chan = e.p > 0 ? 0 : 1;
    vol.tensor(e.x, e.y, chan, bin) = T{1};
  }
  return vol;
}

/// First-layer observation mask (W, H, T): 1 where either polarity fired.
/// Both polarities in one bin still give 1.
template <typename T>
Tensor<T> initial_mask(const EventVolume<T>& volume) {
  const auto& v = volume.tensor;
  const std::size_t W = v.dim(0), H = v.dim(1), TT = v.dim(3);
  Tensor<T> mask({W, H, TT});
  for (std::size_t x = 0; x < W; ++x)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t t = 0; t < TT; ++t) mask(x, y, t) = std::min(T{1}, v(x, y, 0, t) + v(x, y, 1, t));
  return mask;
}

}  // namespace edenn
