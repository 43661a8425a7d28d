#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

#include "edenn/events.hpp"
#include "edenn/ops.hpp"
#include "edenn/random.hpp"

using namespace edenn;

namespace {
std::vector<Event> random_events(Rng& rng, std::size_t n, Geometry g, std::int64_t t_max) {
  std::vector<Event> ev(n);
  for (auto& e : ev) {
    e.t_us = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t_max)));
    e.x = static_cast<std::uint16_t>(rng.below(g.width));
    e.y = static_cast<std::uint16_t>(rng.below(g.height));
    e.p = rng.below(2) ? 1 : -1;
  }
  return ev;
}
}  // namespace

TEST(ParseEvents, EmptyCsv) {
  std::istringstream in("");
  EXPECT_TRUE(parse_events(in, EventFormat::csv, {8, 8}).empty());
}

TEST(ParseEvents, CsvRecord) {
  std::istringstream in("t_us,x,y,p\n1000,3,2,1\n1500, 4 ,1,-1\n");
  auto ev = parse_events(in, EventFormat::csv, {8, 8});
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0], (Event{1000, 3, 2, 1}));
  EXPECT_EQ(ev[1], (Event{1500, 4, 1, -1}));
}

TEST(ParseEvents, CsvErrorsNameTheLine) {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      parse_events(in, EventFormat::csv, {8, 8});
    } catch (const ParseError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  EXPECT_TRUE(fails_with("1,1,1,1\n2,1,x,1\n", "line 2"));
  EXPECT_TRUE(fails_with("1,1,1\n", "line 1"));
  EXPECT_TRUE(fails_with("1,1,1,0\n", "polarity"));
  EXPECT_TRUE(fails_with("-4,1,1,1\n", "negative"));
  EXPECT_TRUE(fails_with("1,1,1,1\n2,9,1,1\n", "event 1"));
  EXPECT_TRUE(fails_with("1,1,1,1,1\n", "line 1"));
}

TEST(ParseEvents, BinaryRoundTrip) {
  Rng rng(5);
  const Geometry g{31, 17};
  auto ev = random_events(rng, 200, g, 1'000'000);
  std::ostringstream os;
  write_events_binary(os, ev, g);
  const std::string file = os.str();
  EXPECT_EQ(file.size(), 16u + 13u * ev.size());

  std::istringstream in(file);
  auto parsed = parse_events(in, EventFormat::binary, g);
  EXPECT_EQ(parsed, ev);
  std::ostringstream again;
  write_events_binary(again, parsed, g);
  EXPECT_EQ(again.str(), file);
  EXPECT_EQ(read_binary_geometry(file), g);
}

TEST(ParseEvents, BinaryErrors) {
  const Geometry g{4, 4};
  std::ostringstream os;
  write_events_binary(os, {{10, 1, 1, 1}}, g);
  const auto file = os.str();
  EXPECT_THROW(parse_events_binary(file.substr(0, file.size() - 1), g), ParseError);
  EXPECT_THROW(parse_events_binary("EVX0" + file.substr(4), g), ParseError);
  EXPECT_THROW(parse_events_binary(file, Geometry{2, 2}), ParseError);
  auto bad = file;
  bad[16 + 8] = 7;  // x = 7
  EXPECT_THROW(parse_events_binary(bad, g), ParseError);
}

TEST(WindowSpec, Validation) {
  EXPECT_THROW(WindowSpec(Micros{5000}, Micros{2000}), std::invalid_argument);
  EXPECT_THROW(WindowSpec(Micros{0}, Micros{2000}), std::invalid_argument);
  EXPECT_EQ(WindowSpec(Micros{48'000}, Micros{2'000}).bins(), 24u);
  EXPECT_EQ(WindowSpec(Micros{100'000}, Micros{2'000}).bins(), 50u);
}

TEST(EventVolume, NoEventsGivesZeros) {
  auto vol = build_event_volume<double>({}, {4, 3}, WindowSpec(Micros{10'000}, Micros{2'000}));
  EXPECT_EQ(vol.tensor.shape(), (Shape{4, 3, 2, 5}));
  for (auto v : vol.tensor.values()) EXPECT_EQ(v, 0.0);
}

TEST(EventVolume, SingleEventBin) {
  const WindowSpec spec(Micros{10'000}, Micros{2'000}, Micros{1'000});
  auto vol = build_event_volume<double>({{1'000 + 3'000, 2, 1, 1}}, {4, 3}, spec);
  EXPECT_EQ(vol.tensor(2, 1, 0, 1), 1.0);
  EXPECT_EQ(sum(vol.tensor), 1.0);
}

TEST(EventVolume, HalfOpenWindowAndDuplicates) {
  const WindowSpec spec(Micros{4'000}, Micros{2'000});
  auto vol = build_event_volume<double>({{0, 0, 0, -1}, {1, 0, 0, -1}, {4'000, 1, 1, 1}, {3'999, 1, 1, 1}}, {2, 2}, spec);
  EXPECT_EQ(vol.tensor(0, 0, 1, 0), 1.0);  // two events, indicator stays 1
  EXPECT_EQ(vol.tensor(1, 1, 0, 1), 1.0);
  EXPECT_EQ(sum(vol.tensor), 2.0);          // t = 4000 excluded
}

TEST(EventVolume, MatchesSetMembershipOracle) {
  Rng rng(99);
  const Geometry g{9, 7};
  const WindowSpec spec(Micros{20'000}, Micros{2'000}, Micros{500});
  auto ev = random_events(rng, 1000, g, 25'000);
  auto vol = build_event_volume<double>(ev, g, spec);
  std::set<std::tuple<int, int, int, int>> present;
  for (const auto& e : ev) {
    if (e.t_us < 500 || e.t_us >= 20'500) continue;
    present.insert({e.x, e.y, e.p > 0 ? 0 : 1, static_cast<int>((e.t_us - 500) / 2'000)});
  }
  for (int x = 0; x < 9; ++x)
    for (int y = 0; y < 7; ++y)
      for (int c = 0; c < 2; ++c)
        for (int t = 0; t < 10; ++t)
          EXPECT_EQ(vol.tensor(x, y, c, t), present.count({x, y, c, t}) ? 1.0 : 0.0);
}

TEST(EventVolume, PermutationInvariant) {
  Rng rng(8);
  const Geometry g{6, 6};
  const WindowSpec spec(Micros{12'000}, Micros{3'000});
  auto ev = random_events(rng, 300, g, 12'000);
  auto a = build_event_volume<double>(ev, g, spec);
  std::reverse(ev.begin(), ev.end());
  std::rotate(ev.begin(), ev.begin() + 77, ev.end());
  EXPECT_EQ(build_event_volume<double>(ev, g, spec).tensor, a.tensor);
}

TEST(EventVolume, ShiftByWholeBinsShiftsAlongTime) {
  Rng rng(12);
  const Geometry g{5, 4};
  const WindowSpec spec(Micros{16'000}, Micros{2'000});
  auto ev = random_events(rng, 200, g, 16'000);
  auto shifted = ev;
  for (auto& e : shifted) e.t_us += 3 * 2'000;
  auto a = build_event_volume<double>(ev, g, spec).tensor;
  auto b = build_event_volume<double>(shifted, g, spec).tensor;
  for (std::size_t x = 0; x < 5; ++x)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(b(x, y, c, t), t >= 3 ? a(x, y, c, t - 3) : 0.0);
}

TEST(InitialMask, SupportOfSummedPolarities) {
  const WindowSpec spec(Micros{4'000}, Micros{2'000});
  const Geometry g{3, 3};
  EXPECT_EQ(sum(initial_mask(build_event_volume<double>({}, g, spec))), 0.0);
  auto one = initial_mask(build_event_volume<double>({{100, 1, 2, 1}}, g, spec));
  EXPECT_EQ(one(1, 2, 0), 1.0);
  EXPECT_EQ(sum(one), 1.0);
  auto both = initial_mask(build_event_volume<double>({{100, 1, 2, 1}, {200, 1, 2, -1}}, g, spec));
  EXPECT_EQ(both(1, 2, 0), 1.0);
  EXPECT_EQ(sum(both), 1.0);

  Rng rng(3);
  auto ev = random_events(rng, 40, g, 4'000);
  auto vol = build_event_volume<double>(ev, g, spec);
  auto m = initial_mask(vol);
  for (std::size_t x = 0; x < 3; ++x)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t t = 0; t < 2; ++t)
        EXPECT_EQ(m(x, y, t), vol.tensor(x, y, 0, t) + vol.tensor(x, y, 1, t) > 0 ? 1.0 : 0.0);
}
