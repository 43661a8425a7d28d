// edenn: generate synthetic event data, train, evaluate, stream and benchmark
// EDeC networks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <regex>
#include <string>

#include "edenn/edenn.hpp"

namespace fs = std::filesystem;
using namespace edenn;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Micros parse_duration(const std::string& s) {
  static const std::regex re(R"(^\s*(\d+)\s*(us|ms|s)\s*$)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("bad duration '" + s + "' (expected e.g. 100ms, 2000us, 1s)");
  const long long v = std::stoll(m[1]);
  if (m[2] == "s") return Micros(v * 1'000'000);
  if (m[2] == "ms") return Micros(v * 1'000);
  return Micros(v);
}

Geometry parse_size(const std::string& s) {
  static const std::regex re(R"(^(\d+)x(\d+)$)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("bad size '" + s + "' (expected WxH)");
  const auto w = std::stoul(m[1]), h = std::stoul(m[2]);
  if (w == 0 || h == 0 || w > 65535 || h > 65535) throw UsageError("size out of range: " + s);
  return {static_cast<std::uint16_t>(w), static_cast<std::uint16_t>(h)};
}

void print_metrics(std::ostream& os, const EvalResult& r, std::size_t samples) {
  os << std::setprecision(10);
  os << "samples " << samples << "\n";
  os << "loss " << r.loss << "\n";
  if (r.kind == HeadKind::scalar_regression) {
    os << "rmse " << r.rmse << "\n";
    os << "baseline_rmse " << r.baseline_rmse << "\n";
    os << "relative_error " << r.relative_error << "\n";
  } else {
    os << "aee " << r.aee << "\n";
    os << "baseline_aee " << r.baseline_aee << "\n";
  }
}

void check_geometry(const NetworkConfig& cfg, const std::vector<LabelledSample>& data) {
  for (const auto& s : data) {
    if (s.geometry.width != cfg.width || s.geometry.height != cfg.height) {
      throw std::runtime_error("data geometry " + std::to_string(s.geometry.width) + "x" + std::to_string(s.geometry.height) +
                               " does not match network input " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
    }
    const bool dense = cfg.head.kind == HeadKind::dense_per_pixel;
    if (dense != (s.scenario == Scenario::translating_edges)) {
      throw std::runtime_error(std::string("network head ") + to_string(cfg.head.kind) + " cannot be scored on " +
                               to_string(s.scenario) + " data");
    }
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

struct GenArgs {
  std::string scenario, out, duration, bin_width = "2ms", size = "32x32", format = "csv";
  std::uint64_t seed = 1;
  std::size_t count = 1;
};

int run_gen(const GenArgs& a) {
  SceneSpec spec;
  spec.scenario = parse_scenario(a.scenario);
  spec.geometry = parse_size(a.size);
  spec.duration = a.duration.empty() ? (spec.scenario == Scenario::rotating_pattern ? Micros(100'000) : Micros(48'000))
                                     : parse_duration(a.duration);
  spec.bin_width = parse_duration(a.bin_width);
  spec.seed = a.seed;
  if (a.format != "csv" && a.format != "binary") throw UsageError("format must be csv or binary");
  const auto m = write_dataset(a.out, spec, a.count, a.format == "csv" ? EventFormat::csv : EventFormat::binary);
  write_manifest(std::cout, m);
  return 0;
}

struct TrainArgs {
  std::string config, data, checkpoint, history;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  std::ifstream cf(a.config);
  if (!cf) throw std::runtime_error("cannot open config " + a.config);
  auto cfg = parse_config(cf);
  if (a.seed) {
    cfg.network.seed = *a.seed;
    cfg.train.seed = *a.seed;
  }
  if (a.epochs) cfg.train.epochs = *a.epochs;
  const auto samples = read_dataset(a.data);
  if (samples.empty()) throw std::runtime_error("dataset " + a.data + " has no samples");
  check_geometry(cfg.network, samples);
  const auto data = to_dataset<double>(samples);

  Network<double> net(cfg.network);
  const auto result = train(net, data, cfg.train, [&](std::size_t epoch, double loss) {
    if (!a.quiet) std::cerr << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " loss " << loss << "\n";
  });
  save_checkpoint(a.checkpoint, net, cfg.train);
  auto hist = open_out(a.history.empty() ? a.checkpoint + ".loss" : a.history);
  hist << std::setprecision(17);
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) hist << e << ' ' << result.loss_history[e] << '\n';
  print_metrics(std::cout, evaluate(net, data, cfg.train), data.size());
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_dir) {
  const auto ck = load_checkpoint<double>(checkpoint);
  const auto samples = read_dataset(data_dir);
  if (samples.empty()) throw std::runtime_error("dataset " + data_dir + " has no samples");
  check_geometry(ck.config.network, samples);
  const auto data = to_dataset<double>(samples);
  print_metrics(std::cout, evaluate(ck.network, data, ck.config.train), data.size());
  return 0;
}

int run_stream(const std::string& checkpoint, const std::string& data_dir, std::size_t index, bool verify) {
  const auto ck = load_checkpoint<double>(checkpoint);
  const auto samples = read_dataset(data_dir);
  if (index >= samples.size()) throw std::runtime_error("sample index " + std::to_string(index) + " out of range");
  check_geometry(ck.config.network, {samples[index]});
  const auto s = to_sample<double>(samples[index]);
  auto session = open_session(ck.network);
  std::vector<Tensor<double>> outs;
  std::cout << std::setprecision(10);
  for (std::size_t t = 0; t < s.slices(); ++t) {
    auto y = session.step(time_slice(s.volume, t), mask_slice(s.mask, t));
    std::cout << "slice " << t;
    if (y.rank() == 1) {
      for (auto v : y.values()) std::cout << ' ' << v;
    } else {
      double u = 0, v = 0;
      const std::size_t P = y.dim(0) * y.dim(1);
      for (std::size_t p = 0; p < P; ++p) {
        u += y[2 * p];
        v += y[2 * p + 1];
      }
      std::cout << " mean_flow " << u / P << ' ' << v / P;
    }
    std::cout << '\n';
    outs.push_back(std::move(y));
  }
  if (verify) {
    const auto batch = forward(ck.network, s.volume, s.mask);
    const double diff = max_abs_diff(batch.values, stack_time(outs));
    std::cout << "max_abs_diff " << std::setprecision(3) << diff << (diff < 1e-9 ? " ok" : " MISMATCH") << '\n';
    return diff < 1e-9 ? 0 : 1;
  }
  return 0;
}

struct BenchArgs {
  std::string checkpoint, config, records, table;
  std::size_t slices = 500, warmup = 10;
  double density = 0.05;
  std::uint64_t seed = 1;
};

int run_bench(const BenchArgs& a) {
  std::optional<Network<double>> net;
  if (!a.checkpoint.empty()) {
    net.emplace(load_checkpoint<double>(a.checkpoint).network);
  } else {
    std::ifstream cf(a.config);
    if (!cf) throw std::runtime_error("cannot open config " + a.config);
    net.emplace(parse_config(cf).network);
  }
  if (a.slices <= a.warmup) throw UsageError("--slices must exceed --warmup");
  if (!(a.density >= 0.0 && a.density <= 1.0)) throw UsageError("--density must be in [0, 1]");
  const auto& cfg = net->config();
  Rng rng(a.seed);
  SliceSource<double> source = [&](std::size_t) {
    Tensor<double> slice({cfg.width, cfg.height, cfg.in_channels});
    Tensor<double> mask({cfg.width, cfg.height});
    for (std::size_t p = 0; p < cfg.width * cfg.height; ++p) {
      if (rng.uniform() >= a.density) continue;
      slice[p * cfg.in_channels + rng.below(cfg.in_channels)] = 1.0;
      mask[p] = 1.0;
    }
    return std::pair{slice, mask};
  };
  BenchOptions opt;
  opt.slices = a.slices;
  opt.warmup = a.warmup;
  const auto report = bench(*net, source, opt);
  if (a.table.empty()) {
    write_report_table(std::cout, report);
  } else {
    auto os = open_out(a.table);
    write_report_table(os, report);
  }
  if (a.records.empty()) {
    std::cout << "\n";
    write_report_records(std::cout, report);
  } else {
    auto os = open_out(a.records);
    write_report_records(os, report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EDeC event-stream networks: gen, train, eval, stream, bench"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Cap on intra-op threads")->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic labelled dataset");
  g->add_option("--scenario", gen.scenario, "rotating | translating")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Seed of the first sample");
  g->add_option("--duration", gen.duration, "Sample length (default 100ms rotating, 48ms translating)");
  g->add_option("--bin-width", gen.bin_width, "Bin width")->capture_default_str();
  g->add_option("--size", gen.size, "Sensor size WxH")->capture_default_str();
  g->add_option("--count", gen.count, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--format", gen.format, "csv | binary")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a network on a generated dataset");
  t->add_option("--config", tr.config, "Network/training config file")->required();
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out-checkpoint", tr.checkpoint, "Checkpoint to write")->required();
  t->add_option("--loss-history", tr.history, "Loss history file (default <checkpoint>.loss)");
  t->add_option("--seed", tr.seed, "Overrides network and training seeds");
  t->add_option("--epochs", tr.epochs, "Overrides the configured epoch count");
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  std::string ev_ck, ev_data;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev_ck)->required();
  e->add_option("--data", ev_data)->required();

  std::string st_ck, st_data;
  std::size_t st_index = 0;
  bool st_verify = false;
  auto* s = app.add_subcommand("stream", "Stream one sample slice by slice");
  s->add_option("--checkpoint", st_ck)->required();
  s->add_option("--data", st_data)->required();
  s->add_option("--sample", st_index, "Sample index")->capture_default_str();
  s->add_flag("--verify", st_verify, "Compare against batch inference");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Measure per-slice streaming latency");
  auto* bck = b->add_option("--checkpoint", be.checkpoint, "Checkpoint to benchmark");
  auto* bcf = b->add_option("--config", be.config, "Config for a freshly initialized network");
  bck->excludes(bcf);
  b->add_option("--slices", be.slices)->capture_default_str();
  b->add_option("--warmup", be.warmup)->capture_default_str();
  b->add_option("--density", be.density, "Fraction of active pixels per slice")->capture_default_str();
  b->add_option("--seed", be.seed)->capture_default_str();
  b->add_option("--records", be.records, "Line-delimited records file (default: stdout)");
  b->add_option("--table", be.table, "Summary table file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  if (b->parsed() && be.checkpoint.empty() && be.config.empty()) {
    std::cerr << "bench: give --checkpoint or --config\n" << b->help();
    return 2;
  }

  set_num_threads(threads);
  try {
    if (g->parsed()) return run_gen(gen);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_eval(ev_ck, ev_data);
    if (s->parsed()) return run_stream(st_ck, st_data, st_index, st_verify);
    return run_bench(be);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}
