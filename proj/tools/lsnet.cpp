// lsnet command line: model description, training, evaluation, kernel
// benchmarks, gradient checks and heat-map analyses.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lsnet/analysis.hpp"
#include "lsnet/bench.hpp"
#include "lsnet/parallel.hpp"
#include "lsnet/train.hpp"

namespace fs = std::filesystem;
using namespace lsnet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitCheckFailed = 1;

struct ModelOptions {
  std::string variant = "micro";
  bool no_dw = false;
  bool no_se = false;
  bool no_lkp_dw = false;
  int large_kernel = 0;
  int small_kernel = 0;
  int group_width = 0;
};

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string dtype = "f32";
  std::string out_dir = ".";
  std::string command_line;
};

void add_model_flags(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--variant,--spec", m.variant, "t, s, b, micro, nano or a spec file")->capture_default_str();
  cmd->add_flag("--no-dw", m.no_dw, "drop the block depthwise branch");
  cmd->add_flag("--no-se", m.no_se, "drop the SE gate");
  cmd->add_flag("--no-lkp-dw", m.no_lkp_dw, "drop the large-kernel depthwise layer of LKP");
  cmd->add_option("--kl", m.large_kernel, "large kernel size");
  cmd->add_option("--ks", m.small_kernel, "small (aggregation) kernel size");
  cmd->add_option("--group-width", m.group_width, "channels per aggregation group");
}

void add_common_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker threads (LSNET_DETERMINISTIC=1 forces 1)")->capture_default_str();
  cmd->add_option("--dtype", c.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  cmd->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
}

ModelSpec resolve_spec(const ModelOptions& m) {
  ModelSpec spec;
  static const std::vector<std::string> builtins{"t", "s", "b", "micro", "nano"};
  if (std::find(builtins.begin(), builtins.end(), m.variant) != builtins.end()) {
    spec = ModelSpec::builtin(m.variant);
  } else if (fs::is_regular_file(m.variant)) {
    spec = ModelSpec::load(m.variant);
  } else {
    throw ConfigError("unknown variant '" + m.variant + "' (expected t, s, b, micro, nano or a spec file)");
  }
  spec.ablation.no_dw = spec.ablation.no_dw || m.no_dw;
  spec.ablation.no_se = spec.ablation.no_se || m.no_se;
  spec.ablation.no_lkp_dw = spec.ablation.no_lkp_dw || m.no_lkp_dw;
  if (m.large_kernel > 0) spec.large_kernel = m.large_kernel;
  if (m.small_kernel > 0) spec.small_kernel = m.small_kernel;
  if (m.group_width > 0) spec.group_width = m.group_width;
  spec.validate();
  return spec;
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::vector<std::string> file_header(const std::string& what, const ModelSpec& spec, const Common& c) {
  return {"lsnet " + what, "spec " + spec.name + " digest " + hex(spec.digest()),
          "seed " + std::to_string(c.seed) + " dtype " + c.dtype, "command " + c.command_line};
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

std::string test_split_of(const std::string& data) {
  if (data == "blobs10") return "blobs10-test";
  return "";
}

// ---------------------------------------------------------------- describe

std::string mega(double v, const char* unit) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << v << unit;
  return out.str();
}

int cmd_describe(const ModelOptions& m, int res) {
  const ModelSpec spec = resolve_spec(m);
  const ParamStore<float> store = build_model<float>(spec, 0);
  const std::uint64_t params = count_params(store);
  const MacReport report = count_macs(spec, res, res);
  std::cout << spec.to_text() << "\n";
  std::cout << "digest " << hex(spec.digest()) << "\n";
  std::cout << "params " << params << " (" << mega(params / 1e6, "M") << ")\n";
  std::cout << "input " << res << "x" << res << ": MACs " << report.total_macs << " ("
            << mega(report.total_macs / 1e9, "G") << "), 2*MACs " << report.flops() << " ("
            << mega(report.flops() / 1e9, "G") << ")\n\n";
  std::cout << report.table() << "\n";
  if (const auto budget = published_budget(spec.name); budget && res == 224) {
    const bool p_ok = budget->params_ok(params);
    const bool f_ok = budget->flops_ok(report.total_macs);
    std::cout << "target params " << mega(budget->params / 1e6, "M") << " +/-10%: measured "
              << mega(params / 1e6, "M") << (p_ok ? " PASS" : " FAIL") << "\n";
    std::cout << "target FLOPs " << mega(budget->flops / 1e9, "G") << " +/-10%: MACs "
              << mega(report.total_macs / 1e9, "G") << ", 2*MACs " << mega(report.flops() / 1e9, "G")
              << (f_ok ? " PASS" : " FAIL") << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- train / eval

struct TrainOptions {
  std::string data = "blobs10";
  std::string test_data;
  int epochs = 20;
  int batch = 32;
  double lr = 1e-3;
  std::string optimizer = "adamw";
  bool hflip = false;
};

template <typename T>
int run_train(const ModelSpec& spec, const TrainOptions& o, const Common& c) {
  const Dataset train = open_dataset(o.data, c.seed);
  const std::string test_source = o.test_data.empty() ? test_split_of(o.data) : o.test_data;
  std::optional<Dataset> test;
  if (!test_source.empty()) test = open_dataset(test_source, c.seed);
  if (train.classes != spec.classes) {
    throw ConfigError("dataset has " + std::to_string(train.classes) + " classes, model " +
                      std::to_string(spec.classes));
  }

  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.optimizer = o.optimizer == "sgd" ? Optimizer::sgd : Optimizer::adamw;
  cfg.hflip = o.hflip;
  cfg.seed = c.seed;
  cfg.warmup_epochs = std::min(cfg.warmup_epochs, std::max(0, cfg.epochs - 1));
  cfg.validate();

  ParamStore<T> store = build_model<T>(spec, c.seed);
  Trainer<T> trainer(store, spec, cfg);

  const fs::path csv_path = out_path(c, "metrics.csv");
  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write " + csv_path.string());
  for (const auto& line : file_header("train metrics", spec, c)) csv << "# " << line << "\n";
  csv << "epoch,split,loss,top1\n";
  csv << std::setprecision(9);

  nlohmann::json epochs = nlohmann::json::array();
  Metrics last_train, last_test;
  const auto start = std::chrono::steady_clock::now();
  for (int e = 0; e < cfg.epochs; ++e) {
    last_train = trainer.train_epoch(train);
    csv << e + 1 << ",train," << last_train.loss << "," << last_train.top1 << "\n";
    nlohmann::json row{{"epoch", e + 1}, {"train_loss", last_train.loss}, {"train_top1", last_train.top1}};
    std::cout << "epoch " << e + 1 << " train loss " << last_train.loss << " top1 " << last_train.top1;
    if (test) {
      last_test = evaluate(store, spec, *test);
      csv << e + 1 << ",test," << last_test.loss << "," << last_test.top1 << "\n";
      row["test_loss"] = last_test.loss;
      row["test_top1"] = last_test.top1;
      std::cout << " | test loss " << last_test.loss << " top1 " << last_test.top1;
    }
    csv.flush();
    std::cout << std::endl;
    epochs.push_back(row);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path weights_path = out_path(c, "weights.lsw");
  save_weights(store, spec, weights_path);

  nlohmann::json summary{
      {"command", c.command_line},
      {"spec", spec.name},
      {"spec_digest", hex(spec.digest())},
      {"seed", c.seed},
      {"dtype", c.dtype},
      {"threads", thread_count()},
      {"data", o.data},
      {"test_data", test_source},
      {"epochs", cfg.epochs},
      {"steps", trainer.step()},
      {"seconds", seconds},
      {"params", count_params(store)},
      {"final_train", {{"loss", last_train.loss}, {"top1", last_train.top1}}},
      {"weights", weights_path.string()},
      {"metrics_csv", csv_path.string()},
      {"history", epochs},
  };
  if (test) summary["final_test"] = {{"loss", last_test.loss}, {"top1", last_test.top1}};
  std::ofstream(out_path(c, "summary.json")) << summary.dump(2) << "\n";
  std::cout << "wrote " << weights_path.string() << ", " << csv_path.string() << ", "
            << out_path(c, "summary.json").string() << "\n";
  return 0;
}

template <typename T>
int run_eval(const ModelSpec& spec, const std::string& weights, const std::string& data, std::uint64_t seed) {
  const ParamStore<T> store = load_weights<T>(weights, spec);
  const Dataset ds = open_dataset(data, seed);
  const Metrics m = evaluate(store, spec, ds);
  std::cout << std::setprecision(6) << "samples " << ds.size() << " loss " << m.loss << " top1 " << m.top1
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- analyses

struct ImageOptions {
  std::string weights;
  std::string data = "blobs10-test";
  std::string image;
  int index = 0;
  int stage = 2;
};

template <typename T>
ParamStore<T> model_store(const ModelSpec& spec, const ImageOptions& o, std::uint64_t seed) {
  return o.weights.empty() ? build_model<T>(spec, seed) : load_weights<T>(o.weights, spec);
}

template <typename T>
Tensor<T> analysis_image(const ImageOptions& o, std::uint64_t seed) {
  Dataset ds;
  std::size_t index = static_cast<std::size_t>(o.index);
  if (!o.image.empty()) {
    const RawImage raw = read_pnm(o.image);
    ds.shape = {1, 3, raw.height, raw.width};
    const std::size_t plane = static_cast<std::size_t>(raw.height) * raw.width;
    for (int c = 0; c < 3; ++c) {
      const std::size_t src = static_cast<std::size_t>(raw.channels == 1 ? 0 : c) * plane;
      ds.pixels.insert(ds.pixels.end(), raw.pixels.begin() + static_cast<std::ptrdiff_t>(src),
                       raw.pixels.begin() + static_cast<std::ptrdiff_t>(src + plane));
    }
    ds.labels = {0};
    ds.classes = 1;
    ds.mean.assign(3, 0.5f);
    ds.std.assign(3, 0.25f);
    index = 0;
  } else {
    ds = open_dataset(o.data, seed);
    if (index >= ds.size()) throw ConfigError("sample index out of range");
  }
  const std::size_t pick[1] = {index};
  return make_batch<T>(ds, pick).images;
}

template <typename T>
int run_erf(const ModelSpec& spec, const ImageOptions& o, int row, int col, const Common& c) {
  const ParamStore<T> store = model_store<T>(spec, o, c.seed);
  const HeatMap map = erf_map(store, spec, analysis_image<T>(o, c.seed), o.stage, row, col);
  auto header = file_header("erf stage " + std::to_string(o.stage), spec, c);
  const std::string base = "erf_stage" + std::to_string(o.stage);
  map.write_pgm(out_path(c, base + ".pgm"), header);
  map.write_csv(out_path(c, base + ".csv"), header);
  std::cout << "ERF " << map.height << "x" << map.width << " max " << map.max << " support(1%) "
            << map.support(0.01) << "\nwrote " << out_path(c, base + ".pgm").string() << "\n";
  return 0;
}

template <typename T>
int run_agg(const ModelSpec& spec, const ImageOptions& o, int layer, bool delta, const Common& c) {
  const ParamStore<T> store = model_store<T>(spec, o, c.seed);
  const AggregationMap agg = aggregation_weights(store, spec, analysis_image<T>(o, c.seed), o.stage, layer, delta);
  auto header = file_header("aggregation weights " + agg.layer, spec, c);
  header.push_back("mass " + std::to_string(agg.mass));
  const std::string base = "agg_stage" + std::to_string(o.stage) + "_layer" + std::to_string(layer);
  agg.upsampled.write_pgm(out_path(c, base + ".pgm"), header);
  agg.upsampled.write_csv(out_path(c, base + ".csv"), header);
  agg.feature.write_csv(out_path(c, base + "_tokens.csv"), header);
  std::cout << agg.layer << ": tokens " << agg.feature.height << "x" << agg.feature.width << ", mass " << agg.mass
            << "\nwrote " << out_path(c, base + ".pgm").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- bench

Shape parse_shape(const std::string& text) {
  std::vector<int> v;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) v.push_back(std::stoi(part));
  if (v.size() != 4) throw ConfigError("--size expects n,c,h,w");
  return {v[0], v[1], v[2], v[3]};
}

int run_bench(const std::string& op, const std::string& size, int ks, int groups, int repeats,
              const ModelOptions& m, int res, int batch, const Common& c) {
  std::vector<BenchStats> rows;
  double speedup = 0;
  if (op == "ska" || op == "all") {
    const SkaBench b = bench_ska(parse_shape(size), ks, groups, repeats, c.seed);
    rows.push_back(b.fast);
    rows.push_back(b.naive);
    speedup = b.speedup();
    if (b.max_abs_diff > 1e-4) throw NumericError("optimized and naive SKA disagree");
  }
  if (op == "model" || op == "all") rows.push_back(bench_model(resolve_spec(m), res, res, batch, repeats, c.seed));
  const fs::path path = out_path(c, "bench.csv");
  std::ofstream csv(path);
  csv << "# lsnet bench\n# threads " << thread_count() << "\n# command " << c.command_line << "\n";
  csv << BenchStats::csv_header() << "\n";
  std::cout << BenchStats::csv_header() << "\n";
  for (const auto& r : rows) {
    csv << r.csv_row() << "\n";
    std::cout << r.csv_row() << "\n";
  }
  if (speedup > 0) std::cout << "ska speedup " << std::setprecision(3) << speedup << "x\n";
  return 0;
}

template <typename F>
int with_dtype(const std::string& dtype, F&& f) {
  return dtype == "f64" ? f(double{}) : f(float{});
}

std::string joined_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LSNet: large-kernel perception, small-kernel aggregation vision models"};
  app.require_subcommand(1);
  Common common;
  common.command_line = joined_args(argc, argv);
  ModelOptions model;

  auto* describe = app.add_subcommand("describe", "print spec, parameter count and MAC table");
  int res = 224;
  add_model_flags(describe, model);
  describe->add_option("--res", res, "input resolution")->capture_default_str();

  auto* train = app.add_subcommand("train", "train a model; writes metrics.csv, summary.json, weights.lsw");
  TrainOptions topts;
  add_model_flags(train, model);
  add_common_flags(train, common);
  train->add_option("--data", topts.data, "blobs10, an IDX directory or a raw directory")->capture_default_str();
  train->add_option("--test-data", topts.test_data, "held-out split (default: blobs10-test for blobs10)");
  train->add_option("--epochs", topts.epochs)->capture_default_str();
  train->add_option("--batch", topts.batch)->capture_default_str();
  train->add_option("--lr", topts.lr)->capture_default_str();
  train->add_option("--optimizer", topts.optimizer)->check(CLI::IsMember({"adamw", "sgd"}))->capture_default_str();
  train->add_flag("--hflip", topts.hflip, "random horizontal flips");

  auto* eval = app.add_subcommand("eval", "evaluate a weights file");
  std::string weights, eval_data = "blobs10-test";
  add_model_flags(eval, model);
  add_common_flags(eval, common);
  eval->add_option("--weights", weights)->required();
  eval->add_option("--data", eval_data)->capture_default_str();

  auto* bench = app.add_subcommand("bench", "time optimized vs naive SKA and whole-model forward passes");
  std::string op = "ska", size = "1,64,64,64";
  int bench_ks = 3, bench_groups = 8, repeats = 9, batch = 1;
  add_model_flags(bench, model);
  add_common_flags(bench, common);
  bench->add_option("--op", op)->check(CLI::IsMember({"ska", "model", "all"}))->capture_default_str();
  bench->add_option("--size", size, "SKA input n,c,h,w")->capture_default_str();
  bench->add_option("--kernel", bench_ks, "SKA kernel")->capture_default_str();
  bench->add_option("--groups", bench_groups, "SKA groups")->capture_default_str();
  bench->add_option("--repeats", repeats)->capture_default_str();
  bench->add_option("--res", res, "model input resolution")->capture_default_str();
  bench->add_option("--batch", batch, "model batch")->capture_default_str();

  ImageOptions iopts;
  int layer = 0, row = -1, col = -1;
  bool delta = false;
  auto add_image_flags = [&](CLI::App* cmd) {
    add_model_flags(cmd, model);
    add_common_flags(cmd, common);
    cmd->add_option("--weights", iopts.weights, "weights file (default: seeded initialization)");
    cmd->add_option("--data", iopts.data, "dataset providing the image")->capture_default_str();
    cmd->add_option("--index", iopts.index, "sample index in --data")->capture_default_str();
    cmd->add_option("--image", iopts.image, "PGM/PPM image instead of a dataset sample");
    cmd->add_option("--stage", iopts.stage, "stage 0..3")->capture_default_str();
  };
  auto* agg = app.add_subcommand("agg-weights", "accumulated aggregation weights of one LS convolution");
  add_image_flags(agg);
  agg->add_option("--layer", layer, "LS convolution index within the stage")->capture_default_str();
  agg->add_flag("--delta", delta, "replace the weights by a centre-tap delta");

  auto* erf = app.add_subcommand("erf", "effective receptive field of one stage output position");
  add_image_flags(erf);
  erf->add_option("--row", row, "feature row (default: centre)");
  erf->add_option("--col", col, "feature column (default: centre)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op kind (f64)");
  GradcheckConfig gc;
  std::string fault;
  add_model_flags(gradcheck, model);
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();
  gradcheck->add_option("--samples", gc.samples)->capture_default_str();
  gradcheck->add_option("--res", gc.height, "input resolution")->capture_default_str();
  gradcheck->add_option("--threads", common.threads)->capture_default_str();
  gradcheck->add_option("--fault", fault, "op kind whose gradients are scaled by 1.5 (test hook)");

  auto* gen = app.add_subcommand("gen-data", "write a generated dataset to disk (IDX layout)");
  std::string gen_data = "blobs10";
  gen->add_option("--data", gen_data, "blobs10 or blobs10-test")->capture_default_str();
  gen->add_option("--seed", common.seed)->capture_default_str();
  gen->add_option("--out-dir", common.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    set_thread_count(common.threads);
    if (*describe) return cmd_describe(model, res);
    if (*train) {
      const ModelSpec spec = resolve_spec(model);
      return with_dtype(common.dtype, [&](auto tag) { return run_train<decltype(tag)>(spec, topts, common); });
    }
    if (*eval) {
      const ModelSpec spec = resolve_spec(model);
      return with_dtype(common.dtype,
                        [&](auto tag) { return run_eval<decltype(tag)>(spec, weights, eval_data, common.seed); });
    }
    if (*bench) return run_bench(op, size, bench_ks, bench_groups, repeats, model, res, batch, common);
    if (*agg) {
      const ModelSpec spec = resolve_spec(model);
      return with_dtype(common.dtype,
                        [&](auto tag) { return run_agg<decltype(tag)>(spec, iopts, layer, delta, common); });
    }
    if (*erf) {
      const ModelSpec spec = resolve_spec(model);
      return with_dtype(common.dtype, [&](auto tag) { return run_erf<decltype(tag)>(spec, iopts, row, col, common); });
    }
    if (*gradcheck) {
      const ModelSpec spec = resolve_spec(model);
      gc.width = gc.height;
      if (!fault.empty()) gc.fault = std::make_pair(fault, 1.5);
      const GradcheckReport report = gradcheck_model(spec, gc);
      std::cout << report.summary();
      return report.passed() ? 0 : kExitCheckFailed;
    }
    if (*gen) {
      const Dataset ds = open_dataset(gen_data, common.seed);
      save_dataset(ds, common.out_dir);
      std::cout << "wrote " << ds.size() << " samples to " << common.out_dir << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LookupError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ArithmeticError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
