#include "lsnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <functional>
#include <limits>
#include <sstream>

namespace lsnet {

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a finite non-negative number");
  if (epochs <= 0) throw ConfigError("train: epochs must be positive");
  if (warmup_epochs < 0) throw ConfigError("train: warmup epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("train: batch size must be positive");
  if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("train: label smoothing must be in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train: weight decay must be non-negative");
}

std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

bool decays(const std::string& name) {
  return name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, int n) {
  std::size_t best = 0;
  for (int c = 1; c < logits.shape().c; ++c) {
    if (logits.at(n, c, 0, 0) > logits.at(n, static_cast<int>(best), 0, 0)) best = static_cast<std::size_t>(c);
  }
  return best;
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(ParamStore<T>& store, ModelSpec spec, TrainConfig cfg)
    : store_(store), spec_(std::move(spec)), cfg_(cfg) {
  cfg_.validate();
  spec_.validate();
}

template <typename T>
double Trainer<T>::lr_at(std::uint64_t step, std::uint64_t steps_per_epoch) const {
  const double warm = static_cast<double>(cfg_.warmup_epochs) * static_cast<double>(steps_per_epoch);
  const double total = static_cast<double>(cfg_.epochs) * static_cast<double>(steps_per_epoch);
  const double t = static_cast<double>(step);
  if (t < warm) return cfg_.lr * (t + 1) / warm;
  if (total <= warm) return cfg_.lr;
  const double progress = std::min(1.0, (t - warm) / (total - warm));
  return 0.5 * cfg_.lr * (1 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void Trainer<T>::update(const Gradients<T>& grads, double lr) {
  double norm_sq = 0;
  for (const auto& [name, g] : grads.all()) {
    for (T v : g.data()) norm_sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(norm_sq);
  const double clip = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  const double t = static_cast<double>(step_ + 1);
  const double bias1 = 1 - std::pow(cfg_.beta1, t);
  const double bias2 = 1 - std::pow(cfg_.beta2, t);
  for (const auto& [name, g] : grads.all()) {
    Tensor<T>& p = store_.get_mut(name);
    const double decay = decays(name) ? cfg_.weight_decay : 0.0;
    auto [mit, fresh] = m_.try_emplace(name, g.shape());
    Tensor<T>& m = mit->second;
    if (cfg_.optimizer == Optimizer::adamw) {
      Tensor<T>& v = v_.try_emplace(name, g.shape()).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double step = (mi / bias1) / (std::sqrt(vi / bias2) + cfg_.adam_eps);
        const double pi = static_cast<double>(p[i]);
        p[i] = static_cast<T>(pi - lr * (step + decay * pi));
      }
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        const double buf = fresh ? gi : cfg_.momentum * static_cast<double>(m[i]) + gi;
        m[i] = static_cast<T>(buf);
        const double pi = static_cast<double>(p[i]);
        p[i] = static_cast<T>(pi - lr * (buf + decay * pi));
      }
    }
  }
}

template <typename T>
Metrics Trainer<T>::train_epoch(const Dataset& data) {
  data.validate();
  if (data.classes != spec_.classes) {
    throw ConfigError("train: dataset has " + std::to_string(data.classes) + " classes, model " +
                      std::to_string(spec_.classes));
  }
  const std::size_t n = data.size();
  if (n == 0) throw DataError("train: empty dataset");
  const auto order = epoch_permutation(n, cfg_.seed, epoch_);
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  const std::uint64_t steps_per_epoch = (n + bs - 1) / bs;
  std::mt19937_64 flip_rng(cfg_.seed ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(epoch_ + 1)));

  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t count = std::min(bs, n - start);
    const std::span<const std::size_t> idx(order.data() + start, count);
    Batch<T> batch = make_batch<T>(data, idx, cfg_.hflip, cfg_.hflip ? &flip_rng : nullptr);
    double loss = 0;
    try {
      Tape<T> tape;
      Graph<T> graph(tape, store_, Mode::train);
      Var<T> logits = run_model(graph, graph.input(std::move(batch.images)), spec_).logits;
      Var<T> l = cross_entropy(logits, std::span<const int>(batch.labels), static_cast<T>(cfg_.label_smoothing));
      loss = static_cast<double>(l.value()[0]);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss");
      for (std::size_t b = 0; b < count; ++b) {
        if (static_cast<int>(argmax_row(logits.value(), static_cast<int>(b))) == batch.labels[b]) ++correct;
      }
      Gradients<T> grads = tape.backward(l, Tensor<T>({1, 1, 1, 1}, T{1}));
      update(grads, lr_at(step_, steps_per_epoch));
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("training diverged: ") + e.what(), step_);
    }
    for (const auto& [name, entry] : store_.entries()) {
      if (!entry.value.all_finite()) throw DivergenceError("training diverged: " + name + " non-finite", step_);
    }
    trace_.push_back(loss);
    loss_sum += loss * static_cast<double>(count);
    ++step_;
  }
  ++epoch_;
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

template <typename T>
Metrics evaluate(const ParamStore<T>& store, const ModelSpec& spec, const Dataset& data, int batch_size) {
  data.validate();
  if (data.classes != spec.classes) throw ConfigError("evaluate: dataset/model class count mismatch");
  if (batch_size <= 0) throw ConfigError("evaluate: batch size must be positive");
  const std::size_t n = data.size();
  double loss_sum = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), n - start);
    idx.resize(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    Batch<T> batch = make_batch<T>(data, idx);
    const Tensor<T> logits = forward_classify(store, spec, batch.images);
    for (std::size_t b = 0; b < count; ++b) {
      const int row = static_cast<int>(b);
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < spec.classes; ++c) mx = std::max(mx, static_cast<double>(logits.at(row, c, 0, 0)));
      double total = 0;
      for (int c = 0; c < spec.classes; ++c) total += std::exp(static_cast<double>(logits.at(row, c, 0, 0)) - mx);
      loss_sum += std::log(total) + mx - static_cast<double>(logits.at(row, batch.labels[b], 0, 0));
      if (static_cast<int>(argmax_row(logits, row)) == batch.labels[b]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

// ---- gradient check ----

std::string op_kind_of(const std::string& param) {
  auto has = [&param](const char* part) { return param.find(part) != std::string::npos; };
  if (param == "input") return "input";
  if (param.rfind("stem.", 0) == 0) return "stem";
  if (param.rfind("head.", 0) == 0) return "classifier";
  if (has(".down.")) return "downsample";
  if (has(".mixer.lkp.")) return "lkp";
  if (has(".mixer.bn.")) return "ls_norm";
  if (has(".mixer.")) return "msa";
  if (has(".se.")) return "se";
  if (has(".ffn.")) return "ffn";
  if (has(".dw.")) return "block_dw";
  return "other";
}

std::string param_class_of(const std::string& param, const Shape& shape) {
  if (param == "input") return "input";
  if (param.find(".bn.") != std::string::npos) return "bn";
  if (param.size() >= 5 && param.compare(param.size() - 5, 5, ".bias") == 0) return "bias";
  if (param.rfind("head.linear", 0) == 0) return "linear";
  if (shape.h == 1 && shape.w == 1) return "conv_pw";
  if (shape.c == 1) return "conv_dw";
  return "conv_dense";
}

std::string GradcheckReport::summary() const {
  std::ostringstream out;
  out << std::scientific << std::setprecision(3);
  out << "gradcheck: " << checked << " scalars, tolerance " << tolerance << ", max rel error "
      << max_rel_error << (passed() ? " PASS" : " FAIL") << '\n';
  out << "worst per op kind:\n";
  for (const auto& [kind, s] : worst_by_kind) {
    out << "  " << std::left << std::setw(12) << kind << std::right << s.rel_error << "  " << s.name << '['
        << s.index << "] analytic " << s.analytic << " numeric " << s.numeric << '\n';
  }
  out << "worst per parameter class:\n";
  for (const auto& [cls, s] : worst_by_class) {
    out << "  " << std::left << std::setw(12) << cls << std::right << s.rel_error << "  " << s.name << '\n';
  }
  if (!passed()) {
    out << failures.size() << " failures; culprit op kind: " << culprit << '\n';
  }
  return out.str();
}

Derivative ridders(const std::function<double(double)>& central, double h0, int levels) {
  // Neville tableau of central differences at steps h0, h0/2, h0/4, ...
  constexpr double kShrink = 2.0;
  constexpr double kSafe = 2.0;
  std::vector<std::vector<double>> a(levels, std::vector<double>(levels));
  double h = h0;
  a[0][0] = central(h);
  Derivative best{a[0][0], std::numeric_limits<double>::infinity(), h};
  for (int i = 1; i < levels; ++i) {
    h /= kShrink;
    a[0][i] = central(h);
    double fac = kShrink * kShrink;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1);
      fac *= kShrink * kShrink;
      const double err = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (err <= best.error) best = {a[j][i], err, h};
    }
    // Large steps may straddle ReLU kinks, so a growing error only ends the
    // search once the tableau has already converged somewhere.
    if (best.error <= 1e-9 * std::max(std::abs(best.value), 1e-4)) break;
    if (i >= 4 && std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * best.error &&
        best.error <= 1e-6 * std::max(std::abs(best.value), 1e-4)) {
      break;
    }
  }
  return best;
}

GradcheckReport gradcheck_model(const ModelSpec& spec, const GradcheckConfig& cfg) {
  spec.validate();
  if (cfg.batch <= 0) throw ConfigError("gradcheck: batch must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  ParamStore<double> store = build_model<double>(spec, cfg.seed);
  // Move biases and norm affine terms off their trivial init so every path carries signal.
  for (auto& [name, entry] : store.entries()) {
    if (!entry.learnable) continue;
    const std::string cls = param_class_of(name, entry.value.shape());
    if (cls == "bias") {
      for (auto& v : entry.value.data()) v = 0.1 * uni(rng);
    } else if (cls == "bn") {
      const bool is_scale = name.find(".bn.scale") != std::string::npos;
      for (auto& v : entry.value.data()) v = (is_scale ? 1.0 : 0.0) + (is_scale ? 0.2 : 0.1) * uni(rng);
    }
  }
  // Noise plus a per-sample offset and ramp per channel. Pure iid noise makes
  // every sample's pooled features nearly equal, and batch-normalizing those
  // across the batch divides by a near-zero spread.
  Tensor<double> image({cfg.batch, 3, cfg.height, cfg.width});
  for (int n = 0; n < cfg.batch; ++n) {
    for (int c = 0; c < 3; ++c) {
      const double offset = gauss(rng), ry = gauss(rng), rx = gauss(rng);
      for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
          image.at(n, c, y, x) = offset + ry * (y + 0.5) / cfg.height + rx * (x + 0.5) / cfg.width - 0.5 * (ry + rx) +
                                 gauss(rng);
        }
      }
    }
  }
  std::vector<int> labels(cfg.batch);
  std::uniform_int_distribution<int> pick_label(0, spec.classes - 1);
  for (auto& l : labels) l = pick_label(rng);
  constexpr double kSmoothing = 0.1;

  auto loss_at = [&](ParamStore<double>& st, const Tensor<double>& img) {
    Tape<double> tape(false);
    Graph<double> graph(tape, st, Mode::train);
    Var<double> logits = run_model(graph, graph.input(img), spec).logits;
    return cross_entropy(logits, std::span<const int>(labels), kSmoothing).value()[0];
  };

  Tape<double> tape;
  if (cfg.fault) tape.inject_fault(cfg.fault->first, cfg.fault->second);
  ParamStore<double> work = store;
  Gradients<double> grads;
  {
    Graph<double> graph(tape, work, Mode::train);
    Var<double> logits = run_model(graph, graph.input(image, true), spec).logits;
    Var<double> loss = cross_entropy(logits, std::span<const int>(labels), kSmoothing);
    grads = tape.backward(loss, Tensor<double>({1, 1, 1, 1}, 1.0));
  }
  const std::vector<std::string> order = tape.leaf_names();

  // One scalar per learnable tensor, then uniform draws over all scalars.
  std::vector<std::pair<std::string, std::size_t>> picks;
  std::vector<std::string> names;
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& [name, entry] : store.entries()) {
    if (!entry.learnable) continue;
    names.push_back(name);
    total += entry.value.size();
    cumulative.push_back(total);
    std::uniform_int_distribution<std::size_t> at(0, entry.value.size() - 1);
    picks.emplace_back(name, at(rng));
  }
  std::uniform_int_distribution<std::size_t> any(0, total - 1);
  while (picks.size() < static_cast<std::size_t>(cfg.samples)) {
    const std::size_t flat = any(rng);
    const auto pos = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), flat) - cumulative.begin());
    const std::size_t base = pos == 0 ? 0 : cumulative[pos - 1];
    picks.emplace_back(names[pos], flat - base);
  }
  std::uniform_int_distribution<std::size_t> any_pixel(0, image.size() - 1);
  for (int i = 0; i < cfg.input_samples; ++i) picks.emplace_back("input", any_pixel(rng));

  GradcheckReport report;
  report.tolerance = cfg.tolerance;
  std::ptrdiff_t culprit_pos = -1;
  ParamStore<double> probe = store;
  Tensor<double> probe_image = image;
  for (const auto& [name, index] : picks) {
    const bool is_input = name == "input";
    Tensor<double>& target = is_input ? probe_image : probe.get_mut(name);
    const double theta = target[index];
    auto central = [&](double h) {
      target[index] = theta + h;
      const double up = loss_at(probe, probe_image);
      target[index] = theta - h;
      const double down = loss_at(probe, probe_image);
      target[index] = theta;
      return (up - down) / (2 * h);
    };
    const Derivative d = ridders(central, 1e-4 * std::max(1.0, std::abs(theta)));

    GradcheckSample s;
    s.name = name;
    s.index = index;
    s.kind = op_kind_of(name);
    s.param_class = param_class_of(name, target.shape());
    s.numeric = d.value;
    s.fd_error = d.error;
    s.step = d.step;
    s.analytic = grads.at(name)[index];
    s.rel_error = std::abs(s.analytic - s.numeric) /
                  std::max({std::abs(s.analytic), std::abs(s.numeric), 1e-6});
    ++report.checked;
    report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
    auto keep_worst = [&s](std::map<std::string, GradcheckSample>& m, const std::string& key) {
      auto it = m.find(key);
      if (it == m.end() || s.rel_error > it->second.rel_error) m[key] = s;
    };
    keep_worst(report.worst_by_kind, s.kind);
    keep_worst(report.worst_by_class, s.param_class);
    if (!(s.rel_error < cfg.tolerance)) {
      const auto pos = std::find(order.begin(), order.end(), name) - order.begin();
      if (pos > culprit_pos) {
        culprit_pos = pos;
        report.culprit = s.kind;
      }
      report.failures.push_back(std::move(s));
    }
  }
  return report;
}

template class Trainer<float>;
template class Trainer<double>;
template Metrics evaluate(const ParamStore<float>&, const ModelSpec&, const Dataset&, int);
template Metrics evaluate(const ParamStore<double>&, const ModelSpec&, const Dataset&, int);

}  // namespace lsnet
