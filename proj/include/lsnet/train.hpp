#pragma once

// Training loop, evaluation and the whole-model gradient check.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsnet/data.hpp"
#include "lsnet/model.hpp"

namespace lsnet {

enum class Optimizer { adamw, sgd };

struct TrainConfig {
  Optimizer optimizer = Optimizer::adamw;
  double lr = 1e-3;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.025;  // decoupled, conv/linear kernels only
  int epochs = 20;
  int warmup_epochs = 5;
  int batch_size = 32;
  double label_smoothing = 0.1;
  double grad_clip = 0.02;  // global L2 norm; <= 0 disables
  bool hflip = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Metrics {
  double loss = 0;
  double top1 = 0;
};

/// Owns optimizer state for one store. Each train_epoch call is one full pass
/// in a permutation drawn from (seed, epoch); the learning rate follows linear
/// warmup then cosine decay over cfg.epochs, updated per step.
template <typename T>
class Trainer {
 public:
  Trainer(ParamStore<T>& store, ModelSpec spec, TrainConfig cfg);

  /// Throws DivergenceError carrying the global step when the loss or a
  /// gradient turns non-finite.
  Metrics train_epoch(const Dataset& data);

  int epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }
  double lr_at(std::uint64_t step, std::uint64_t steps_per_epoch) const;
  /// Per-step training losses of every epoch so far.
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  void update(const Gradients<T>& grads, double lr);

  ParamStore<T>& store_;
  ModelSpec spec_;
  TrainConfig cfg_;
  int epoch_ = 0;
  std::uint64_t step_ = 0;
  std::map<std::string, Tensor<T>> m_;
  std::map<std::string, Tensor<T>> v_;
  std::vector<double> trace_;
};

/// Infer-mode pass; plain cross-entropy loss and top-1. Never writes the store.
template <typename T>
Metrics evaluate(const ParamStore<T>& store, const ModelSpec& spec, const Dataset& data,
                 int batch_size = 100);

/// The indices of one epoch's sample order.
std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed, int epoch);

struct GradcheckConfig {
  double tolerance = 1e-4;
  int samples = 200;  // minimum scalar parameters checked
  int input_samples = 16;
  int batch = 4;
  int height = 96;
  int width = 96;
  std::uint64_t seed = 0;
  /// Test hook: scale gradient contributions of one op kind.
  std::optional<std::pair<std::string, double>> fault;
};

struct GradcheckSample {
  std::string name;  // parameter name, or "input"
  std::string kind;  // op kind that owns the parameter
  std::string param_class;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  double fd_error = 0;  // extrapolation error estimate of `numeric`
  double step = 0;      // finest step used
};

struct GradcheckReport {
  double tolerance = 0;
  std::size_t checked = 0;
  double max_rel_error = 0;
  std::map<std::string, GradcheckSample> worst_by_kind;
  std::map<std::string, GradcheckSample> worst_by_class;
  std::vector<GradcheckSample> failures;
  /// Op kind blamed for the failures: the kind of the failing parameter
  /// created last in forward order (gradient errors propagate upstream only).
  std::string culprit;

  bool passed() const { return failures.empty(); }
  std::string summary() const;
};

/// Op kind owning a model parameter name (stem, downsample, block_dw, se, lkp,
/// ls_norm, msa, ffn, classifier).
std::string op_kind_of(const std::string& param);
/// conv_pw, conv_dw, conv_dense, bn, bias or linear.
std::string param_class_of(const std::string& param, const Shape& shape);

struct Derivative {
  double value = 0;
  double error = 0;
  double step = 0;
};

/// Ridders' extrapolation over central differences f'(x) ~ central(h), starting
/// at step h0 and halving; stops once the error estimate stops improving.
Derivative ridders(const std::function<double(double)>& central, double h0, int levels = 10);

/// Central differences vs the tape on a train-mode cross-entropy loss at f64.
GradcheckReport gradcheck_model(const ModelSpec& spec, const GradcheckConfig& cfg);

}  // namespace lsnet
