#pragma once

// Wall-clock benchmarks: median of repeats after warmup, with MAC throughput.

#include <cstdint>
#include <functional>
#include <string>

#include "lsnet/model.hpp"

namespace lsnet {

inline constexpr int kBenchWarmup = 3;

struct BenchStats {
  std::string name;
  std::string shape;
  int repeats = 0;
  double median_s = 0;
  double min_s = 0;
  double max_s = 0;
  std::uint64_t macs = 0;

  double macs_per_s() const { return median_s > 0 ? static_cast<double>(macs) / median_s : 0; }
  static std::string csv_header();  // name,shape,repeats,median_s,min_s,max_s,macs,macs_per_s
  std::string csv_row() const;
};

/// Runs fn kBenchWarmup times untimed, then `repeats` timed runs.
BenchStats time_op(std::string name, std::string shape, std::uint64_t macs, int repeats,
                   const std::function<void()>& fn);

struct SkaBench {
  BenchStats fast;
  BenchStats naive;
  double max_abs_diff = 0;  // between the two outputs
  double speedup() const { return fast.median_s > 0 ? naive.median_s / fast.median_s : 0; }
};

/// Optimized vs naive SKA on random f32 inputs of shape (n, c, h, w).
SkaBench bench_ska(const Shape& shape, int kernel, int groups, int repeats, std::uint64_t seed = 0);

/// Infer-mode f32 forward of a whole model on a random batch.
BenchStats bench_model(const ModelSpec& spec, int height, int width, int batch, int repeats,
                       std::uint64_t seed = 0);

}  // namespace lsnet
