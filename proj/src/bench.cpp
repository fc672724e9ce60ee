#include "lsnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace lsnet {

std::string BenchStats::csv_header() { return "name,shape,repeats,median_s,min_s,max_s,macs,macs_per_s"; }

std::string BenchStats::csv_row() const {
  std::ostringstream out;
  out.precision(9);
  out << name << "," << shape << "," << repeats << "," << median_s << "," << min_s << "," << max_s << ","
      << macs << "," << macs_per_s();
  return out.str();
}

BenchStats time_op(std::string name, std::string shape, std::uint64_t macs, int repeats,
                   const std::function<void()>& fn) {
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  for (int i = 0; i < kBenchWarmup; ++i) fn();
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(times.begin(), times.end());
  BenchStats s;
  s.name = std::move(name);
  s.shape = std::move(shape);
  s.repeats = repeats;
  const std::size_t mid = times.size() / 2;
  s.median_s = times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
  s.min_s = times.front();
  s.max_s = times.back();
  s.macs = macs;
  return s;
}

namespace {

std::string shape_text(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

void fill_normal(Tensor<float>& t, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (float& v : t.data()) v = dist(rng);
}

}  // namespace

SkaBench bench_ska(const Shape& shape, int kernel, int groups, int repeats, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> x(shape);
  Tensor<float> w({shape.n, groups * kernel * kernel, shape.h, shape.w});
  fill_normal(x, rng);
  fill_normal(w, rng);
  const std::uint64_t macs = static_cast<std::uint64_t>(shape.numel()) * kernel * kernel;
  const std::string label = shape_text(shape) + "/k" + std::to_string(kernel) + "/g" + std::to_string(groups);

  SkaBench b;
  Tensor<float> fast_out, naive_out;
  b.fast = time_op("ska_fast", label, macs, repeats, [&] { fast_out = ska_forward_fast(x, w, kernel, groups); });
  b.naive = time_op("ska_naive", label, macs, repeats, [&] { naive_out = ska_forward_naive(x, w, kernel, groups); });
  for (std::size_t i = 0; i < fast_out.size(); ++i) {
    b.max_abs_diff = std::max(b.max_abs_diff, static_cast<double>(std::abs(fast_out[i] - naive_out[i])));
  }
  return b;
}

BenchStats bench_model(const ModelSpec& spec, int height, int width, int batch, int repeats, std::uint64_t seed) {
  const ParamStore<float> store = build_model<float>(spec, seed);
  std::mt19937_64 rng(seed + 1);
  Tensor<float> images({batch, 3, height, width});
  fill_normal(images, rng);
  const std::uint64_t macs = count_macs(spec, height, width).total_macs * static_cast<std::uint64_t>(batch);
  return time_op("model_" + spec.name, shape_text(images.shape()), macs, repeats,
                 [&] { (void)forward_classify(store, spec, images); });
}

}  // namespace lsnet
