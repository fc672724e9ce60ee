#include "lsnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lsnet {

HeatMap HeatMap::from_values(int height, int width, std::vector<float> values) {
  if (height <= 0 || width <= 0 || values.size() != static_cast<std::size_t>(height) * width) {
    throw ConfigError("heat map: value count does not match extents");
  }
  HeatMap m;
  m.height = height;
  m.width = width;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  m.min = *lo;
  m.max = *hi;
  m.values = std::move(values);
  return m;
}

double HeatMap::sum() const {
  double s = 0;
  for (float v : values) s += v;
  return s;
}

std::size_t HeatMap::support(double fraction) const {
  if (max <= 0) return 0;
  const double threshold = fraction * max;
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [&](float v) { return v > threshold; }));
}

namespace {

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

void HeatMap::write_pgm(const std::filesystem::path& path, const std::vector<std::string>& header) const {
  std::ofstream out = open_output(path, std::ios::binary);
  out << "P5\n";
  for (const auto& line : header) out << "# " << line << "\n";
  out << "# min " << min << " max " << max << "\n";
  out << width << " " << height << "\n255\n";
  const float range = max - min;
  std::vector<unsigned char> bytes(values.size(), 0);
  if (range > 0) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float t = (values[i] - min) / range;
      bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(t, 0.0f, 1.0f) * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void HeatMap::write_csv(const std::filesystem::path& path, const std::vector<std::string>& header) const {
  std::ofstream out = open_output(path, std::ios::out);
  for (const auto& line : header) out << "# " << line << "\n";
  out << "# min " << min << " max " << max << "\n";
  out << "row,col,value\n";
  out.precision(9);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) out << r << "," << c << "," << at(r, c) << "\n";
  }
}

template <typename T>
HeatMap input_gradient_map(Tape<T>& tape, Var<T> input, Var<T> output, int row, int col) {
  const Shape os = output.shape();
  if (row < 0 || row >= os.h || col < 0 || col >= os.w) {
    throw ConfigError("position (" + std::to_string(row) + ", " + std::to_string(col) +
                      ") is outside the " + std::to_string(os.h) + "x" + std::to_string(os.w) +
                      " feature map");
  }
  Tensor<T> seed(os);
  for (int c = 0; c < os.c; ++c) seed.at(0, c, row, col) = T{1};
  const Gradients<T> grads = tape.backward(output, seed);
  const Tensor<T>& g = grads.at("input");
  const Shape is = input.shape();
  std::vector<float> values(static_cast<std::size_t>(is.h) * is.w, 0.0f);
  for (int c = 0; c < is.c; ++c) {
    const T* p = g.plane(0, c);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += static_cast<float>(std::abs(p[i]));
  }
  for (float& v : values) v /= static_cast<float>(is.c);
  return HeatMap::from_values(is.h, is.w, std::move(values));
}

namespace {

template <typename T>
void require_single_image(const Tensor<T>& image) {
  if (image.shape().n != 1 || image.shape().c != 3) {
    throw ConfigError("analysis expects one 3-channel image, got " + image.shape().str());
  }
}

void require_stage(int stage) {
  if (stage < 0 || stage > 3) throw ConfigError("stage must be in 0..3, got " + std::to_string(stage));
}

}  // namespace

template <typename T>
HeatMap erf_map(const ParamStore<T>& store, const ModelSpec& spec, const Tensor<T>& image, int stage,
                int row, int col) {
  require_single_image(image);
  require_stage(stage);
  Tape<T> tape;
  // Infer mode reads running statistics only, so the store is not written.
  Graph<T> graph(tape, const_cast<ParamStore<T>&>(store), Mode::infer);
  Var<T> input = graph.input(image, true);
  const ModelOutputs<T> out = run_model(graph, input, spec);
  const Var<T> feature = out.stages.at(static_cast<std::size_t>(stage));
  if (row < 0) row = feature.shape().h / 2;
  if (col < 0) col = feature.shape().w / 2;
  return input_gradient_map(tape, input, feature, row, col);
}

std::vector<std::string> ls_conv_prefixes(const ModelSpec& spec, int stage) {
  require_stage(stage);
  std::vector<std::string> prefixes;
  for (int i = 0; i < spec.stages[static_cast<std::size_t>(stage)].blocks; ++i) {
    if (spec.block_config(stage, i).mixer == MixerKind::ls) {
      prefixes.push_back("stages." + std::to_string(stage) + ".blocks." + std::to_string(i) + ".mixer");
    }
  }
  return prefixes;
}

template <typename T>
HeatMap accumulate_aggregation(const Tensor<T>& weights, int kernel, int groups) {
  const Shape& s = weights.shape();
  if (s.n != 1 || s.c != groups * kernel * kernel) {
    throw ConfigError("aggregation map expects (1, G*K*K, h, w), got " + s.str());
  }
  const int r = (kernel - 1) / 2;
  std::vector<double> acc(static_cast<std::size_t>(s.h) * s.w, 0.0);
  for (int d = 0; d < s.c; ++d) {
    const int u = (d % (kernel * kernel)) / kernel, v = d % kernel;
    const T* w = weights.plane(0, d);
    for (int i = 0; i < s.h; ++i) {
      const int ti = i + u - r;
      if (ti < 0 || ti >= s.h) continue;
      for (int j = 0; j < s.w; ++j) {
        const int tj = j + v - r;
        if (tj < 0 || tj >= s.w) continue;
        acc[static_cast<std::size_t>(ti) * s.w + tj] += std::abs(static_cast<double>(w[i * s.w + j]));
      }
    }
  }
  std::vector<float> values(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) values[i] = static_cast<float>(acc[i] / groups);
  return HeatMap::from_values(s.h, s.w, std::move(values));
}

template <typename T>
Tensor<T> delta_weight_map(const Shape& shape, int kernel) {
  const int taps = kernel * kernel;
  if (shape.c % taps != 0) throw ConfigError("weight map channels are not a multiple of K*K");
  Tensor<T> w(shape);
  const int centre = taps / 2;
  for (int n = 0; n < shape.n; ++n) {
    for (int g = 0; g < shape.c / taps; ++g) {
      T* p = w.plane(n, g * taps + centre);
      std::fill(p, p + shape.plane(), T{1});
    }
  }
  return w;
}

namespace {

// Nearest upsampling that splits each token's value evenly over the pixels
// mapped to it, so the total is unchanged.
HeatMap upsample_preserving(const HeatMap& m, int height, int width) {
  auto src = [](int y, int out, int in) { return static_cast<int>(static_cast<long long>(y) * in / out); };
  std::vector<int> rows(static_cast<std::size_t>(m.height), 0), cols(static_cast<std::size_t>(m.width), 0);
  for (int y = 0; y < height; ++y) ++rows[static_cast<std::size_t>(src(y, height, m.height))];
  for (int x = 0; x < width; ++x) ++cols[static_cast<std::size_t>(src(x, width, m.width))];
  std::vector<float> values(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    const int ty = src(y, height, m.height);
    for (int x = 0; x < width; ++x) {
      const int tx = src(x, width, m.width);
      const double count = static_cast<double>(rows[static_cast<std::size_t>(ty)]) *
                           cols[static_cast<std::size_t>(tx)];
      values[static_cast<std::size_t>(y) * width + x] = static_cast<float>(m.at(ty, tx) / count);
    }
  }
  return HeatMap::from_values(height, width, std::move(values));
}

}  // namespace

template <typename T>
AggregationMap aggregation_weights(const ParamStore<T>& store, const ModelSpec& spec,
                                   const Tensor<T>& image, int stage, int layer, bool force_delta) {
  require_single_image(image);
  const std::vector<std::string> prefixes = ls_conv_prefixes(spec, stage);
  if (layer < 0 || layer >= static_cast<int>(prefixes.size())) {
    throw ConfigError("stage " + std::to_string(stage) + " has " + std::to_string(prefixes.size()) +
                      " LS convolutions; layer " + std::to_string(layer) + " is out of range");
  }
  const std::string target = prefixes[static_cast<std::size_t>(layer)];
  const int kernel = spec.small_kernel;
  const int groups = spec.stages[static_cast<std::size_t>(stage)].channels / spec.group_width;

  Tape<T> tape(false);
  Graph<T> graph(tape, const_cast<ParamStore<T>&>(store), Mode::infer);
  std::optional<Tensor<T>> captured;
  graph.set_weight_hook([&](const std::string& prefix, Var<T> w) {
    if (prefix != target) return w;
    if (force_delta) w = tape.constant(delta_weight_map<T>(w.shape(), kernel));
    captured = w.value();
    return w;
  });
  run_model(graph, graph.input(image), spec);
  if (!captured) throw ConfigError("LS convolution " + target + " was not evaluated");

  AggregationMap result;
  result.layer = target;
  result.feature = accumulate_aggregation(*captured, kernel, groups);
  result.mass = result.feature.sum();
  result.upsampled = upsample_preserving(result.feature, image.shape().h, image.shape().w);
  return result;
}

#define LSNET_INSTANTIATE(T)                                                                      \
  template HeatMap input_gradient_map(Tape<T>&, Var<T>, Var<T>, int, int);                        \
  template HeatMap erf_map(const ParamStore<T>&, const ModelSpec&, const Tensor<T>&, int, int, int); \
  template AggregationMap aggregation_weights(const ParamStore<T>&, const ModelSpec&,             \
                                              const Tensor<T>&, int, int, bool);                  \
  template HeatMap accumulate_aggregation(const Tensor<T>&, int, int);                            \
  template Tensor<T> delta_weight_map(const Shape&, int);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

}  // namespace lsnet
