#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lsnet/analysis.hpp"
#include "lsnet/bench.hpp"
#include "support.hpp"

using namespace lsnet;
using lsnet::test::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lsnet_test_analysis";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

// Independent tally: every output pixel of every group spreads |w| of its
// in-bounds taps onto the token each tap reads.
std::vector<double> tally_taps(const Tensor<double>& w, int kernel, int groups) {
  const Shape s = w.shape();
  const int r = kernel / 2;
  std::vector<double> acc(s.plane(), 0.0);
  for (int g = 0; g < groups; ++g)
    for (int u = 0; u < kernel; ++u)
      for (int v = 0; v < kernel; ++v)
        for (int y = 0; y < s.h; ++y)
          for (int x = 0; x < s.w; ++x) {
            const int sy = y + u - r, sx = x + v - r;
            if (sy < 0 || sy >= s.h || sx < 0 || sx >= s.w) continue;
            acc[sy * s.w + sx] += std::abs(w.at(0, (g * kernel + u) * kernel + v, y, x)) / groups;
          }
  return acc;
}

}  // namespace

TEST_CASE("heat map files") {
  const HeatMap m = HeatMap::from_values(2, 3, {0.f, 1.f, 2.f, 3.f, 4.f, -1.f});
  CHECK(m.min == -1.f);
  CHECK(m.max == 4.f);
  CHECK(m.at(1, 1) == 4.f);
  CHECK(m.sum() == doctest::Approx(9.0));
  CHECK(m.support(0.5) == 2u);
  CHECK_THROWS_AS(HeatMap::from_values(2, 2, {1.f}), ConfigError);

  const fs::path pgm = scratch("m.pgm"), csv = scratch("m.csv");
  m.write_pgm(pgm, {"digest 0123", "seed 4"});
  std::ifstream in(pgm, std::ios::binary);
  std::string magic, line, comments;
  std::getline(in, magic);
  CHECK(magic == "P5");
  while (in.peek() == '#') {
    std::getline(in, line);
    comments += line + "\n";
  }
  CHECK(comments.find("# digest 0123") != std::string::npos);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  in.get();
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(maxval == 255);
  std::vector<unsigned char> px(6);
  in.read(reinterpret_cast<char*>(px.data()), 6);
  CHECK(in.gcount() == 6);
  CHECK(px[5] == 0);
  CHECK(px[4] == 255);
  CHECK(px[0] == 51);  // (0 - -1) / 5 * 255
  CHECK(in.peek() == std::char_traits<char>::eof());

  m.write_csv(csv, {"seed 4"});
  std::ifstream c(csv);
  std::getline(c, line);
  CHECK(line == "# seed 4");
  std::getline(c, line);
  while (line.starts_with("#")) std::getline(c, line);
  CHECK(line == "row,col,value");
  double total = 0;
  int rows = 0;
  while (std::getline(c, line)) {
    const auto f = split(line, ',');
    REQUIRE(f.size() == 3u);
    CHECK(m.at(std::stoi(f[0]), std::stoi(f[1])) == std::stof(f[2]));
    total += std::stod(f[2]);
    ++rows;
  }
  CHECK(rows == 6);
  CHECK(total == doctest::Approx(9.0));

  const HeatMap flat = HeatMap::from_values(1, 2, {2.f, 2.f});
  flat.write_pgm(pgm);
  std::ifstream fin(pgm, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(fin)), std::istreambuf_iterator<char>());
  CHECK(all.substr(all.size() - 2) == std::string(2, '\0'));
  CHECK(HeatMap::from_values(1, 2, {0.f, 0.f}).support() == 0u);
}

TEST_CASE("receptive field of a single 3x3 convolution is its stencil") {
  std::mt19937_64 rng(1);
  const auto kernel = random_tensor<double>({4, 3, 3, 3}, rng, 0.5, 1.5);
  Tape<double> tape;
  Var<double> x = tape.leaf("input", random_tensor<double>({1, 3, 9, 9}, rng));
  Var<double> y = conv2d<double>(x, tape.constant(kernel), std::nullopt, ConvGeom{1, 1, 1});
  const HeatMap m = input_gradient_map(tape, x, y, 4, 6);
  CHECK(m.height == 9);
  CHECK(m.width == 9);
  CHECK(m.support() == 9u);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) {
      const bool inside = std::abs(r - 4) <= 1 && std::abs(c - 6) <= 1;
      if (!inside) CHECK(m.at(r, c) == 0.f);
      if (inside) {
        // Oracle: mean over input channels of |sum over output channels of the tap|.
        double expect = 0;
        for (int ci = 0; ci < 3; ++ci) {
          double s = 0;
          for (int co = 0; co < 4; ++co) s += kernel.at(co, ci, r - 4 + 1, c - 6 + 1);
          expect += std::abs(s) / 3;
        }
        CHECK(m.at(r, c) == doctest::Approx(expect).epsilon(1e-6));
      }
    }
  CHECK_THROWS_AS(input_gradient_map(tape, x, y, 9, 0), ConfigError);
}

TEST_CASE("effective receptive field of a model") {
  const ModelSpec micro = ModelSpec::builtin("micro");
  const auto store = build_model<double>(micro, 0);
  std::mt19937_64 rng(2);

  SUBCASE("zero image and zero biases give a zero map") {
    const HeatMap m = erf_map(store, micro, Tensor<double>({1, 3, 64, 64}), 2);
    CHECK(m.height == 64);
    CHECK(m.width == 64);
    CHECK(m.max == 0.f);
    CHECK(m.support() == 0u);
  }
  SUBCASE("deeper stages see further") {
    const auto image = random_tensor<double>({1, 3, 64, 64}, rng);
    const HeatMap s1 = erf_map(store, micro, image, 1), s2 = erf_map(store, micro, image, 2);
    CHECK(s1.support() > 0u);
    CHECK(s2.support() > s1.support());
    CHECK_THROWS_AS(erf_map(store, micro, image, 2, 4, 0), ConfigError);
    CHECK_THROWS_AS(erf_map(store, micro, image, 4), ConfigError);
  }
}

TEST_CASE("aggregation accumulation") {
  std::mt19937_64 rng(3);
  for (int kernel : {1, 3, 5}) {
    for (int groups : {1, 2, 4}) {
      const auto w = random_tensor<double>({1, groups * kernel * kernel, 5, 7}, rng);
      const HeatMap m = accumulate_aggregation(w, kernel, groups);
      const auto expect = tally_taps(w, kernel, groups);
      REQUIRE(m.values.size() == expect.size());
      double total = 0;
      for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(m.values[i] == doctest::Approx(expect[i]).epsilon(1e-6));
        total += expect[i];
      }
      CHECK(m.sum() == doctest::Approx(total).epsilon(1e-6));
    }
  }
  const HeatMap d = accumulate_aggregation(delta_weight_map<double>({1, 18, 4, 4}, 3), 3, 2);
  for (float v : d.values) CHECK(v == 1.f);
  CHECK_THROWS_AS(accumulate_aggregation(Tensor<double>({1, 10, 4, 4}), 3, 1), ConfigError);
}

TEST_CASE("aggregation weights of a model layer") {
  const ModelSpec micro = ModelSpec::builtin("micro");
  CHECK(ls_conv_prefixes(micro, 0).empty());
  CHECK(ls_conv_prefixes(micro, 2) ==
        std::vector<std::string>{"stages.2.blocks.0.mixer", "stages.2.blocks.1.mixer"});
  auto store = build_model<double>(micro, 0);
  test::randomize_store(store, 4);
  std::mt19937_64 rng(4);
  const auto image = random_tensor<double>({1, 3, 64, 64}, rng);

  SUBCASE("delta weights give a flat map") {
    const AggregationMap a = aggregation_weights(store, micro, image, 1, 0, true);
    CHECK(a.feature.height == 4);
    CHECK(a.feature.max == a.feature.min);
    CHECK(a.upsampled.max == a.upsampled.min);
    CHECK(a.mass == doctest::Approx(16.0));
  }
  SUBCASE("mass is conserved through upsampling and the CSV") {
    const AggregationMap a = aggregation_weights(store, micro, image, 2, 1);
    CHECK(a.layer == "stages.2.blocks.1.mixer");
    CHECK(a.upsampled.height == 64);
    CHECK(a.upsampled.width == 64);
    CHECK(a.mass > 0);
    CHECK(std::abs(a.feature.sum() - a.mass) <= 1e-4 * a.mass);
    CHECK(std::abs(a.upsampled.sum() - a.mass) <= 1e-4 * a.mass);

    const fs::path csv = scratch("agg.csv"), pgm = scratch("agg.pgm");
    a.upsampled.write_csv(csv);
    a.upsampled.write_pgm(pgm);
    std::ifstream c(csv);
    std::string line;
    double total = 0;
    while (std::getline(c, line)) {
      if (line.empty() || line[0] == '#' || line[0] == 'r') continue;
      total += std::stod(split(line, ',')[2]);
    }
    CHECK(std::abs(total - a.mass) <= 1e-4 * a.mass);
    std::ifstream p(pgm, std::ios::binary);
    std::getline(p, line);
    while (p.peek() == '#') std::getline(p, line);
    int w = 0, h = 0;
    p >> w >> h;
    CHECK(w == 64);
    CHECK(h == 64);
  }
  SUBCASE("layer index out of range") {
    CHECK_THROWS_AS(aggregation_weights(store, micro, image, 2, 2), ConfigError);
    CHECK_THROWS_AS(aggregation_weights(store, micro, image, 0, 0), ConfigError);
  }
}

TEST_CASE("benchmark rows") {
  int calls = 0;
  const BenchStats one = time_op("noop", "1x1", 1000, 1, [&] { ++calls; });
  CHECK(calls == kBenchWarmup + 1);
  const BenchStats nine = time_op("noop", "1x1", 1000, 9, [&] { ++calls; });
  CHECK(calls == 2 * kBenchWarmup + 10);
  CHECK(nine.min_s <= nine.median_s);
  CHECK(nine.median_s <= nine.max_s);
  CHECK(one.min_s == one.median_s);
  const auto header = split(BenchStats::csv_header(), ',');
  CHECK(header.size() == 8u);
  CHECK(split(one.csv_row(), ',').size() == header.size());
  CHECK(split(nine.csv_row(), ',').size() == header.size());
  CHECK(split(nine.csv_row(), ',')[2] == "9");
  CHECK_THROWS_AS(time_op("noop", "", 0, 0, [] {}), ConfigError);

  const BenchStats model = bench_model(ModelSpec::builtin("micro"), 32, 32, 2, 3);
  CHECK(model.macs == 2 * count_macs(ModelSpec::builtin("micro"), 32, 32).total_macs);
  const double reported = std::stod(split(model.csv_row(), ',')[7]);
  CHECK(reported == doctest::Approx(double(model.macs) / model.median_s).epsilon(1e-6));
}

TEST_CASE("optimized aggregation beats the naive oracle") {
  const SkaBench b = bench_ska({1, 64, 64, 64}, 3, 8, 9);
  CHECK(b.max_abs_diff < 1e-5);
  CHECK(b.fast.macs == 64u * 64u * 64u * 9u);
  CHECK(b.speedup() >= 2.0);
}
