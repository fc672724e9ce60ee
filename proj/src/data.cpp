#include "lsnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace lsnet {

namespace {

constexpr std::uint32_t kIdxU8 = 0x00000800;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint32_t read_be32(const std::string& s, std::size_t pos) {
  return (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[pos])) << 24) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[pos + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[pos + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[pos + 3]));
}

void write_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

/// Parses an IDX u8 file; returns dims and the payload.
std::vector<std::uint32_t> read_idx(const std::filesystem::path& path, std::string& payload) {
  const std::string raw = slurp(path);
  const std::string what = path.string();
  if (raw.size() < 4) throw FormatError(what + ": too short for an IDX header");
  const std::uint32_t magic = read_be32(raw, 0);
  if ((magic & 0xffffff00u) != kIdxU8) throw FormatError(what + ": bad IDX magic (u8 data expected)");
  const std::uint32_t rank = magic & 0xffu;
  if (rank == 0 || rank > 4) throw FormatError(what + ": unsupported IDX rank");
  if (raw.size() < 4 + 4 * rank) throw FormatError(what + ": truncated IDX header");
  std::vector<std::uint32_t> dims(rank);
  std::uint64_t total = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = read_be32(raw, 4 + 4 * i);
    total *= dims[i];
  }
  const std::size_t header = 4 + 4 * rank;
  if (raw.size() - header != total) {
    throw FormatError(what + ": payload holds " + std::to_string(raw.size() - header) +
                      " bytes, dims need " + std::to_string(total));
  }
  payload = raw.substr(header);
  return dims;
}

void write_idx(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
               const std::uint8_t* data, std::size_t bytes) {
  std::string out;
  write_be32(out, kIdxU8 | static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) write_be32(out, d);
  out.append(reinterpret_cast<const char*>(data), bytes);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<float> parse_floats(const std::string& text, const std::string& what) {
  std::vector<float> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw FormatError(what + ": empty list item");
    float v = 0;
    const char* first = item.data() + b;
    const char* last = item.data() + e + 1;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) throw FormatError(what + ": bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::string format_floats(const std::vector<float>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, values[i]);
    s += (i ? "," : "") + std::string(buf, ptr);
  }
  return s;
}

void channel_stats(Dataset& d) {
  const int c = d.shape.c;
  const std::size_t plane = d.shape.plane();
  d.mean.assign(c, 0.0f);
  d.std.assign(c, 1.0f);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    std::size_t count = 0;
    for (int n = 0; n < d.shape.n; ++n) {
      const std::uint8_t* p = d.pixels.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double x = p[i] / 255.0;
        sum += x;
        sq += x * x;
      }
      count += plane;
    }
    if (count == 0) continue;
    const double mu = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mu * mu);
    d.mean[ch] = static_cast<float>(mu);
    d.std[ch] = static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0);
  }
}

Dataset load_idx(const std::filesystem::path& dir) {
  Dataset d;
  std::string images, labels;
  const auto idims = read_idx(dir / "images.idx", images);
  const auto ldims = read_idx(dir / "labels.idx", labels);
  if (idims.size() != 4) throw FormatError("images.idx must be rank 4 (N,C,H,W)");
  if (ldims.size() != 1) throw FormatError("labels.idx must be rank 1");
  if (ldims[0] != idims[0]) throw FormatError("image and label counts differ");
  d.shape = {static_cast<int>(idims[0]), static_cast<int>(idims[1]), static_cast<int>(idims[2]),
             static_cast<int>(idims[3])};
  d.pixels.assign(images.begin(), images.end());
  d.labels.reserve(labels.size());
  for (unsigned char l : labels) d.labels.push_back(l);

  const auto meta_path = dir / "meta.txt";
  if (std::filesystem::exists(meta_path)) {
    std::istringstream meta(slurp(meta_path));
    std::string line;
    while (std::getline(meta, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("meta.txt: expected 'key = value'");
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      key.erase(key.find_last_not_of(' ') + 1);
      value.erase(0, value.find_first_not_of(' '));
      if (key == "classes") {
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), d.classes);
        if (ec != std::errc{} || ptr != value.data() + value.size()) {
          throw FormatError("meta.txt: bad class count '" + value + "'");
        }
      } else if (key == "mean") {
        d.mean = parse_floats(value, "meta.txt mean");
      } else if (key == "std") {
        d.std = parse_floats(value, "meta.txt std");
      } else {
        throw FormatError("meta.txt: unknown key '" + key + "'");
      }
    }
  }
  if (d.classes == 0) {
    d.classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  }
  if (d.mean.empty() || d.std.empty()) channel_stats(d);
  return d;
}

Dataset load_raw_dir(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw FormatError(root.string() + " is not a directory");
  std::map<int, std::vector<std::filesystem::path>> by_label;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    int label = 0;
    auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), label);
    if (ec != std::errc{} || ptr != name.data() + name.size() || label < 0) {
      throw FormatError("raw-dir: class directory '" + name + "' is not a non-negative integer");
    }
    auto& files = by_label[label];
    for (const auto& f : std::filesystem::directory_iterator(entry.path())) {
      const auto ext = f.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
  }
  if (by_label.empty()) throw FormatError("raw-dir: no class directories under " + root.string());
  Dataset d;
  d.classes = by_label.rbegin()->first + 1;
  for (const auto& [label, files] : by_label) {
    for (const auto& f : files) {
      RawImage img = read_pnm(f);
      if (img.channels == 1) {
        std::vector<std::uint8_t> rgb;
        rgb.reserve(img.pixels.size() * 3);
        for (int c = 0; c < 3; ++c) rgb.insert(rgb.end(), img.pixels.begin(), img.pixels.end());
        img.pixels = std::move(rgb);
        img.channels = 3;
      }
      if (d.labels.empty()) {
        d.shape = {0, img.channels, img.height, img.width};
      } else if (img.height != d.shape.h || img.width != d.shape.w) {
        throw FormatError("raw-dir: " + f.string() + " differs in size from earlier images");
      }
      d.pixels.insert(d.pixels.end(), img.pixels.begin(), img.pixels.end());
      d.labels.push_back(label);
      ++d.shape.n;
    }
  }
  if (d.labels.empty()) throw FormatError("raw-dir: no .pgm/.ppm images found");
  channel_stats(d);
  return d;
}

}  // namespace

void Dataset::validate() const {
  if (pixels.size() != shape.numel()) throw FormatError("dataset: pixel buffer does not match shape");
  if (labels.size() != static_cast<std::size_t>(shape.n)) throw FormatError("dataset: label count mismatch");
  if (classes <= 0) throw DataError("dataset: class count must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (mean.size() != static_cast<std::size_t>(shape.c) || std.size() != static_cast<std::size_t>(shape.c)) {
    throw DataError("dataset: normalization needs one mean/std per channel");
  }
  for (float s : std) {
    if (!(s > 0.0f)) throw DataError("dataset: std must be positive");
  }
}

RawImage read_pnm(const std::filesystem::path& path) {
  const std::string raw = slurp(path);
  const std::string what = path.string();
  if (raw.size() < 2 || raw[0] != 'P' || (raw[1] != '5' && raw[1] != '6')) {
    throw FormatError(what + ": not a binary PGM/PPM");
  }
  RawImage img;
  img.channels = raw[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  auto next_int = [&]() {
    while (pos < raw.size()) {
      if (raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    int v = 0;
    auto [ptr, ec] = std::from_chars(raw.data() + pos, raw.data() + raw.size(), v);
    if (ec != std::errc{}) throw FormatError(what + ": malformed header");
    pos = static_cast<std::size_t>(ptr - raw.data());
    return v;
  };
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw FormatError(what + ": only maxval 255 is supported");
  if (img.width <= 0 || img.height <= 0) throw FormatError(what + ": bad extents");
  ++pos;  // single whitespace before the raster
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  const std::size_t bytes = plane * img.channels;
  if (raw.size() < pos + bytes) throw FormatError(what + ": truncated raster");
  img.pixels.resize(bytes);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      img.pixels[c * plane + i] = static_cast<std::uint8_t>(raw[pos + i * img.channels + c]);
    }
  }
  return img;
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format) {
  Dataset d = format == DataFormat::idx ? load_idx(path) : load_raw_dir(path);
  d.validate();
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  if (data.classes > 256) throw DataError("IDX labels are u8; at most 256 classes");
  std::filesystem::create_directories(dir);
  write_idx(dir / "images.idx",
            {static_cast<std::uint32_t>(data.shape.n), static_cast<std::uint32_t>(data.shape.c),
             static_cast<std::uint32_t>(data.shape.h), static_cast<std::uint32_t>(data.shape.w)},
            data.pixels.data(), data.pixels.size());
  std::vector<std::uint8_t> labels(data.labels.begin(), data.labels.end());
  write_idx(dir / "labels.idx", {static_cast<std::uint32_t>(labels.size())}, labels.data(), labels.size());
  std::ofstream meta(dir / "meta.txt", std::ios::trunc);
  meta << "classes = " << data.classes << '\n';
  meta << "mean = " << format_floats(data.mean) << '\n';
  meta << "std = " << format_floats(data.std) << '\n';
}

namespace {

Dataset generate_blobs(int count, std::uint64_t seed) {
  constexpr int kSize = 32;
  constexpr int kClasses = 10;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Dataset d;
  d.shape = {count, 3, kSize, kSize};
  d.classes = kClasses;
  d.pixels.resize(d.shape.numel());
  d.labels.resize(count);
  const std::size_t plane = kSize * kSize;
  for (int n = 0; n < count; ++n) {
    const int label = n % kClasses;
    d.labels[n] = label;
    const double angle = 2.0 * std::numbers::pi * label / kClasses + 0.05 * gauss(rng);
    const double radius = 10.0 + 0.5 * gauss(rng);
    const double cx = 15.5 + radius * std::cos(angle);
    const double cy = 15.5 + radius * std::sin(angle);
    const double sigma = 2.5 + 0.6 * (uni(rng) - 0.5);
    const double amplitude = 150.0 + 80.0 * uni(rng);
    const double background = 10.0 + 40.0 * uni(rng);
    std::array<double, 3> tint{};
    for (auto& t : tint) t = 0.6 + 0.4 * uni(rng);
    for (int c = 0; c < 3; ++c) {
      std::uint8_t* p = d.pixels.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
      for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
          const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          const double v = background + amplitude * tint[c] * std::exp(-r2 / (2 * sigma * sigma)) +
                           12.0 * gauss(rng);
          p[y * kSize + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  return d;
}

}  // namespace

Dataset make_blobs10(bool train, std::uint64_t seed) {
  Dataset train_split = generate_blobs(2000, seed);
  channel_stats(train_split);
  if (train) return train_split;
  Dataset test = generate_blobs(500, seed ^ 0x9e3779b97f4a7c15ULL);
  test.mean = train_split.mean;
  test.std = train_split.std;
  return test;
}

Dataset open_dataset(std::string_view source, std::uint64_t seed) {
  if (source == "blobs10") return make_blobs10(true, seed);
  if (source == "blobs10-test") return make_blobs10(false, seed);
  const std::filesystem::path path{std::string(source)};
  if (std::filesystem::exists(path / "images.idx")) return load_dataset(path, DataFormat::idx);
  if (std::filesystem::is_directory(path)) return load_dataset(path, DataFormat::raw_dir);
  throw FormatError("unknown dataset '" + std::string(source) + "'");
}

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, bool hflip,
                    std::mt19937_64* rng) {
  if (hflip && rng == nullptr) throw ConfigError("make_batch: hflip needs an rng");
  const Shape s = data.shape;
  Batch<T> batch;
  batch.images = Tensor<T>({static_cast<int>(indices.size()), s.c, s.h, s.w});
  batch.labels.reserve(indices.size());
  const std::size_t sample = static_cast<std::size_t>(s.c) * s.plane();
  std::bernoulli_distribution coin(0.5);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t idx = indices[b];
    if (idx >= data.size()) throw DataError("make_batch: sample index out of range");
    batch.labels.push_back(data.labels[idx]);
    const bool flip = hflip && coin(*rng);
    const std::uint8_t* src = data.pixels.data() + idx * sample;
    T* dst = batch.images.data().data() + b * sample;
    for (int c = 0; c < s.c; ++c) {
      const double mu = data.mean[c];
      const double inv = 1.0 / data.std[c];
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          const int sx = flip ? s.w - 1 - x : x;
          const double v = src[(static_cast<std::size_t>(c) * s.h + y) * s.w + sx] / 255.0;
          dst[(static_cast<std::size_t>(c) * s.h + y) * s.w + x] = static_cast<T>((v - mu) * inv);
        }
      }
    }
  }
  return batch;
}

template Batch<float> make_batch(const Dataset&, std::span<const std::size_t>, bool, std::mt19937_64*);
template Batch<double> make_batch(const Dataset&, std::span<const std::size_t>, bool, std::mt19937_64*);

}  // namespace lsnet
