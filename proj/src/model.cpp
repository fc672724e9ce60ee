#include "lsnet/model.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "lsnet/checked.hpp"

namespace lsnet {

namespace {

constexpr char kSpecHeader[] = "lsnet-spec 1";
constexpr char kWeightMagic[4] = {'L', 'S', 'W', '1'};
constexpr std::uint32_t kWeightVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& key, const std::string& text) {
  int value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("spec: '" + key + "' expects an integer, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("spec: '" + key + "' expects true/false, got '" + text + "'");
}

template <std::size_t N>
std::array<int, N> parse_list(const std::string& key, const std::string& text) {
  std::array<int, N> out{};
  std::size_t i = 0;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (i == N) throw ConfigError("spec: '" + key + "' expects " + std::to_string(N) + " values");
    out[i++] = parse_int(key, trim(item));
  }
  if (i != N) throw ConfigError("spec: '" + key + "' expects " + std::to_string(N) + " values");
  return out;
}

template <std::size_t N>
std::string join(const std::array<int, N>& v) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string block_prefix(int stage, int index) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(index);
}

std::string down_prefix(int stage) { return "stages." + std::to_string(stage) + ".down"; }

int halve(int extent) { return (extent - 1) / 2 + 1; }

}  // namespace

void ModelSpec::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (stem[i] <= 0) throw ConfigError("spec: stem channels must be positive");
  }
  if (stem[2] != stages[0].channels) {
    throw ConfigError("spec: last stem width " + std::to_string(stem[2]) +
                      " must equal stage-1 channels " + std::to_string(stages[0].channels));
  }
  for (int s = 0; s < 4; ++s) {
    const auto& st = stages[s];
    if (st.channels <= 0) throw ConfigError("spec: stage channels must be positive");
    if (st.blocks < 0) throw ConfigError("spec: block counts must be non-negative");
    const MixerKind expected = s == 3 ? MixerKind::msa : MixerKind::ls;
    if (st.mixer != expected) throw ConfigError("spec: stages 1-3 mix with LS conv, stage 4 with MSA");
  }
  if (classes <= 0) throw ConfigError("spec: classes must be positive");
  if (group_width <= 0) throw ConfigError("spec: group_width must be positive");
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < stages[s].blocks; ++i) block_config(s, i).validate();
  }
}

BlockConfig ModelSpec::block_config(int stage, int index) const {
  if (stage < 0 || stage > 3) throw ConfigError("stage index out of range");
  const StageSpec& st = stages[stage];
  if (index < 0 || index >= st.blocks) throw ConfigError("block index out of range");
  BlockConfig cfg;
  cfg.channels = st.channels;
  cfg.ffn_ratio = ffn_ratio;
  cfg.se_reduction = se_reduction;
  const bool local = layout == BlockLayout::full || index % 2 == 0;
  const bool mixing = layout == BlockLayout::full || index % 2 == 1;
  cfg.dw = local && !ablation.no_dw;
  cfg.se = local && !ablation.no_se;
  cfg.mixer = mixing ? st.mixer : MixerKind::none;
  if (st.channels % group_width != 0) {
    throw ConfigError("spec: group_width " + std::to_string(group_width) + " does not divide " +
                      std::to_string(st.channels) + " channels");
  }
  cfg.ls = {st.channels, large_kernel, small_kernel, st.channels / group_width, !ablation.no_lkp_dw};
  cfg.msa = {st.channels, msa_heads, msa_key_dim};
  return cfg;
}

std::string ModelSpec::to_text() const {
  std::ostringstream out;
  out << kSpecHeader << '\n';
  out << "name = " << name << '\n';
  out << "stem = " << join(stem) << '\n';
  std::array<int, 4> ch{}, bl{};
  for (int s = 0; s < 4; ++s) {
    ch[s] = stages[s].channels;
    bl[s] = stages[s].blocks;
  }
  out << "channels = " << join(ch) << '\n';
  out << "blocks = " << join(bl) << '\n';
  out << "classes = " << classes << '\n';
  out << "large_kernel = " << large_kernel << '\n';
  out << "small_kernel = " << small_kernel << '\n';
  out << "group_width = " << group_width << '\n';
  out << "ffn_ratio = " << ffn_ratio << '\n';
  out << "se_reduction = " << se_reduction << '\n';
  out << "msa_heads = " << msa_heads << '\n';
  out << "msa_key_dim = " << msa_key_dim << '\n';
  out << "layout = " << (layout == BlockLayout::full ? "full" : "alternating") << '\n';
  out << "no_dw = " << (ablation.no_dw ? "true" : "false") << '\n';
  out << "no_se = " << (ablation.no_se ? "true" : "false") << '\n';
  out << "no_lkp_dw = " << (ablation.no_lkp_dw ? "true" : "false") << '\n';
  return out.str();
}

ModelSpec ModelSpec::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  ModelSpec spec;
  bool have_stem = false, have_channels = false, have_blocks = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != kSpecHeader) throw ConfigError("spec: first line must be '" + std::string(kSpecHeader) + "'");
      header = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("spec line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "name") {
      spec.name = value;
    } else if (key == "stem") {
      spec.stem = parse_list<3>(key, value);
      have_stem = true;
    } else if (key == "channels") {
      auto v = parse_list<4>(key, value);
      for (int s = 0; s < 4; ++s) spec.stages[s].channels = v[s];
      have_channels = true;
    } else if (key == "blocks") {
      auto v = parse_list<4>(key, value);
      for (int s = 0; s < 4; ++s) spec.stages[s].blocks = v[s];
      have_blocks = true;
    } else if (key == "classes") {
      spec.classes = parse_int(key, value);
    } else if (key == "large_kernel") {
      spec.large_kernel = parse_int(key, value);
    } else if (key == "small_kernel") {
      spec.small_kernel = parse_int(key, value);
    } else if (key == "group_width") {
      spec.group_width = parse_int(key, value);
    } else if (key == "ffn_ratio") {
      spec.ffn_ratio = parse_int(key, value);
    } else if (key == "se_reduction") {
      spec.se_reduction = parse_int(key, value);
    } else if (key == "msa_heads") {
      spec.msa_heads = parse_int(key, value);
    } else if (key == "msa_key_dim") {
      spec.msa_key_dim = parse_int(key, value);
    } else if (key == "layout") {
      if (value == "full") {
        spec.layout = BlockLayout::full;
      } else if (value == "alternating") {
        spec.layout = BlockLayout::alternating;
      } else {
        throw ConfigError("spec: layout must be 'full' or 'alternating'");
      }
    } else if (key == "no_dw") {
      spec.ablation.no_dw = parse_bool(key, value);
    } else if (key == "no_se") {
      spec.ablation.no_se = parse_bool(key, value);
    } else if (key == "no_lkp_dw") {
      spec.ablation.no_lkp_dw = parse_bool(key, value);
    } else {
      throw ConfigError("spec: unknown key '" + key + "'");
    }
  }
  if (!header) throw ConfigError("spec: empty document");
  if (!have_stem || !have_channels || !have_blocks) {
    throw ConfigError("spec: 'stem', 'channels' and 'blocks' are required");
  }
  for (int s = 0; s < 4; ++s) spec.stages[s].mixer = s == 3 ? MixerKind::msa : MixerKind::ls;
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::uint64_t ModelSpec::digest() const { return fnv1a(to_text()); }

ModelSpec ModelSpec::builtin(std::string_view name) {
  ModelSpec spec;
  spec.name = std::string(name);
  auto set = [&spec](std::array<int, 3> stem, std::array<int, 4> ch, std::array<int, 4> bl) {
    spec.stem = stem;
    for (int s = 0; s < 4; ++s) {
      spec.stages[s] = {ch[s], bl[s], s == 3 ? MixerKind::msa : MixerKind::ls};
    }
  };
  if (name == "t") {
    set({16, 32, 64}, {64, 128, 256, 384}, {0, 2, 8, 10});
  } else if (name == "s") {
    set({24, 48, 96}, {96, 192, 320, 448}, {1, 2, 8, 10});
  } else if (name == "b") {
    set({32, 64, 128}, {128, 256, 384, 512}, {4, 6, 8, 10});
  } else if (name == "micro") {
    set({8, 16, 32}, {32, 64, 96, 128}, {0, 1, 2, 2});
    spec.classes = 10;
    spec.layout = BlockLayout::full;
  } else if (name == "nano") {
    set({4, 8, 16}, {16, 16, 16, 16}, {0, 1, 1, 1});
    spec.classes = 4;
    spec.layout = BlockLayout::full;
    spec.msa_heads = 2;
    spec.msa_key_dim = 4;
  } else {
    throw ConfigError("unknown variant '" + std::string(name) + "'");
  }
  spec.validate();
  return spec;
}

ParamLayout model_layout(const ModelSpec& spec) {
  spec.validate();
  ParamLayout layout;
  declare_stem(layout, "stem", spec.stem);
  int prev = spec.stem[2];
  for (int s = 0; s < 4; ++s) {
    const int c = spec.stages[s].channels;
    if (s > 0) declare_downsample(layout, down_prefix(s), prev, c);
    for (int i = 0; i < spec.stages[s].blocks; ++i) {
      declare_block(layout, block_prefix(s, i), spec.block_config(s, i));
    }
    prev = c;
  }
  layout.bn("head", prev);
  layout.conv("head.linear", spec.classes, prev, 1, 1, true);
  return layout;
}

template <typename T>
ParamStore<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  return initialize<T>(model_layout(spec), seed);
}

template <typename T>
std::uint64_t count_params(const ParamStore<T>& store) {
  return store.learnable_count();
}

MacReport count_macs(const ModelSpec& spec, int height, int width) {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("count_macs: H and W must be positive multiples of 8");
  }
  const ParamLayout layout = model_layout(spec);
  auto params_under = [&layout](const std::string& prefix) {
    std::uint64_t n = 0;
    for (const auto& d : layout.decls()) {
      if (d.learnable && d.name.compare(0, prefix.size(), prefix) == 0) n += d.shape.numel();
    }
    return n;
  };

  MacReport report;
  report.height = height;
  report.width = width;
  auto add = [&report](std::string name, std::string kind, std::uint64_t macs, std::uint64_t params,
                       std::optional<LsConvMacs> ls = std::nullopt) {
    report.entries.push_back({std::move(name), std::move(kind), macs, params, ls});
    report.total_macs = checked_add(report.total_macs, macs);
    report.total_params = checked_add(report.total_params, params);
  };

  std::uint64_t h = height, w = width;
  int in = 3;
  for (int i = 0; i < 3; ++i) {
    h = halve(static_cast<int>(h));
    w = halve(static_cast<int>(w));
    const std::string name = "stem.conv" + std::to_string(i + 1);
    add(name, "stem", checked_mul(h * w, spec.stem[i], in, 9), params_under(name + "."));
    in = spec.stem[i];
  }
  for (int s = 0; s < 4; ++s) {
    const std::uint64_t c = spec.stages[s].channels;
    if (s > 0) {
      h = halve(static_cast<int>(h));
      w = halve(static_cast<int>(w));
      const std::string p = down_prefix(s);
      add(p + ".dw", "downsample", checked_mul(h * w, in, 9), params_under(p + ".dw."));
      add(p + ".pw", "downsample", checked_mul(h * w, c, in), params_under(p + ".pw."));
    }
    const std::uint64_t hw = h * w;
    for (int i = 0; i < spec.stages[s].blocks; ++i) {
      const BlockConfig cfg = spec.block_config(s, i);
      const std::string p = block_prefix(s, i);
      if (cfg.dw) add(p + ".dw", "dw", checked_mul(hw, c, 9), params_under(p + ".dw."));
      if (cfg.se) {
        add(p + ".se", "se", checked_mul(2, c, cfg.se_hidden()), params_under(p + ".se."));
      }
      if (cfg.mixer == MixerKind::ls) {
        const LsConvMacs ls = ls_conv_macs(cfg.ls, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w));
        add(p + ".mixer", "ls_conv", ls.closed_form, params_under(p + ".mixer."), ls);
      } else if (cfg.mixer == MixerKind::msa) {
        const std::uint64_t qk = static_cast<std::uint64_t>(cfg.msa.heads) * cfg.msa.key_dim;
        std::uint64_t macs = checked_mul(hw, c, 2 * qk + 2 * c);
        macs = checked_add(macs, checked_mul(hw, hw, qk));
        macs = checked_add(macs, checked_mul(hw, hw, c));
        add(p + ".mixer", "msa", macs, params_under(p + ".mixer."));
      }
      add(p + ".ffn", "ffn", checked_mul(2, hw, c, cfg.ffn_hidden()), params_under(p + ".ffn."));
    }
    in = static_cast<int>(c);
  }
  add("head", "head", checked_mul(spec.classes, in), params_under("head."));
  return report;
}

std::string MacReport::table() const {
  std::ostringstream out;
  out << "# MACs at " << height << "x" << width << "; FLOPs = 2*MACs\n";
  out << std::left << std::setw(28) << "op" << std::setw(12) << "kind" << std::right
      << std::setw(14) << "macs" << std::setw(12) << "params" << '\n';
  for (const auto& e : entries) {
    out << std::left << std::setw(28) << e.name << std::setw(12) << e.kind << std::right
        << std::setw(14) << e.macs << std::setw(12) << e.params << '\n';
  }
  out << std::left << std::setw(40) << "total" << std::right << std::setw(14) << total_macs
      << std::setw(12) << total_params << '\n';
  out << "FLOPs (2*MACs): " << flops() << '\n';
  return out.str();
}

template <typename T>
ModelOutputs<T> run_model(Graph<T>& graph, Var<T> image, const ModelSpec& spec) {
  ModelOutputs<T> out;
  Var<T> h = stem(graph, image, "stem", spec.stem);
  out.stem = h;
  for (int s = 0; s < 4; ++s) {
    if (s > 0) h = downsample(graph, h, down_prefix(s));
    for (int i = 0; i < spec.stages[s].blocks; ++i) {
      h = block(graph, h, block_prefix(s, i), spec.block_config(s, i));
    }
    out.stages.push_back(h);
  }
  auto scope = graph.tape().scope("classifier");
  h = graph.bn(global_avg_pool(h), "head");
  out.logits = graph.conv(h, "head.linear", {});
  return out;
}

template <typename T>
Tensor<T> forward_classify(const ParamStore<T>& store, const ModelSpec& spec, const Tensor<T>& images) {
  Tape<T> tape(false);
  // Infer-mode batch norm only reads running statistics, so the store is never written.
  Graph<T> graph(tape, const_cast<ParamStore<T>&>(store), Mode::infer);
  return run_model(graph, graph.input(images), spec).logits.value();
}

// ---- weight files ----

namespace {

template <typename U>
void put(std::string& buf, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
               std::conditional_t<sizeof(U) == 2, std::uint16_t,
               std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
  Bits bits;
  std::memcpy(&bits, &value, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  template <typename U>
  U get() {
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                 std::conditional_t<sizeof(U) == 2, std::uint16_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<Bits>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    U value;
    std::memcpy(&value, &bits, sizeof(U));
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void seek(std::uint64_t pos) {
    if (pos > data_.size()) throw FormatError(what_ + ": truncated");
    pos_ = pos;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError(what_ + ": truncated");
  }
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t dtype_size(std::uint8_t dtype) { return dtype == 0 ? 4 : 8; }

WeightFileInfo parse_weights(const std::string& data, const std::string& what) {
  Reader r(data, what);
  if (r.bytes(4) != std::string(kWeightMagic, 4)) throw FormatError(what + ": bad magic");
  WeightFileInfo info;
  info.file_size = data.size();
  info.version = r.get<std::uint32_t>();
  if (info.version != kWeightVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(info.version));
  }
  info.digest = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightDirEntry e;
    const auto len = r.get<std::uint16_t>();
    e.name = r.bytes(len);
    e.dtype = r.get<std::uint8_t>();
    if (e.dtype > 1) throw FormatError(what + ": unknown dtype for " + e.name);
    e.learnable = r.get<std::uint8_t>() != 0;
    e.shape = {r.get<std::int32_t>(), r.get<std::int32_t>(), r.get<std::int32_t>(), r.get<std::int32_t>()};
    if (e.shape.n < 0 || e.shape.c < 0 || e.shape.h < 0 || e.shape.w < 0) {
      throw FormatError(what + ": negative extent for " + e.name);
    }
    e.offset = r.get<std::uint64_t>();
    e.bytes = r.get<std::uint64_t>();
    if (e.bytes != e.shape.numel() * dtype_size(e.dtype)) {
      throw FormatError(what + ": byte length does not match shape for " + e.name);
    }
    info.directory.push_back(std::move(e));
  }
  std::uint64_t cursor = r.pos();
  for (const auto& e : info.directory) {
    if (e.offset < cursor) throw FormatError(what + ": overlapping or unordered blob for " + e.name);
    if (e.offset + e.bytes > data.size()) throw FormatError(what + ": truncated blob for " + e.name);
    cursor = e.offset + e.bytes;
  }
  if (cursor != data.size()) throw FormatError(what + ": trailing bytes after last blob");
  return info;
}

}  // namespace

template <typename T>
void save_weights(const ParamStore<T>& store, const ModelSpec& spec, const std::filesystem::path& path) {
  const ParamLayout layout = model_layout(spec);
  if (layout.decls().size() != store.entries().size()) {
    throw IncompatibleError("store does not match spec '" + spec.name + "'");
  }
  constexpr std::uint8_t dtype = sizeof(T) == 4 ? 0 : 1;
  std::string head;
  head.append(kWeightMagic, 4);
  put<std::uint32_t>(head, kWeightVersion);
  put<std::uint64_t>(head, spec.digest());
  put<std::uint32_t>(head, static_cast<std::uint32_t>(layout.decls().size()));

  std::size_t dir_bytes = 0;
  for (const auto& d : layout.decls()) dir_bytes += 2 + d.name.size() + 2 + 16 + 16;
  std::uint64_t offset = head.size() + dir_bytes;
  std::string blobs;
  for (const auto& d : layout.decls()) {
    const Tensor<T>& t = store.get(d.name);
    if (!(t.shape() == d.shape)) {
      throw IncompatibleError("tensor " + d.name + " has shape " + t.shape().str() + ", spec wants " +
                              d.shape.str());
    }
    const std::uint64_t bytes = t.size() * sizeof(T);
    put<std::uint16_t>(head, static_cast<std::uint16_t>(d.name.size()));
    head += d.name;
    put<std::uint8_t>(head, dtype);
    put<std::uint8_t>(head, store.learnable(d.name) ? 1 : 0);
    for (int e : {d.shape.n, d.shape.c, d.shape.h, d.shape.w}) put<std::int32_t>(head, e);
    put<std::uint64_t>(head, offset);
    put<std::uint64_t>(head, bytes);
    for (T v : t.data()) put<T>(blobs, v);
    offset += bytes;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

template <typename T>
ParamStore<T> load_weights(const std::filesystem::path& path, const ModelSpec& spec) {
  const std::string data = read_file(path);
  const std::string what = path.string();
  const WeightFileInfo info = parse_weights(data, what);
  if (info.digest != spec.digest()) {
    throw IncompatibleError(what + ": written for a different model spec");
  }
  const ParamLayout layout = model_layout(spec);
  std::map<std::string, const WeightDirEntry*> by_name;
  for (const auto& e : info.directory) by_name[e.name] = &e;
  if (by_name.size() != layout.decls().size() || info.directory.size() != by_name.size()) {
    throw IncompatibleError(what + ": tensor directory does not match the spec");
  }
  for (const auto& d : layout.decls()) {
    auto it = by_name.find(d.name);
    if (it == by_name.end() || !(it->second->shape == d.shape) || it->second->learnable != d.learnable) {
      throw IncompatibleError(what + ": tensor " + d.name + " missing or mismatched");
    }
  }
  ParamStore<T> store;
  Reader r(data, what);
  for (const auto& e : info.directory) {
    r.seek(e.offset);
    std::vector<T> values(e.shape.numel());
    for (auto& v : values) v = e.dtype == 0 ? static_cast<T>(r.get<float>()) : static_cast<T>(r.get<double>());
    Tensor<T> t(e.shape, std::move(values));
    check_finite(t, "load_weights(" + e.name + ")");
    store.insert(e.name, std::move(t), e.learnable);
  }
  return store;
}

WeightFileInfo inspect_weights(const std::filesystem::path& path) {
  return parse_weights(read_file(path), path.string());
}

#define LSNET_INSTANTIATE(T)                                                                     \
  template ParamStore<T> build_model(const ModelSpec&, std::uint64_t);                           \
  template std::uint64_t count_params(const ParamStore<T>&);                                     \
  template ModelOutputs<T> run_model(Graph<T>&, Var<T>, const ModelSpec&);                       \
  template Tensor<T> forward_classify(const ParamStore<T>&, const ModelSpec&, const Tensor<T>&); \
  template void save_weights(const ParamStore<T>&, const ModelSpec&, const std::filesystem::path&); \
  template ParamStore<T> load_weights(const std::filesystem::path&, const ModelSpec&);

LSNET_INSTANTIATE(float)
LSNET_INSTANTIATE(double)
#undef LSNET_INSTANTIATE

namespace {

bool within(double measured, double target, double tolerance) {
  return std::abs(measured - target) <= tolerance * target;
}

}  // namespace

bool PublishedBudget::params_ok(std::uint64_t measured) const {
  return within(static_cast<double>(measured), params, tolerance);
}

bool PublishedBudget::flops_ok(std::uint64_t macs) const {
  return within(static_cast<double>(macs), flops, tolerance) ||
         within(2.0 * static_cast<double>(macs), flops, tolerance);
}

std::optional<PublishedBudget> published_budget(std::string_view name) {
  if (name == "t") return PublishedBudget{11.4e6, 0.3e9};
  if (name == "s") return PublishedBudget{16.1e6, 0.5e9};
  if (name == "b") return PublishedBudget{23.2e6, 1.3e9};
  return std::nullopt;
}

}  // namespace lsnet
