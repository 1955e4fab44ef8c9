#include "checkpoint.hpp"

#include "config.hpp"
#include "error.hpp"
#include "serialize.hpp"
#include "tensor_io.hpp"

namespace dafe {

namespace {

void write_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f64(v);
}

Tensor read_tensor(ByteReader& r) {
  std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8)
    raise(ErrorCode::format, "checkpoint: implausible tensor rank at offset " +
                                 std::to_string(r.offset()));
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = r.u32();
    if (shape[i] == 0)
      raise(ErrorCode::format, "checkpoint: zero tensor dimension at offset " +
                                   std::to_string(r.offset()));
    count *= shape[i];
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

std::vector<char> encode_settings(const EmbeddingSettings& s) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(s.input.height));
  w.u32(static_cast<std::uint32_t>(s.input.width));
  w.u32(s.input.whiten_intensity ? 1 : 0);
  w.u32(s.input.use_lbp ? 1 : 0);
  w.u32(s.input.use_gabor ? 1 : 0);
  w.f64_vec(s.input.gabor.wavelengths);
  w.u32(static_cast<std::uint32_t>(s.input.gabor.orientations));
  w.u32(static_cast<std::uint32_t>(s.input.gabor.kernel_size));
  w.f64(s.input.gabor.sigma_ratio);
  w.f64(s.input.gabor.aspect);
  w.f64(s.input.gabor.phase);
  w.u32(s.per_representation ? 1 : 0);
  w.u64(s.filters.size());
  for (std::size_t f : s.filters) w.u32(static_cast<std::uint32_t>(f));
  for (std::size_t f : s.filter_sizes) w.u32(static_cast<std::uint32_t>(f));
  for (std::size_t f : s.pool_sizes) w.u32(static_cast<std::uint32_t>(f));
  w.f64(s.init_stddev);
  w.u32(s.mode == FeatureMode::third_layer ? 0 : 1);
  w.u32(s.pca_enabled ? 1 : 0);
  w.u64(s.pca_components);
  return w.bytes();
}

EmbeddingSettings decode_settings(ByteReader& r) {
  EmbeddingSettings s;
  s.input.height = r.u32();
  s.input.width = r.u32();
  s.input.whiten_intensity = r.u32() != 0;
  s.input.use_lbp = r.u32() != 0;
  s.input.use_gabor = r.u32() != 0;
  s.input.gabor.wavelengths = r.f64_vec();
  s.input.gabor.orientations = r.u32();
  s.input.gabor.kernel_size = r.u32();
  s.input.gabor.sigma_ratio = r.f64();
  s.input.gabor.aspect = r.f64();
  s.input.gabor.phase = r.f64();
  s.per_representation = r.u32() != 0;
  std::uint64_t layers = r.u64();
  if (layers == 0 || layers > 64)
    raise(ErrorCode::format, "checkpoint: implausible layer count");
  s.filters.resize(layers);
  s.filter_sizes.resize(layers);
  s.pool_sizes.resize(layers);
  for (auto& v : s.filters) v = r.u32();
  for (auto& v : s.filter_sizes) v = r.u32();
  for (auto& v : s.pool_sizes) v = r.u32();
  s.init_stddev = r.f64();
  s.mode = r.u32() == 0 ? FeatureMode::third_layer : FeatureMode::concat_all;
  s.pca_enabled = r.u32() != 0;
  s.pca_components = r.u64();
  return s;
}

std::vector<char> encode_stacks(const EmbeddingModel& model) {
  ByteWriter w;
  w.u64(model.stacks.size());
  for (const CdbnStack& stack : model.stacks) {
    w.u32(stack.initialized ? 1 : 0);
    w.u32(stack.pretrained ? 1 : 0);
    w.u64(stack.layers.size());
    for (const CrbmLayer& layer : stack.layers) {
      w.u32(static_cast<std::uint32_t>(layer.in_channels));
      w.u32(static_cast<std::uint32_t>(layer.num_filters));
      w.u32(static_cast<std::uint32_t>(layer.filter_size));
      w.u32(static_cast<std::uint32_t>(layer.pool_size));
      write_tensor(w, layer.filters);
      w.f64_vec(layer.hidden_bias);
      w.f64(layer.visible_bias);
    }
  }
  return w.bytes();
}

void decode_stacks(ByteReader& r, EmbeddingModel& model) {
  std::uint64_t count = r.u64();
  if (count == 0 || count > 16)
    raise(ErrorCode::format, "checkpoint: implausible stack count");
  model.stacks.resize(count);
  for (CdbnStack& stack : model.stacks) {
    stack.initialized = r.u32() != 0;
    stack.pretrained = r.u32() != 0;
    std::uint64_t layers = r.u64();
    if (layers == 0 || layers > 64)
      raise(ErrorCode::format, "checkpoint: implausible layer count");
    stack.layers.clear();
    for (std::uint64_t l = 0; l < layers; ++l) {
      std::size_t cin = r.u32(), k = r.u32(), nw = r.u32(), pool = r.u32();
      CrbmLayer layer = CrbmLayer::create(cin, k, nw, pool);
      layer.filters = read_tensor(r);
      if (layer.filters.shape() !=
          std::vector<std::size_t>{k, cin, nw, nw})
        raise(ErrorCode::format, "checkpoint: filter tensor shape mismatch");
      layer.hidden_bias = r.f64_vec();
      if (layer.hidden_bias.size() != k)
        raise(ErrorCode::format, "checkpoint: hidden bias length mismatch");
      layer.visible_bias = r.f64();
      stack.layers.push_back(std::move(layer));
    }
  }
}

std::vector<char> encode_pca(const EmbeddingModel& model) {
  ByteWriter w;
  w.u32(model.pca_ready ? 1 : 0);
  w.u64(model.pcas.size());
  for (const PcaModel& pca : model.pcas) {
    const bool present = pca.components() > 0;
    w.u32(present ? 1 : 0);
    if (present) {
      write_tensor(w, pca.mean);
      write_tensor(w, pca.basis);
    }
  }
  return w.bytes();
}

void decode_pca(ByteReader& r, EmbeddingModel& model) {
  model.pca_ready = r.u32() != 0;
  std::uint64_t count = r.u64();
  if (count > 16) raise(ErrorCode::format, "checkpoint: implausible PCA count");
  model.pcas.resize(count);
  for (PcaModel& pca : model.pcas) {
    if (r.u32() != 0) {
      pca.mean = read_tensor(r);
      pca.basis = read_tensor(r);
      if (pca.basis.rank() != 2 || pca.basis.dim(0) != pca.mean.size())
        raise(ErrorCode::format, "checkpoint: PCA basis/mean mismatch");
    }
  }
}

std::vector<char> encode_head(const SimilarityHead& head, bool ready) {
  ByteWriter w;
  w.u32(ready ? 1 : 0);
  w.u64(head.dim);
  if (head.dim > 0) {
    write_tensor(w, head.w_e);
    write_tensor(w, head.b_e);
    write_tensor(w, head.w_u);
    write_tensor(w, head.b_u);
    write_tensor(w, head.w_c);
    write_tensor(w, head.b_c);
    write_tensor(w, head.w_s);
    w.f64(head.b_s);
  }
  return w.bytes();
}

void decode_head(ByteReader& r, SimilarityHead& head, bool& ready) {
  ready = r.u32() != 0;
  std::uint64_t dim = r.u64();
  if (dim == 0) {
    head = SimilarityHead{};
    return;
  }
  head = SimilarityHead::create(dim);
  head.w_e = read_tensor(r);
  head.b_e = read_tensor(r);
  head.w_u = read_tensor(r);
  head.b_u = read_tensor(r);
  head.w_c = read_tensor(r);
  head.b_c = read_tensor(r);
  head.w_s = read_tensor(r);
  head.b_s = r.f64();
  if (head.w_e.shape() != std::vector<std::size_t>{dim, dim} ||
      head.w_c.shape() != std::vector<std::size_t>{dim, 2 * dim} ||
      head.w_s.size() != dim)
    raise(ErrorCode::format, "checkpoint: head tensor shapes inconsistent");
}

std::vector<char> encode_optimizer(const TrainOptimizerState& opt) {
  ByteWriter w;
  w.u64(opt.iteration);
  w.f64_vec(opt.velocity);
  w.u64(opt.vr_memory.size());
  for (const auto& m : opt.vr_memory) w.f64_vec(m);
  w.f64_vec(opt.vr_memory_mean);
  w.u64(opt.vr_neighborhoods.size());
  for (const auto& set : opt.vr_neighborhoods) {
    w.u64(set.size());
    for (std::size_t j : set) w.u64(j);
  }
  return w.bytes();
}

TrainOptimizerState decode_optimizer(ByteReader& r) {
  TrainOptimizerState opt;
  opt.iteration = r.u64();
  opt.velocity = r.f64_vec();
  std::uint64_t mem = r.u64();
  if (mem > (1ull << 24)) raise(ErrorCode::format, "checkpoint: implausible memory table");
  opt.vr_memory.resize(mem);
  for (auto& m : opt.vr_memory) m = r.f64_vec();
  opt.vr_memory_mean = r.f64_vec();
  std::uint64_t sets = r.u64();
  if (sets > (1ull << 24)) raise(ErrorCode::format, "checkpoint: implausible neighborhoods");
  opt.vr_neighborhoods.resize(sets);
  for (auto& set : opt.vr_neighborhoods) {
    std::uint64_t n = r.u64();
    if (n > (1ull << 24)) raise(ErrorCode::format, "checkpoint: implausible neighborhood size");
    set.resize(n);
    for (auto& j : set) j = r.u64();
  }
  return opt;
}

std::vector<char> encode_rng(const SeededRng::State& s) {
  ByteWriter w;
  w.u64(s.seed);
  w.u64(s.stream);
  w.u64(s.counter);
  w.f64(s.gauss_cache);
  w.u32(s.has_gauss_cache ? 1 : 0);
  return w.bytes();
}

SeededRng::State decode_rng(ByteReader& r) {
  SeededRng::State s{};
  s.seed = r.u64();
  s.stream = r.u64();
  s.counter = r.u64();
  s.gauss_cache = r.f64();
  s.has_gauss_cache = r.u32() != 0;
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw("DAFE", 4);
  w.u32(kCheckpointVersion);

  std::vector<std::pair<std::string, std::vector<char>>> sections;
  {
    ByteWriter cfg;
    cfg.str(ckpt.config_snapshot);
    sections.emplace_back("config", cfg.bytes());
  }
  sections.emplace_back("settings", encode_settings(ckpt.model.settings));
  sections.emplace_back("stacks", encode_stacks(ckpt.model));
  sections.emplace_back("pca", encode_pca(ckpt.model));
  sections.emplace_back("head", encode_head(ckpt.head, ckpt.head_ready));
  sections.emplace_back("optimizer", encode_optimizer(ckpt.optimizer));
  sections.emplace_back("rng", encode_rng(ckpt.rng));

  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.str(name);
    w.u64(payload.size());
    w.raw(payload.data(), payload.size());
  }
  write_file_bytes(path, w.bytes());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::vector<char> bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  r.expect_magic("DAFE");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    raise(ErrorCode::format, "unsupported checkpoint version " + std::to_string(version) +
                                 " in " + path);
  std::uint32_t section_count = r.u32();
  if (section_count > 64)
    raise(ErrorCode::format, "checkpoint: implausible section count at offset " +
                                 std::to_string(r.offset()));

  Checkpoint ckpt;
  bool have_settings = false, have_stacks = false;
  for (std::uint32_t i = 0; i < section_count; ++i) {
    std::string name = r.str();
    std::uint64_t size = r.u64();
    if (size > r.remaining())
      raise(ErrorCode::format, "checkpoint: truncated section '" + name +
                                   "' at offset " + std::to_string(r.offset()));
    ByteReader body(bytes.data() + r.offset(), size);
    if (name == "config") {
      ckpt.config_snapshot = body.str();
    } else if (name == "settings") {
      ckpt.model.settings = decode_settings(body);
      have_settings = true;
    } else if (name == "stacks") {
      decode_stacks(body, ckpt.model);
      have_stacks = true;
    } else if (name == "pca") {
      decode_pca(body, ckpt.model);
    } else if (name == "head") {
      decode_head(body, ckpt.head, ckpt.head_ready);
    } else if (name == "optimizer") {
      ckpt.optimizer = decode_optimizer(body);
    } else if (name == "rng") {
      ckpt.rng = decode_rng(body);
    } else {
      raise(ErrorCode::format, "checkpoint: unknown section '" + name + "'");
    }
    r.skip(size);
  }
  if (!have_settings || !have_stacks)
    raise(ErrorCode::format, "checkpoint missing required sections in " + path);
  return ckpt;
}

}  // namespace dafe
