#include "nest/xisps.hpp"

namespace nest {

double XiSpsConfig::gamma(Index stage, int g) const {
  check_granularity(g, static_cast<int>(compressed_channels.size()));
  return static_cast<double>(stage_channels.at(static_cast<std::size_t>(stage))) /
         static_cast<double>(compressed_channels[g]);
}

void XiSpsConfig::validate() const {
  if (in_channels < 1) throw ConfigError("xisps: in_channels must be positive");
  if (compressed_channels.empty()) throw ConfigError("xisps: empty channel schedule");
  for (std::size_t g = 0; g < compressed_channels.size(); ++g)
    if (compressed_channels[g] < 1 || (g > 0 && compressed_channels[g] < compressed_channels[g - 1]))
      throw ConfigError("xisps: compressed channels must be positive and non-decreasing");
  if (stage_channels.empty() || stage_channels.back() != embed_dim)
    throw ConfigError("xisps: the last stage width must equal embed_dim");
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) throw ConfigError("xisps: spatial kernel must be odd");
  lif.validate();
}

XiSps::XiSps(const XiSpsConfig& config) : cfg(config) {
  cfg.validate();
  const std::size_t G = cfg.compressed_channels.size();
  const auto& comp = cfg.compressed_channels;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const Index in = s == 0 ? cfg.in_channels : cfg.stage_channels[s - 1];
    const Index out = cfg.stage_channels[s];
    const std::string name = "embed.stage" + std::to_string(s);
    Stage st;
    st.compress = ElasticConv2d(ConvKind::kDense, 1, comp, std::vector<Index>(G, in));
    st.spatial = ElasticConv2d(ConvKind::kDepthwise, cfg.spatial_kernel, comp, comp);
    st.expand = ElasticConv2d(ConvKind::kDense, 1, std::vector<Index>(G, out), comp);
    st.compress_lif = NormLif(name + ".compress_lif", Section::kEmbed, comp, cfg.lif);
    st.spatial_lif = NormLif(name + ".spatial_lif", Section::kEmbed, comp, cfg.lif);
    st.expand_lif = NormLif(name + ".expand_lif", Section::kEmbed, std::vector<Index>(G, out), cfg.lif);
    stages.push_back(std::move(st));
  }
}

Index XiSps::tokens(Index height, Index width) const {
  const Index f = cfg.downsampling();
  if (height % f != 0 || width % f != 0)
    throw ConfigError("xisps: spatial size must be divisible by " + std::to_string(f));
  return (height / f) * (width / f);
}

void XiSps::init(std::mt19937_64& rng) {
  for (auto& st : stages) {
    st.compress.init(rng);
    st.spatial.init(rng);
    st.expand.init(rng);
  }
}

template <typename In>
SpikeMatrix XiSps::run_stage(std::size_t s, const RowMatrix<In>& x, const Grid& grid, const Pass& pass,
                             StageCache* c) const {
  const Stage& st = stages[s];
  const Index out = cfg.stage_channels[s];
  const Index next_fanout =
      s + 1 < stages.size() ? stages[s + 1].compress.out_channels(pass.g) : cfg.embed_dim;
  const SpikeMatrix s1 = st.compress_lif.forward(st.compress.forward(x, grid, pass.g, c ? &c->compress_in : nullptr),
                                                 pass, c ? &c->compress_norm : nullptr, st.spatial.taps());
  const SpikeMatrix s2 = st.spatial_lif.forward(st.spatial.forward(s1, grid, pass.g, c ? &c->spatial_in : nullptr),
                                                pass, c ? &c->spatial_norm : nullptr, out);
  const SpikeMatrix s3 = st.expand_lif.forward(st.expand.forward(s2, grid, pass.g, c ? &c->expand_in : nullptr),
                                               pass, c ? &c->expand_norm : nullptr, next_fanout);
  if (c) c->grid = grid;
  return max_pool2(s3, grid, out, c ? &c->pool : nullptr);
}

SpikeMatrix XiSps::forward(const Currents& frames, const Grid& grid, const Pass& pass, Cache* cache) const {
  if (pass.training && !cache) throw UsageError("xisps: training forward needs a cache");
  if (frames.cols() != cfg.in_channels) throw StructuralError("xisps: channel count mismatch");
  if (frames.rows() != grid.rows()) throw StructuralError("xisps: frame rows do not match the grid");
  tokens(grid.height, grid.width);
  if (cache) cache->stages.assign(stages.size(), StageCache{});

  Grid g = grid;
  SpikeMatrix x = run_stage(0, frames, g, pass, cache ? &cache->stages[0] : nullptr);
  for (std::size_t s = 1; s < stages.size(); ++s) {
    g = Grid{g.images, g.height / 2, g.width / 2};
    x = run_stage(s, x, g, pass, cache ? &cache->stages[s] : nullptr);
  }
  return x;
}

void XiSps::backward(const Cache& cache, const Currents& grad_tokens) {
  if (cache.stages.size() != stages.size()) throw UsageError("xisps: backward without a cached forward");
  Currents grad = grad_tokens;
  for (std::size_t i = stages.size(); i-- > 0;) {
    Stage& st = stages[i];
    const StageCache& c = cache.stages[i];
    const Currents d3 = st.expand_lif.backward(c.expand_norm, max_pool2_backward(c.pool, c.grid, grad));
    const Currents d2 = st.spatial_lif.backward(c.spatial_norm, st.expand.backward(c.expand_in, c.grid, d3));
    const Currents d1 = st.compress_lif.backward(c.compress_norm, st.spatial.backward(c.spatial_in, c.grid, d2));
    grad = st.compress.backward(c.compress_in, c.grid, d1, i > 0);
  }
}

void XiSps::update_running(const Cache& cache, std::optional<double> momentum) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].compress_lif.update_running(cache.stages[i].compress_norm, momentum);
    stages[i].spatial_lif.update_running(cache.stages[i].spatial_norm, momentum);
    stages[i].expand_lif.update_running(cache.stages[i].expand_norm, momentum);
  }
}

void XiSps::collect(Registry& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i);
    stages[i].compress.collect(reg, p + ".compress");
    stages[i].compress_lif.collect(reg, p + ".compress_lif");
    stages[i].spatial.collect(reg, p + ".spatial");
    stages[i].spatial_lif.collect(reg, p + ".spatial_lif");
    stages[i].expand.collect(reg, p + ".expand");
    stages[i].expand_lif.collect(reg, p + ".expand_lif");
  }
}

Currents frames_to_rows(const RealTensor& frames) {
  if (frames.rank() != 5) throw StructuralError("frames must be [T, B, C, H, W]");
  const Index T = frames.dim(0), B = frames.dim(1), C = frames.dim(2), H = frames.dim(3), W = frames.dim(4);
  Currents rows(T * B * H * W, C);
  const auto data = frames.data();
  for (Index tb = 0; tb < T * B; ++tb)
    for (Index c = 0; c < C; ++c)
      for (Index p = 0; p < H * W; ++p) rows(tb * H * W + p, c) = data[(tb * C + c) * H * W + p];
  return rows;
}

SpikeTensor xisps_forward(const XiSps& extractor, const SpikeTensor& events, int g) {
  if (events.rank() != 5) throw StructuralError("xisps_forward: expected [T, B, C, H, W] events");
  events.check_binary();
  const Index T = events.dim(0), B = events.dim(1), H = events.dim(3), W = events.dim(4);
  const Index N = extractor.tokens(H, W);
  Pass pass;
  pass.g = g;
  pass.steps = T;
  pass.batch = B;
  const SpikeMatrix tokens =
      extractor.forward(frames_to_rows(events.to_real()), Grid{T * B, H, W}, pass, nullptr);
  SpikeTensor out({T, B, N, extractor.cfg.embed_dim});
  std::copy(tokens.data(), tokens.data() + tokens.size(), out.data().begin());
  return out;
}

}  // namespace nest
