#include "nest/model.hpp"

#include <algorithm>

namespace nest {

using nlohmann::json;

GranularityConfig NestformerConfig::at(int g) const {
  check_granularity(g, granularities());
  return {g, mlp_hidden[g], heads[g], conv_channels[g]};
}

Index NestformerConfig::tokens() const {
  const Index f = Index{1} << static_cast<Index>(stage_channels.size());
  return (height / f) * (width / f);
}

void NestformerConfig::validate() const {
  const std::size_t G = mlp_hidden.size();
  if (G == 0) throw ConfigError("model: empty granularity schedules");
  if (heads.size() != G || conv_channels.size() != G)
    throw ConfigError("model: width, head and channel schedules need the same length");
  auto monotone = [](const std::vector<Index>& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] < 1 || (i > 0 && s[i] < s[i - 1])) return false;
    return true;
  };
  if (!monotone(mlp_hidden) || !monotone(heads) || !monotone(conv_channels))
    throw ConfigError("model: schedules must be positive and non-decreasing");
  if (std::find(std::begin(kAllowedTimesteps), std::end(kAllowedTimesteps), timesteps) ==
      std::end(kAllowedTimesteps))
    throw ConfigError("model: timesteps must be one of 4, 8, 16, 32, 64");
  if (blocks < 1 || classes < 2 || in_channels < 1) throw ConfigError("model: bad block, class or channel count");
  if (heads.back() * head_dim > embed_dim) throw ConfigError("model: heads * head_dim must not exceed embed_dim");
  if (!(scale > 0.0)) throw ConfigError("model: attention scale must be positive");
  const Index f = Index{1} << static_cast<Index>(stage_channels.size());
  if (height % f != 0 || width % f != 0)
    throw ConfigError("model: input size must be divisible by " + std::to_string(f));
  lif.validate();
  residual_lif.validate();
}

NestformerConfig NestformerConfig::single(int g) const {
  check_granularity(g, granularities());
  NestformerConfig c = *this;
  c.mlp_hidden = {mlp_hidden[g]};
  c.heads = {heads[g]};
  c.conv_channels = {conv_channels[g]};
  return c;
}

namespace {

json lif_json(const LifConfig& c) {
  return {{"tau", c.tau}, {"v_threshold", c.v_threshold}, {"v_reset", c.v_reset}, {"surrogate_alpha", c.surrogate_alpha}};
}

LifConfig lif_from(const json& j, LifConfig c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "tau") c.tau = value.get<double>();
    else if (key == "v_threshold") c.v_threshold = value.get<double>();
    else if (key == "v_reset") c.v_reset = value.get<double>();
    else if (key == "surrogate_alpha") c.surrogate_alpha = value.get<double>();
    else throw ConfigError("lif: unknown key '" + key + "'");
  }
  return c;
}

}  // namespace

json to_json(const NestformerConfig& c) {
  return {{"in_channels", c.in_channels},   {"height", c.height},
          {"width", c.width},               {"embed_dim", c.embed_dim},
          {"blocks", c.blocks},             {"timesteps", c.timesteps},
          {"classes", c.classes},           {"head_dim", c.head_dim},
          {"scale", c.scale},               {"mlp_hidden", c.mlp_hidden},
          {"heads", c.heads},               {"conv_channels", c.conv_channels},
          {"stage_channels", c.stage_channels}, {"lif", lif_json(c.lif)},
          {"residual_lif", lif_json(c.residual_lif)}};
}

NestformerConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("model config must be an object");
  NestformerConfig c;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "in_channels") c.in_channels = v.get<Index>();
      else if (key == "height") c.height = v.get<Index>();
      else if (key == "width") c.width = v.get<Index>();
      else if (key == "embed_dim") c.embed_dim = v.get<Index>();
      else if (key == "blocks") c.blocks = v.get<Index>();
      else if (key == "timesteps") c.timesteps = v.get<Index>();
      else if (key == "classes") c.classes = v.get<Index>();
      else if (key == "head_dim") c.head_dim = v.get<Index>();
      else if (key == "scale") c.scale = v.get<double>();
      else if (key == "mlp_hidden") c.mlp_hidden = v.get<std::vector<Index>>();
      else if (key == "heads") c.heads = v.get<std::vector<Index>>();
      else if (key == "conv_channels") c.conv_channels = v.get<std::vector<Index>>();
      else if (key == "stage_channels") c.stage_channels = v.get<std::vector<Index>>();
      else if (key == "lif") c.lif = lif_from(v, c.lif);
      else if (key == "residual_lif") c.residual_lif = lif_from(v, c.residual_lif);
      else throw ConfigError("model: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Nestformer::Nestformer(const NestformerConfig& config) : cfg(config) {
  cfg.validate();
  const std::size_t G = cfg.mlp_hidden.size();

  XiSpsConfig xc;
  xc.in_channels = cfg.in_channels;
  xc.embed_dim = cfg.embed_dim;
  xc.compressed_channels = cfg.conv_channels;
  xc.stage_channels = cfg.stage_channels;
  xc.lif = cfg.lif;
  embed = XiSps(xc);

  AttentionConfig ac;
  ac.embed_dim = cfg.embed_dim;
  ac.head_dim = cfg.head_dim;
  ac.heads = cfg.heads;
  ac.scale = cfg.scale;
  ac.lif = cfg.lif;
  for (Index l = 0; l < cfg.blocks; ++l) {
    const std::string p = "block" + std::to_string(l);
    Block b;
    b.attn = ElasticAttention(p + ".attn", ac);
    b.attn_res = ResidualLif(p + ".attn_res", Section::kAttention, cfg.residual_lif);
    b.mlp = ElasticMlp(p + ".mlp", cfg.embed_dim, cfg.mlp_hidden, cfg.lif);
    b.mlp_res = ResidualLif(p + ".mlp_res", Section::kMlp, cfg.residual_lif);
    blocks.push_back(std::move(b));
  }
  head = ElasticLinear(std::vector<Index>(G, cfg.classes), std::vector<Index>(G, cfg.embed_dim), true);
}

void Nestformer::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  embed.init(rng);
  for (auto& b : blocks) {
    b.attn.init(rng);
    b.mlp.init(rng);
  }
  head.init(rng);
}

Currents Nestformer::run(const Currents& frames, const Pass& pass, Cache* cache) const {
  check_granularity(pass.g, granularities());
  if (pass.training && !cache) throw UsageError("model: training forward needs a cache");
  const Index T = pass.steps, B = pass.batch, N = cfg.tokens(), C = cfg.embed_dim;
  if (frames.rows() != T * B * cfg.height * cfg.width || frames.cols() != cfg.in_channels)
    throw StructuralError("model: input frames do not match the configured geometry");
  if (cache) {
    cache->blocks.assign(blocks.size(), BlockCache{});
    cache->steps = T;
    cache->batch = B;
    cache->tokens = N;
  }

  SpikeMatrix x = embed.forward(frames, Grid{T * B, cfg.height, cfg.width}, pass, cache ? &cache->embed : nullptr);
  const Index width = blocks.empty() ? 0 : blocks.front().attn.width(pass.g);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const Block& b = blocks[l];
    BlockCache* bc = cache ? &cache->blocks[l] : nullptr;
    const SpikeMatrix a = b.attn.forward(x, N, pass, bc ? &bc->attn : nullptr);
    const SpikeMatrix x1 =
        b.attn_res.forward(x, a, pass, bc ? &bc->attn_res : nullptr, b.mlp.hidden(pass.g) + 1);
    const SpikeMatrix m = b.mlp.forward(x1, pass, bc ? &bc->mlp : nullptr);
    const Index next = l + 1 < blocks.size() ? 3 * width + 1 : cfg.classes;
    x = b.mlp_res.forward(x1, m, pass, bc ? &bc->mlp_res : nullptr, next);
  }

  // Spike counts are integers, so the average is exact up to one division.
  Currents features = Currents::Zero(B, C);
  for (Index t = 0; t < T; ++t)
    for (Index b = 0; b < B; ++b)
      for (Index n = 0; n < N; ++n) features.row(b) += x.row((t * B + b) * N + n).cast<double>();
  features /= static_cast<double>(T * N);
  if (pass.report) {
    pass.report->batch = B;
    pass.report->timesteps = T;
    pass.report->granularity = pass.g;
    pass.report->add("head", Section::kHead, 0, 0, 0, 0);
  }
  return head.forward(features, pass.g, cache ? &cache->head_in : nullptr);
}

namespace {

Currents rows_from(const SpikeTensor& t) { return frames_to_rows(t.to_real()); }
Currents rows_from(const RealTensor& t) { return frames_to_rows(t); }

template <typename TensorT>
Currents forward_tensor(const Nestformer& model, const TensorT& input, int g, std::optional<AttentionMode> mode,
                        SpikeReport* report) {
  if (input.rank() != 5) throw StructuralError("model: input must be [T, B, C, H, W]");
  Pass pass;
  pass.g = g;
  pass.steps = input.dim(0);
  pass.batch = input.dim(1);
  pass.mode = mode.value_or(model.mode);
  pass.report = report;
  return model.run(rows_from(input), pass, nullptr);
}

}  // namespace

Currents Nestformer::forward(const SpikeTensor& input, int g, std::optional<AttentionMode> mode,
                             SpikeReport* report) const {
  input.check_binary();
  return forward_tensor(*this, input, g, mode, report);
}

Currents Nestformer::forward(const RealTensor& input, int g, std::optional<AttentionMode> mode,
                             SpikeReport* report) const {
  return forward_tensor(*this, input, g, mode, report);
}

void Nestformer::backward(const Cache& cache, const Currents& grad_logits) {
  const Index T = cache.steps, B = cache.batch, N = cache.tokens;
  const Currents dfeat = head.backward(cache.head_in, grad_logits);
  Currents grad(T * B * N, cfg.embed_dim);
  const double inv = 1.0 / static_cast<double>(T * N);
  for (Index t = 0; t < T; ++t)
    for (Index b = 0; b < B; ++b)
      for (Index n = 0; n < N; ++n) grad.row((t * B + b) * N + n) = dfeat.row(b) * inv;

  for (std::size_t l = blocks.size(); l-- > 0;) {
    Block& b = blocks[l];
    const BlockCache& bc = cache.blocks[l];
    const Currents ds2 = b.mlp_res.backward(bc.mlp_res, grad);
    const Currents dx1 = ds2 + b.mlp.backward(bc.mlp, ds2);
    const Currents ds1 = b.attn_res.backward(bc.attn_res, dx1);
    grad = ds1 + b.attn.backward(bc.attn, ds1);
  }
  embed.backward(cache.embed, grad);
}

void Nestformer::update_running(const Cache& cache, std::optional<double> momentum) {
  embed.update_running(cache.embed, momentum);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].attn.update_running(cache.blocks[l].attn, momentum);
    blocks[l].mlp.update_running(cache.blocks[l].mlp, momentum);
  }
}

void Nestformer::zero_grad() {
  for (auto& e : registry().params) e.param->zero_grad();
}

Registry Nestformer::registry() {
  Registry reg;
  embed.collect(reg, "embed");
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l);
    blocks[l].attn.collect(reg, p + ".attn");
    blocks[l].mlp.collect(reg, p + ".mlp");
  }
  head.collect(reg, "head");
  return reg;
}

Index Nestformer::count_params(int g) const {
  check_granularity(g, granularities());
  // registry() only hands out pointers; nothing is written through them here.
  Registry reg = const_cast<Nestformer*>(this)->registry();
  Index n = 0;
  for (const auto& e : reg.params)
    if (const auto ext = e.active_extent(g)) n += ext->size();
  return n;
}

Nestformer extract_submodel(const Nestformer& model, int g) {
  check_granularity(g, model.granularities());
  Nestformer out(model.cfg.single(g));
  out.mode = model.mode;
  Registry src = const_cast<Nestformer&>(model).registry();
  Registry dst = out.registry();

  std::vector<const ParamEntry*> params;
  for (const auto& e : src.params)
    if (e.active_extent(g)) params.push_back(&e);
  std::vector<const BufferEntry*> buffers;
  for (const auto& b : src.buffers)
    if (b.bank < 0 || b.bank == g) buffers.push_back(&b);
  if (params.size() != dst.params.size() || buffers.size() != dst.buffers.size())
    throw StructuralError("extract: registry layouts disagree");

  for (std::size_t i = 0; i < params.size(); ++i) {
    const Extent e = *params[i]->active_extent(g);
    Eigen::MatrixXd& target = dst.params[i].param->values;
    if (target.rows() != e.rows || target.cols() != e.cols)
      throw StructuralError("extract: shape mismatch at " + params[i]->name);
    target = params[i]->param->values.topLeftCorner(e.rows, e.cols);
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (buffers[i]->values->size() != dst.buffers[i].values->size())
      throw StructuralError("extract: buffer mismatch at " + buffers[i]->name);
    *dst.buffers[i].values = *buffers[i]->values;
  }
  return out;
}

Nestformer convert_to_deployment(const Nestformer& model, int g) {
  Nestformer out = extract_submodel(model, g < 0 ? model.granularities() - 1 : g);
  out.mode = AttentionMode::kRowwise;
  return out;
}

}  // namespace nest
