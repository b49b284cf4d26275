#pragma once

#include "nest/attention.hpp"
#include "nest/mlp.hpp"
#include "nest/xisps.hpp"

#include <json.hpp>

#include <optional>
#include <random>
#include <vector>

namespace nest {

/// The timestep counts a model may be configured for.
inline constexpr Index kAllowedTimesteps[] = {4, 8, 16, 32, 64};

/// One nested subnet: the values of the three schedules at index g.
struct GranularityConfig {
  int g = 0;
  Index mlp_hidden = 0;
  Index heads = 0;
  Index conv_channels = 0;
};

struct NestformerConfig {
  Index in_channels = 2;
  Index height = 64;
  Index width = 64;
  Index embed_dim = 256;
  Index blocks = 2;
  Index timesteps = 8;
  Index classes = 4;
  Index head_dim = 8;
  double scale = 0.5;
  std::vector<Index> mlp_hidden{64, 160, 416, 1024};
  std::vector<Index> heads{4, 8, 16, 32};
  std::vector<Index> conv_channels{16, 32, 64, 128};
  std::vector<Index> stage_channels{64, 256};
  LifConfig lif;
  /// Residual re-binarisation; a threshold of 0.5 fires on either operand.
  LifConfig residual_lif{2.0, 0.5, 0.0, 2.0};

  int granularities() const { return static_cast<int>(mlp_hidden.size()); }
  GranularityConfig at(int g) const;
  Index tokens() const;
  void validate() const;
  /// Single-granularity config holding only the schedule entries at g.
  NestformerConfig single(int g) const;
};

nlohmann::json to_json(const NestformerConfig& cfg);
NestformerConfig config_from_json(const nlohmann::json& doc);

struct Block {
  ElasticAttention attn;
  ResidualLif attn_res;
  ElasticMlp mlp;
  ResidualLif mlp_res;
};

/// Elastic spiking transformer: patch-splitting extractor, L blocks of
/// attention and MLP with spiking residuals, and a linear readout of the
/// time- and token-averaged final spikes.
class Nestformer {
 public:
  struct BlockCache {
    ElasticAttention::Cache attn;
    ResidualCache attn_res;
    ElasticMlp::Cache mlp;
    ResidualCache mlp_res;
  };
  struct Cache {
    XiSps::Cache embed;
    std::vector<BlockCache> blocks;
    InputCache head_in;
    Index steps = 0;
    Index batch = 0;
    Index tokens = 0;
  };

  Nestformer() = default;
  explicit Nestformer(const NestformerConfig& cfg);

  NestformerConfig cfg;
  AttentionMode mode = AttentionMode::kParallel;
  XiSps embed;
  std::vector<Block> blocks;
  ElasticLinear head;

  int granularities() const { return cfg.granularities(); }
  void init(std::uint64_t seed);

  /// frames: [T * B * H * W, in_channels], timestep-major. Returns logits [B x classes].
  Currents run(const Currents& frames, const Pass& pass, Cache* cache) const;

  /// Inference on [T, B, C, H, W]. An unset mode uses the model's executor.
  Currents forward(const SpikeTensor& input, int g, std::optional<AttentionMode> mode = std::nullopt,
                   SpikeReport* report = nullptr) const;
  /// Direct coding: real-valued currents drive the first layer.
  Currents forward(const RealTensor& input, int g, std::optional<AttentionMode> mode = std::nullopt,
                   SpikeReport* report = nullptr) const;

  void backward(const Cache& cache, const Currents& grad_logits);
  /// Folds the cached batch statistics into the running ones of bank pass.g.
  /// An explicit momentum overrides each layer's own.
  void update_running(const Cache& cache, std::optional<double> momentum = std::nullopt);
  void zero_grad();

  /// Parameters and buffers in their fixed serialisation order. Pointers are
  /// into this object and are invalidated when it moves.
  Registry registry();

  Index count_params(int g) const;
};

/// Standalone single-granularity model holding copies of the prefix slices and
/// batch-norm bank g. Its logits equal the universal model's at g bit for bit.
Nestformer extract_submodel(const Nestformer& model, int g);

/// Extraction at g (default: the largest) plus the switch to the row-wise
/// attention executor. Converting a converted model changes nothing.
Nestformer convert_to_deployment(const Nestformer& model, int g = -1);

}  // namespace nest
