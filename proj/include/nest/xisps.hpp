#pragma once

#include "nest/layers.hpp"
#include "nest/norm.hpp"
#include "nest/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace nest {

struct XiSpsConfig {
  Index in_channels = 2;
  Index embed_dim = 256;
  /// Width of the compressed bottleneck per granularity (prefix-nested).
  std::vector<Index> compressed_channels{16, 32, 64, 128};
  /// Fixed output width of every downsampling stage; the last equals embed_dim.
  std::vector<Index> stage_channels{64, 256};
  Index spatial_kernel = 3;
  LifConfig lif;

  Index stage_count() const { return static_cast<Index>(stage_channels.size()); }
  Index downsampling() const { return Index{1} << stage_count(); }
  /// Compression factor: stage output width over the compressed width at g.
  double gamma(Index stage, int g) const;
  void validate() const;
};

/// Elastic spiking patch splitting. Each stage compresses to the elastic
/// bottleneck width, filters spatially at that width, expands back to a fixed
/// width and max-pools 2x2; every convolution is followed by BN and LIF.
class XiSps {
 public:
  struct Stage {
    ElasticConv2d compress, spatial, expand;
    NormLif compress_lif, spatial_lif, expand_lif;
  };
  struct StageCache {
    InputCache compress_in, spatial_in, expand_in;
    NormLifCache compress_norm, spatial_norm, expand_norm;
    PoolCache pool;
    Grid grid;
  };
  struct Cache {
    std::vector<StageCache> stages;
  };

  XiSps() = default;
  explicit XiSps(const XiSpsConfig& cfg);

  XiSpsConfig cfg;
  std::vector<Stage> stages;

  int granularities() const { return static_cast<int>(cfg.compressed_channels.size()); }
  Index tokens(Index height, Index width) const;

  void init(std::mt19937_64& rng);

  /// frames: [T * B * H * W, in_channels] real currents (binary for event input).
  /// Returns tokens as [T * B * N, embed_dim] spikes.
  SpikeMatrix forward(const Currents& frames, const Grid& grid, const Pass& pass, Cache* cache) const;
  /// Accumulates parameter gradients; the extractor is the first layer, so no
  /// input gradient is produced.
  void backward(const Cache& cache, const Currents& grad_tokens);
  void update_running(const Cache& cache, std::optional<double> momentum = std::nullopt);
  void collect(Registry& reg, const std::string& prefix);

 private:
  template <typename In>
  SpikeMatrix run_stage(std::size_t s, const RowMatrix<In>& x, const Grid& grid, const Pass& pass,
                        StageCache* cache) const;
};

/// Rearranges [T, B, C, H, W] into channels-last rows [T * B * H * W, C].
Currents frames_to_rows(const RealTensor& frames);

/// Inference-mode extractor on an event tensor [T, B, C, H, W]; returns [T, B, N, embed_dim].
SpikeTensor xisps_forward(const XiSps& extractor, const SpikeTensor& events, int g);

}  // namespace nest
