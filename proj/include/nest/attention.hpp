#pragma once

#include "nest/layers.hpp"
#include "nest/norm.hpp"
#include "nest/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace nest {

/// Membranes of the two attention LIF populations: the score LIF keyed by
/// (batch, head, query, key) and the output LIF keyed by (batch, head, query, dim).
struct AttentionState {
  Index batch = 0;
  Index heads = 0;
  Index tokens = 0;
  Index head_dim = 0;
  std::vector<Eigen::MatrixXd> score;  // [batch * heads] of tokens x tokens
  std::vector<Eigen::MatrixXd> out;    // [batch * heads] of tokens x head_dim

  AttentionState() = default;
  AttentionState(Index batch, Index heads, Index tokens, Index head_dim, const LifConfig& cfg);
  void reset(const LifConfig& cfg);
};

/// Batched form: per (t, b, h), attn = LIF(scale * Q K^T) and O = LIF(attn V).
/// Q, K and V are binary tensors shaped [T, B, heads, N, D].
SpikeTensor parallel_ssa(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                         const LifConfig& lif, AttentionState& state);

/// Row-by-row form: for every query row, a = LIF(linear(q_i, K)) then
/// o = LIF(linear(a, V^T)). Bit-identical to parallel_ssa.
SpikeTensor rowwise_ssa(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                        const LifConfig& lif, AttentionState& state);

// Single (batch, head) kernels. q, k, v and out are [T * N, D] with
// timestep-major rows; score_v and out_v carry the membranes.
struct HeadSpikes {
  Index attn = 0;
  Index out = 0;
};

HeadSpikes ssa_head_parallel(const Currents& q, const Currents& k, const Currents& v, Index steps,
                             double scale, const LifConfig& lif, SpikeMode mode, Eigen::MatrixXd& score_v,
                             Eigen::MatrixXd& out_v, Currents& out);

HeadSpikes ssa_head_rowwise(const Currents& q, const Currents& k, const Currents& v, Index steps,
                            double scale, const LifConfig& lif, Eigen::MatrixXd& score_v,
                            Eigen::MatrixXd& out_v, Currents& out);

struct HeadGrads {
  Currents dq;
  Currents dk;
  Currents dv;
};

/// Gradient of ssa_head_parallel started from rest, recomputing the forward.
HeadGrads ssa_head_backward(const Currents& q, const Currents& k, const Currents& v, Index steps,
                            double scale, const LifConfig& lif, SpikeMode mode, const Currents& grad_out);

struct AttentionConfig {
  Index embed_dim = 256;
  Index head_dim = 8;
  std::vector<Index> heads{4, 8, 16, 32};
  double scale = 0.5;
  LifConfig lif;
};

/// Elastic spiking self-attention: linear -> BN -> LIF projections to the first
/// h_g heads, the two-LIF attention core, and an input-elastic output projection.
class ElasticAttention {
 public:
  struct Cache {
    InputCache x;
    NormLifCache q_norm, k_norm, v_norm;
    SpikeMatrix q, k, v;
    InputCache proj_in;
    NormLifCache proj_norm;
    Index tokens = 0;
  };

  struct Projections {
    SpikeMatrix q, k, v;  // [T * B * N, h_max * D], active columns h_g * D
  };

  ElasticAttention() = default;
  ElasticAttention(const std::string& name, const AttentionConfig& cfg);

  AttentionConfig cfg;
  ElasticLinear wq, wk, wv, proj;
  NormLif q_lif, k_lif, v_lif, proj_lif;

  int granularities() const { return static_cast<int>(cfg.heads.size()); }
  Index heads(int g) const;
  Index width(int g) const { return heads(g) * cfg.head_dim; }

  void init(std::mt19937_64& rng);

  Projections project(const SpikeMatrix& x, const Pass& pass, Cache* cache) const;
  /// x is [T * B * N, C]; returns the spiking projection output of the same shape.
  SpikeMatrix forward(const SpikeMatrix& x, Index tokens, const Pass& pass, Cache* cache) const;
  Currents backward(const Cache& cache, const Currents& grad_out);
  void update_running(const Cache& cache, std::optional<double> momentum = std::nullopt);

  struct QkvTensors {
    SpikeTensor q, k, v;  // [T, B, h_g, N, D]
  };
  /// Inference-mode projections of x shaped [T, B, N, C].
  QkvTensors project_qkv(const SpikeTensor& x, int g) const;

  void collect(Registry& reg, const std::string& prefix);

 private:
  std::string attn_name_;
  std::string out_name_;
};

}  // namespace nest
