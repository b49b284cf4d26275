#pragma once

// Shared generators and gradient checks for the unit and acceptance suites.

#include "nest/attention.hpp"
#include "nest/layers.hpp"
#include "nest/lif.hpp"
#include "nest/model.hpp"
#include "nest/norm.hpp"
#include "nest/training.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace nest::testing {

using Rng = std::mt19937_64;

inline Index uniform_int(Rng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Currents random_currents(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Currents m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_real(rng, lo, hi);
  return m;
}

inline SpikeMatrix random_spikes(Index rows, Index cols, double p, Rng& rng) {
  SpikeMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_real(rng, 0.0, 1.0) < p ? 1 : 0;
  return m;
}

inline SpikeTensor random_spike_tensor(const Shape& shape, double p, Rng& rng) {
  SpikeTensor t(shape);
  for (auto& v : t.data()) v = uniform_real(rng, 0.0, 1.0) < p ? 1 : 0;
  return t;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <typename A, typename B>
double relative_error(const A& a, const B& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

/// Central differences of a scalar function over every entry of x.
template <typename M>
M numeric_gradient(M& x, const std::function<double()>& f, double h = 1e-5) {
  M grad(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    grad.data()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double weighted_sum(const Currents& y, const Currents& w) { return y.cwiseProduct(w).sum(); }

struct GradCheck {
  double worst = 0.0;  // largest relative error over all checked arrays
  int instances = 0;
};

inline void record(GradCheck& r, double err) {
  r.worst = std::max(r.worst, err);
}

// Each check draws `instances` random small problems and compares the analytic
// gradients of every input and parameter with central differences. Spiking
// layers use the relaxed neuron, whose exact derivative is the surrogate.

inline GradCheck check_lif(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    LifConfig cfg;
    cfg.tau = uniform_real(rng, 1.5, 4.0);
    cfg.v_threshold = uniform_real(rng, 0.5, 1.5);
    cfg.v_reset = uniform_real(rng, -0.3, 0.2);
    cfg.surrogate_alpha = uniform_real(rng, 1.0, 4.0);
    const Index steps = uniform_int(rng, 1, 6), rows = uniform_int(rng, 1, 3), cols = uniform_int(rng, 1, 5);
    Currents x = random_currents(steps * rows, cols, rng, -1.0, 3.0);
    const Currents w = random_currents(steps * rows, cols, rng);
    auto loss = [&] {
      Currents s(x.rows(), x.cols());
      lif_run(x, steps, cols, cfg, SpikeMode::kRelaxed, s);
      return weighted_sum(s, w);
    };
    const Currents analytic = lif_run_backward(x, steps, cols, cfg, SpikeMode::kRelaxed, w);
    record(r, relative_error(analytic, numeric_gradient(x, loss)));
  }
  return r;
}

inline GradCheck check_linear(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    const Index in_max = uniform_int(rng, 2, 6), out_max = uniform_int(rng, 2, 6);
    const Index in0 = uniform_int(rng, 1, in_max), out0 = uniform_int(rng, 1, out_max);
    ElasticLinear layer({out0, out_max}, {in0, in_max}, n % 2 == 0);
    layer.init(rng);
    if (layer.has_bias()) layer.bias.values = Eigen::MatrixXd::Random(out_max, 1);
    const int g = static_cast<int>(rng() % 2);
    Currents x = random_currents(uniform_int(rng, 1, 5), in_max, rng);
    const Currents w = random_currents(x.rows(), out_max, rng);
    auto loss = [&] { return weighted_sum(layer.forward(x, g), w); };
    InputCache cache;
    layer.forward(x, g, &cache);
    layer.weight.zero_grad();
    if (layer.has_bias()) layer.bias.zero_grad();
    const Currents dx = layer.backward(cache, w);
    record(r, relative_error(dx, numeric_gradient(x, loss)));
    record(r, relative_error(layer.weight.grads, numeric_gradient(layer.weight.values, loss)));
    if (layer.has_bias()) record(r, relative_error(layer.bias.grads, numeric_gradient(layer.bias.values, loss)));
  }
  return r;
}

inline GradCheck check_conv(ConvKind kind, Index kernel, int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    const Index c_max = uniform_int(rng, 2, 4), c0 = uniform_int(rng, 1, c_max);
    const Index in_max = kind == ConvKind::kDepthwise ? c_max : uniform_int(rng, 1, 3);
    const Index in0 = kind == ConvKind::kDepthwise ? c0 : uniform_int(rng, 1, in_max);
    ElasticConv2d conv(kind, kernel, {c0, c_max}, {in0, in_max});
    conv.init(rng);
    const Grid grid{uniform_int(rng, 1, 2), uniform_int(rng, 2, 4), uniform_int(rng, 2, 4)};
    const int g = static_cast<int>(rng() % 2);
    Currents x = random_currents(grid.rows(), in_max, rng);
    const Currents w = random_currents(grid.rows(), c_max, rng);
    auto loss = [&] { return weighted_sum(conv.forward(x, grid, g), w); };
    InputCache cache;
    conv.forward(x, grid, g, &cache);
    conv.weight.zero_grad();
    const Currents dx = conv.backward(cache, grid, w);
    record(r, relative_error(dx, numeric_gradient(x, loss)));
    record(r, relative_error(conv.weight.grads, numeric_gradient(conv.weight.values, loss)));
  }
  return r;
}

inline GradCheck check_batchnorm(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    const Index f_max = uniform_int(rng, 2, 5), f0 = uniform_int(rng, 1, f_max);
    BatchNormBank bn({f0, f_max});
    const int g = static_cast<int>(rng() % 2);
    for (auto& b : bn.banks) {
      b.gamma.values = Eigen::MatrixXd::Random(b.gamma.values.rows(), 1).array() + 1.5;
      b.beta.values = Eigen::MatrixXd::Random(b.beta.values.rows(), 1);
    }
    Currents z = random_currents(uniform_int(rng, 3, 8), f_max, rng, -2.0, 2.0);
    const Currents w = random_currents(z.rows(), f_max, rng);
    auto loss = [&] {
      BnCache c;
      return weighted_sum(bn.forward(z, g, true, &c), w);
    };
    BnCache cache;
    bn.forward(z, g, true, &cache);
    for (auto& b : bn.banks) {
      b.gamma.zero_grad();
      b.beta.zero_grad();
    }
    const Currents dz = bn.backward(cache, w);
    record(r, relative_error(dz, numeric_gradient(z, loss)));
    auto& bank = bn.banks[static_cast<std::size_t>(g)];
    record(r, relative_error(bank.gamma.grads, numeric_gradient(bank.gamma.values, loss)));
    record(r, relative_error(bank.beta.grads, numeric_gradient(bank.beta.values, loss)));
  }
  return r;
}

inline GradCheck check_maxpool(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    const Grid grid{uniform_int(rng, 1, 3), 2 * uniform_int(rng, 1, 3), 2 * uniform_int(rng, 1, 3)};
    const Index cols = uniform_int(rng, 1, 4);
    // Distinct values keep the max away from ties, where it is not differentiable.
    Currents x = random_currents(grid.rows(), cols, rng);
    const Currents w = random_currents(grid.rows() / 4, cols, rng);
    auto loss = [&] { return weighted_sum(max_pool2(x, grid, cols), w); };
    PoolCache cache;
    max_pool2(x, grid, cols, &cache);
    const Currents dx = max_pool2_backward(cache, grid, w);
    record(r, relative_error(dx, numeric_gradient(x, loss, 1e-7)));
  }
  return r;
}

inline GradCheck check_attention(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    const Index steps = uniform_int(rng, 1, 4), N = uniform_int(rng, 1, 4), D = uniform_int(rng, 1, 4);
    const double scale = uniform_real(rng, 0.25, 1.0);
    LifConfig lif;
    lif.surrogate_alpha = uniform_real(rng, 1.0, 3.0);
    Currents q = random_currents(steps * N, D, rng, 0.0, 1.5);
    Currents k = random_currents(steps * N, D, rng, 0.0, 1.5);
    Currents v = random_currents(steps * N, D, rng, 0.0, 1.5);
    const Currents w = random_currents(steps * N, D, rng);
    auto loss = [&] {
      Eigen::MatrixXd sv = Eigen::MatrixXd::Constant(N, N, lif.v_reset);
      Eigen::MatrixXd ov = Eigen::MatrixXd::Constant(N, D, lif.v_reset);
      Currents out;
      ssa_head_parallel(q, k, v, steps, scale, lif, SpikeMode::kRelaxed, sv, ov, out);
      return weighted_sum(out, w);
    };
    const HeadGrads grads = ssa_head_backward(q, k, v, steps, scale, lif, SpikeMode::kRelaxed, w);
    record(r, relative_error(grads.dq, numeric_gradient(q, loss)));
    record(r, relative_error(grads.dk, numeric_gradient(k, loss)));
    record(r, relative_error(grads.dv, numeric_gradient(v, loss)));
  }
  return r;
}

inline GradCheck check_cross_entropy(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck r;
  for (int n = 0; n < instances; ++n, ++r.instances) {
    const Index B = uniform_int(rng, 1, 5), C = uniform_int(rng, 2, 6);
    Currents logits = random_currents(B, C, rng, -3.0, 3.0);
    std::vector<int> labels;
    for (Index b = 0; b < B; ++b) labels.push_back(static_cast<int>(uniform_int(rng, 0, C - 1)));
    Currents grad;
    cross_entropy(logits, labels, &grad);
    record(r, relative_error(grad, numeric_gradient(logits, [&] { return cross_entropy(logits, labels); })));
  }
  return r;
}

/// Triple-loop reference for spiking self-attention on [T, B, H, N, D] tensors.
inline SpikeTensor naive_ssa(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                      const LifConfig& lif) {
  const Index T = q.dim(0), B = q.dim(1), H = q.dim(2), N = q.dim(3), D = q.dim(4);
  SpikeTensor out(q.shape());
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < H; ++h) {
      std::vector<double> vs(static_cast<std::size_t>(N * N), lif.v_reset);
      std::vector<double> vo(static_cast<std::size_t>(N * D), lif.v_reset);
      for (Index t = 0; t < T; ++t) {
        std::vector<int> attn(static_cast<std::size_t>(N * N));
        for (Index i = 0; i < N; ++i)
          for (Index j = 0; j < N; ++j) {
            int dot = 0;
            for (Index d = 0; d < D; ++d) dot += q({t, b, h, i, d}) * k({t, b, h, j, d});
            double& m = vs[i * N + j];
            const double hh = m + (dot * scale - (m - lif.v_reset)) / lif.tau;
            attn[i * N + j] = hh >= lif.v_threshold;
            m = attn[i * N + j] ? lif.v_reset : hh;
          }
        for (Index i = 0; i < N; ++i)
          for (Index d = 0; d < D; ++d) {
            int acc = 0;
            for (Index j = 0; j < N; ++j) acc += attn[i * N + j] * v({t, b, h, j, d});
            double& m = vo[i * D + d];
            const double hh = m + (acc - (m - lif.v_reset)) / lif.tau;
            out.set({t, b, h, i, d}, hh >= lif.v_threshold);
            m = hh >= lif.v_threshold ? lif.v_reset : hh;
          }
      }
    }
  return out;
}

struct Qkv {
  SpikeTensor q, k, v;
};

inline Qkv random_qkv(Rng& rng, Index T, Index B, Index H, Index N, Index D, double p) {
  const Shape s{T, B, H, N, D};
  return {random_spike_tensor(s, p, rng), random_spike_tensor(s, p, rng), random_spike_tensor(s, p, rng)};
}

/// A small architecture with every mechanism of the full model, for tests
/// that need many forward passes.
inline NestformerConfig small_config() {
  NestformerConfig c;
  c.height = 16;
  c.width = 16;
  c.embed_dim = 64;
  c.blocks = 2;
  c.timesteps = 4;
  c.head_dim = 8;
  c.mlp_hidden = {16, 40, 104, 256};
  c.heads = {1, 2, 4, 8};
  c.conv_channels = {4, 8, 16, 32};
  c.stage_channels = {32, 64};
  return c;
}

/// Runs training-mode forwards at every granularity and folds the batch
/// statistics into the running ones, so eval-mode passes see live neurons.
inline void warm_running_stats(Nestformer& model, Rng& rng, int rounds = 3, Index batch = 4, double p = 0.2) {
  const NestformerConfig& c = model.cfg;
  for (int round = 0; round < rounds; ++round)
    for (int g = 0; g < model.granularities(); ++g) {
      Pass pass;
      pass.g = g;
      pass.steps = c.timesteps;
      pass.batch = batch;
      pass.training = true;
      const Currents frames =
          random_spikes(c.timesteps * batch * c.height * c.width, c.in_channels, p, rng).cast<double>();
      Nestformer::Cache cache;
      model.run(frames, pass, &cache);
      model.update_running(cache);
    }
}

/// Warms the running statistics and lifts every batch-norm shift, so an
/// untrained model spikes in all layers (attention scores included) in eval mode.
inline void make_lively(Nestformer& model, Rng& rng, double beta = 1.5) {
  warm_running_stats(model, rng, 5);
  Registry reg = model.registry();
  for (auto& e : reg.params)
    if (e.name.ends_with(".beta")) e.param->values.setConstant(beta);
}

}  // namespace nest::testing
