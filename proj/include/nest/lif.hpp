#pragma once

#include "nest/core.hpp"

#include <cmath>
#include <numbers>
#include <type_traits>
#include <vector>

namespace nest {

struct LifConfig {
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double surrogate_alpha = 2.0;

  void validate() const {
    if (!(tau > 1.0)) throw ConfigError("lif: tau must exceed 1");
    if (!(v_threshold > v_reset)) throw ConfigError("lif: v_threshold must exceed v_reset");
    if (!(surrogate_alpha > 0.0)) throw ConfigError("lif: surrogate_alpha must be positive");
  }

  friend bool operator==(const LifConfig&, const LifConfig&) = default;
};

/// kHeaviside is the deployed neuron. kRelaxed replaces the step with the
/// arctangent sigmoid whose derivative is the surrogate, so the backward pass
/// is the exact gradient of the relaxed forward.
enum class SpikeMode { kHeaviside, kRelaxed };

/// Arctangent surrogate for d(spike)/d(v) at x = v - v_threshold.
template <typename Scalar>
Scalar surrogate_grad(Scalar x, Scalar alpha) {
  const Scalar k = std::numbers::pi_v<Scalar> * alpha / Scalar(2) * x;
  return alpha / (Scalar(2) * (Scalar(1) + k * k));
}

template <typename Scalar>
Scalar relaxed_spike(Scalar x, Scalar alpha) {
  return std::atan(std::numbers::pi_v<Scalar> * alpha / Scalar(2) * x) / std::numbers::pi_v<Scalar> +
         Scalar(0.5);
}

template <typename Derived>
auto lif_charge(const Eigen::ArrayBase<Derived>& v, const auto& input, const LifConfig& cfg) {
  return v + (input - (v - cfg.v_reset)) / cfg.tau;
}

inline double lif_charge(double v, double input, const LifConfig& cfg) {
  return v + (input - (v - cfg.v_reset)) / cfg.tau;
}

/// Membrane potentials for one timestep slice of a driven population.
struct LifState {
  Eigen::ArrayXd v;

  LifState() = default;
  LifState(Index size, const LifConfig& cfg) : v(Eigen::ArrayXd::Constant(size, cfg.v_reset)) {}
  void reset(const LifConfig& cfg) { v.setConstant(cfg.v_reset); }
};

/// One timestep of LIF dynamics; returns the emitted spikes as 0/1 reals
/// (sigmoid values in relaxed mode) and leaves the post-reset potentials in state.
Eigen::ArrayXd lif_forward(const Eigen::ArrayXd& input, LifState& state, const LifConfig& cfg,
                           SpikeMode mode = SpikeMode::kHeaviside);

/// Streaming form of lif_run: `fetch(i, buf)` writes the first `cols` inputs of
/// row i into buf, so callers can fuse a per-row transform into the LIF pass.
template <typename SpikeScalar, typename Fetch>
Index lif_run_stream(Index total_rows, Index steps, Index cols, const LifConfig& cfg, SpikeMode mode,
                     Fetch&& fetch, RowMatrix<SpikeScalar>& spikes) {
  if (steps < 1 || total_rows % steps != 0) throw StructuralError("lif_run: rows not divisible by steps");
  if (spikes.rows() != total_rows || spikes.cols() < cols) throw StructuralError("lif_run: output buffer shape mismatch");
  if constexpr (std::is_integral_v<SpikeScalar>) {
    if (mode == SpikeMode::kRelaxed) throw UsageError("lif_run: relaxed spikes need a real output");
  }
  const Index rows = total_rows / steps;
  std::vector<double> v(static_cast<std::size_t>(rows * cols), cfg.v_reset);
  std::vector<double> in(static_cast<std::size_t>(cols));
  const double th = cfg.v_threshold, vr = cfg.v_reset, alpha = cfg.surrogate_alpha;
  Index count = 0;
  for (Index t = 0; t < steps; ++t)
    for (Index r = 0; r < rows; ++r) {
      const Index i = t * rows + r;
      fetch(i, in.data());
      SpikeScalar* out = spikes.data() + i * spikes.cols();
      double* vm = v.data() + r * cols;
      if (mode == SpikeMode::kHeaviside) {
        for (Index c = 0; c < cols; ++c) {
          const double h = lif_charge(vm[c], in[c], cfg);
          const bool fire = h >= th;
          out[c] = fire ? SpikeScalar(1) : SpikeScalar(0);
          count += fire;
          vm[c] = fire ? vr : h;
        }
      } else {
        for (Index c = 0; c < cols; ++c) {
          const double h = lif_charge(vm[c], in[c], cfg);
          const double s = relaxed_spike(h - th, alpha);
          out[c] = static_cast<SpikeScalar>(s);
          vm[c] = h * (1.0 - s) + vr * s;
        }
      }
    }
  return count;
}

/// Streaming backpropagation through time. Writes dL/dinput into the first
/// `cols` columns of dx (already sized [total_rows x >= cols]).
template <typename Fetch>
void lif_backward_stream(Index total_rows, Index steps, Index cols, const LifConfig& cfg, SpikeMode mode,
                         Fetch&& fetch, const Currents& grad_spikes, Currents& dx) {
  if (steps < 1 || total_rows % steps != 0) throw StructuralError("lif_run_backward: rows not divisible by steps");
  if (grad_spikes.rows() != total_rows || grad_spikes.cols() < cols || dx.rows() != total_rows || dx.cols() < cols)
    throw StructuralError("lif_run_backward: gradient shape mismatch");
  const Index rows = total_rows / steps;
  const double th = cfg.v_threshold, vr = cfg.v_reset, alpha = cfg.surrogate_alpha;
  const bool relaxed = mode == SpikeMode::kRelaxed;
  {
    // Forward recompute; the charged potentials are parked in dx.
    std::vector<double> v(static_cast<std::size_t>(rows * cols), vr);
    std::vector<double> in(static_cast<std::size_t>(cols));
    for (Index t = 0; t < steps; ++t)
      for (Index r = 0; r < rows; ++r) {
        const Index i = t * rows + r;
        fetch(i, in.data());
        double* hm = dx.data() + i * dx.cols();
        double* vm = v.data() + r * cols;
        for (Index c = 0; c < cols; ++c) {
          const double h = lif_charge(vm[c], in[c], cfg);
          hm[c] = h;
          if (relaxed) {
            const double s = relaxed_spike(h - th, alpha);
            vm[c] = h * (1.0 - s) + vr * s;
          } else {
            vm[c] = h >= th ? vr : h;
          }
        }
      }
  }
  std::vector<double> gv(static_cast<std::size_t>(rows * cols), 0.0);
  const double leak = 1.0 - 1.0 / cfg.tau;
  for (Index t = steps - 1; t >= 0; --t)
    for (Index r = 0; r < rows; ++r) {
      const Index i = t * rows + r;
      double* hm = dx.data() + i * dx.cols();
      const double* gs = grad_spikes.data() + i * grad_spikes.cols();
      double* gm = gv.data() + r * cols;
      for (Index c = 0; c < cols; ++c) {
        const double h = hm[c];
        const double sg = surrogate_grad(h - th, alpha);
        const double s = relaxed ? relaxed_spike(h - th, alpha) : (h >= th ? 1.0 : 0.0);
        const double gh = gs[c] * sg + gm[c] * ((1.0 - s) + (vr - h) * sg);
        hm[c] = gh / cfg.tau;
        gm[c] = gh * leak;
      }
    }
}

/// Runs a fresh population (all potentials at v_reset) over `steps` timesteps.
/// Rows of `x` are timestep-major; only the leading `cols` features are driven,
/// the remaining columns of `spikes` are left untouched. Returns the spike count.
template <typename SpikeScalar>
Index lif_run(const Currents& x, Index steps, Index cols, const LifConfig& cfg, SpikeMode mode,
              RowMatrix<SpikeScalar>& spikes);

/// Backpropagation through time for lif_run. `grad_spikes` is dL/d(spikes);
/// the surrogate replaces the Heaviside derivative and the reset path is kept.
Currents lif_run_backward(const Currents& x, Index steps, Index cols, const LifConfig& cfg,
                          SpikeMode mode, const Currents& grad_spikes);

}  // namespace nest
