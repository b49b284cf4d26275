#include "nest/lif.hpp"

#include <algorithm>

namespace nest {

Eigen::ArrayXd lif_forward(const Eigen::ArrayXd& input, LifState& state, const LifConfig& cfg,
                           SpikeMode mode) {
  if (input.size() != state.v.size()) throw StructuralError("lif_forward: input/state shape mismatch");
  const Eigen::ArrayXd h = lif_charge(state.v, input, cfg);
  Eigen::ArrayXd spikes;
  if (mode == SpikeMode::kHeaviside) {
    spikes = (h >= cfg.v_threshold).cast<double>();
    state.v = (h >= cfg.v_threshold).select(cfg.v_reset, h);
  } else {
    spikes = h.unaryExpr([&](double value) {
      return relaxed_spike(value - cfg.v_threshold, cfg.surrogate_alpha);
    });
    state.v = h * (1.0 - spikes) + cfg.v_reset * spikes;
  }
  return spikes;
}

template <typename SpikeScalar>
Index lif_run(const Currents& x, Index steps, Index cols, const LifConfig& cfg, SpikeMode mode,
              RowMatrix<SpikeScalar>& spikes) {
  if (cols > x.cols()) throw StructuralError("lif_run: output buffer shape mismatch");
  const Index stride = x.cols();
  return lif_run_stream(
      x.rows(), steps, cols, cfg, mode,
      [&](Index i, double* buf) { std::copy_n(x.data() + i * stride, cols, buf); }, spikes);
}

template Index lif_run<double>(const Currents&, Index, Index, const LifConfig&, SpikeMode,
                               RowMatrix<double>&);
template Index lif_run<std::uint8_t>(const Currents&, Index, Index, const LifConfig&, SpikeMode,
                                     RowMatrix<std::uint8_t>&);

Currents lif_run_backward(const Currents& x, Index steps, Index cols, const LifConfig& cfg,
                          SpikeMode mode, const Currents& grad_spikes) {
  if (x.cols() < cols) throw StructuralError("lif_run_backward: gradient shape mismatch");
  Currents dx(x.rows(), x.cols());
  if (cols < x.cols()) dx.rightCols(x.cols() - cols).setZero();
  const Index stride = x.cols();
  lif_backward_stream(
      x.rows(), steps, cols, cfg, mode,
      [&](Index i, double* buf) { std::copy_n(x.data() + i * stride, cols, buf); }, grad_spikes, dx);
  return dx;
}

}  // namespace nest
