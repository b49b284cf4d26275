#include "nest/layers.hpp"

#include <algorithm>
#include <cmath>

namespace nest {

namespace {

std::vector<Extent> pair_extents(const std::vector<Index>& rows, const std::vector<Index>& cols) {
  if (rows.size() != cols.size() || rows.empty())
    throw ConfigError("elastic layer: extent lists must have equal, non-zero length");
  std::vector<Extent> out;
  for (std::size_t g = 0; g < rows.size(); ++g) out.push_back({rows[g], cols[g]});
  return out;
}

template <typename In>
double as_real(In v) {
  return static_cast<double>(v);
}

// y.row(m).head(out) += sum over non-zero x(m, k), k < in, of x(m, k) * w.col(k).head(out).
template <typename In>
void accumulate_columns(const RowMatrix<In>& x, const Eigen::MatrixXd& w, Index out, Index in,
                        Currents& y) {
  for (Index m = 0; m < x.rows(); ++m) {
    auto row = y.row(m).head(out);
    for (Index k = 0; k < in; ++k) {
      const In v = x(m, k);
      if (v == In{0}) continue;
      if constexpr (std::is_integral_v<In>) {
        row += w.col(k).head(out).transpose();
      } else {
        row += v * w.col(k).head(out).transpose();
      }
    }
  }
}

template <typename In>
void accumulate_outer(const RowMatrix<In>& x, const Currents& dy, Index out, Index in,
                      Eigen::MatrixXd& grad) {
  for (Index m = 0; m < x.rows(); ++m) {
    const In* xr = x.data() + m * x.cols();
    const double* dr = dy.data() + m * dy.cols();
    for (Index k = 0; k < in; ++k) {
      const In v = xr[k];
      if (v == In{0}) continue;
      double* gc = grad.data() + k * grad.rows();
      const double a = as_real(v);
      for (Index o = 0; o < out; ++o) gc[o] += a * dr[o];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- linear

ElasticLinear::ElasticLinear(std::vector<Index> out_extents, std::vector<Index> in_extents,
                             bool with_bias)
    : has_bias_(with_bias) {
  const auto extents = pair_extents(out_extents, in_extents);
  weight = ElasticParam(out_extents.back(), in_extents.back(), extents, true);
  if (with_bias) bias = ElasticParam(out_extents.back(), 1, row_elastic(out_extents, 1), false);
}

void ElasticLinear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(max_in()));
  weight.init_uniform(bound, rng);
  if (has_bias_) bias.init_uniform(bound, rng);
}

template <typename In>
static Currents linear_forward(const ElasticLinear& layer, const RowMatrix<In>& x, int g) {
  const Index out = layer.out_features(g);
  const Index in = layer.in_features(g);
  if (x.cols() < in) throw StructuralError("elastic linear: input narrower than the active slice");
  Currents y = Currents::Zero(x.rows(), layer.max_out());
  if (layer.has_bias()) y.leftCols(out).rowwise() = layer.bias.values.col(0).head(out).transpose();
  accumulate_columns(x, layer.weight.values, out, in, y);
  return y;
}

Currents ElasticLinear::forward(const SpikeMatrix& x, int g, InputCache* cache) const {
  Currents y = linear_forward(*this, x, g);
  if (cache) *cache = InputCache{x, g};
  return y;
}

Currents ElasticLinear::forward(const Currents& x, int g, InputCache* cache) const {
  Currents y = linear_forward(*this, x, g);
  if (cache) *cache = InputCache{x, g};
  return y;
}

Currents ElasticLinear::backward(const InputCache& cache, const Currents& grad_out, bool input_grad) {
  if (!cache.valid()) throw UsageError("elastic linear: backward without a cached forward");
  const int g = cache.g;
  const Index out = out_features(g);
  const Index in = in_features(g);
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (!std::is_same_v<T, std::monostate>) {
          if (x.rows() != grad_out.rows()) throw StructuralError("elastic linear: gradient rows mismatch");
          accumulate_outer(x, grad_out, out, in, weight.grads);
        }
      },
      cache.input);
  if (has_bias_) bias.grads.col(0).head(out) += grad_out.leftCols(out).colwise().sum().transpose();
  if (!input_grad) return {};
  Currents dx = Currents::Zero(grad_out.rows(), max_in());
  dx.leftCols(in).noalias() = grad_out.leftCols(out) * weight.values.topLeftCorner(out, in);
  return dx;
}

void ElasticLinear::collect(Registry& reg, const std::string& prefix) {
  reg.params.push_back({prefix + ".weight", &weight, -1});
  if (has_bias_) reg.params.push_back({prefix + ".bias", &bias, -1});
}

// ------------------------------------------------------------------ conv

ElasticConv2d::ElasticConv2d(ConvKind kind, Index kernel, std::vector<Index> out_extents,
                             std::vector<Index> in_extents)
    : kind_(kind), kernel_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv kernel must be odd and positive");
  if (kind == ConvKind::kDepthwise) {
    if (out_extents != in_extents) throw ConfigError("depthwise conv: in and out channels must match");
    weight = ElasticParam(out_extents.back(), taps(), row_elastic(out_extents, taps()), true);
  } else {
    std::vector<Index> cols;
    for (Index c : in_extents) cols.push_back(c * taps());
    weight = ElasticParam(out_extents.back(), in_extents.back() * taps(),
                          pair_extents(out_extents, cols), true);
  }
}

Index ElasticConv2d::in_channels(int g) const {
  return kind_ == ConvKind::kDepthwise ? weight.extent(g).rows : weight.extent(g).cols / taps();
}

Index ElasticConv2d::max_in() const {
  return kind_ == ConvKind::kDepthwise ? weight.values.rows() : weight.values.cols() / taps();
}

void ElasticConv2d::init(std::mt19937_64& rng) {
  const Index fan_in = kind_ == ConvKind::kDepthwise ? taps() : max_in() * taps();
  weight.init_uniform(1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

template <typename In>
Currents ElasticConv2d::forward_impl(const RowMatrix<In>& x, const Grid& grid, int g) const {
  const Index out = out_channels(g);
  const Index in = in_channels(g);
  if (x.rows() != grid.rows()) throw StructuralError("conv: input rows do not match the grid");
  if (x.cols() < in) throw StructuralError("conv: input narrower than the active slice");
  Currents y = Currents::Zero(x.rows(), max_out());
  const Eigen::MatrixXd& w = weight.values;
  const Index pad = kernel_ / 2;
  const Index H = grid.height, W = grid.width;

  if (kind_ == ConvKind::kDense && kernel_ == 1) {
    accumulate_columns(x, w, out, in, y);
    return y;
  }

  for (Index n = 0; n < grid.images; ++n) {
    const Index base = n * grid.pixels();
    if (kind_ == ConvKind::kDepthwise) {
      // Output pixels sum their taps in ascending tap order.
      const Index O = w.rows();
      for (Index oy = 0; oy < H; ++oy)
        for (Index ox = 0; ox < W; ++ox) {
          double* yr = y.data() + (base + oy * W + ox) * y.cols();
          for (Index ky = 0; ky < kernel_; ++ky)
            for (Index kx = 0; kx < kernel_; ++kx) {
              const Index iy = oy + ky - pad, ix = ox + kx - pad;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              const In* xr = x.data() + (base + iy * W + ix) * x.cols();
              const double* wt = w.data() + (ky * kernel_ + kx) * O;
              for (Index c = 0; c < out; ++c) yr[c] += static_cast<double>(xr[c]) * wt[c];
            }
        }
    } else {
      for (Index oy = 0; oy < H; ++oy)
        for (Index ox = 0; ox < W; ++ox) {
          auto row = y.row(base + oy * W + ox).head(out);
          for (Index i = 0; i < in; ++i)
            for (Index ky = 0; ky < kernel_; ++ky)
              for (Index kx = 0; kx < kernel_; ++kx) {
                const Index iy = oy + ky - pad, ix = ox + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const In v = x(base + iy * W + ix, i);
                if (v == In{0}) continue;
                row += as_real(v) * w.col(i * taps() + ky * kernel_ + kx).head(out).transpose();
              }
        }
    }
  }
  return y;
}

Currents ElasticConv2d::forward(const SpikeMatrix& x, const Grid& grid, int g, InputCache* cache) const {
  Currents y = forward_impl(x, grid, g);
  if (cache) *cache = InputCache{x, g};
  return y;
}

Currents ElasticConv2d::forward(const Currents& x, const Grid& grid, int g, InputCache* cache) const {
  Currents y = forward_impl(x, grid, g);
  if (cache) *cache = InputCache{x, g};
  return y;
}

template <typename In>
void ElasticConv2d::weight_grad(const RowMatrix<In>& x, const Grid& grid, const Currents& dy, int g) {
  const Index out = out_channels(g);
  const Index in = in_channels(g);
  Eigen::MatrixXd& gw = weight.grads;
  if (kind_ == ConvKind::kDense && kernel_ == 1) {
    accumulate_outer(x, dy, out, in, gw);
    return;
  }
  const Index pad = kernel_ / 2;
  const Index H = grid.height, W = grid.width;
  for (Index n = 0; n < grid.images; ++n) {
    const Index base = n * grid.pixels();
    for (Index oy = 0; oy < H; ++oy)
      for (Index ox = 0; ox < W; ++ox) {
        const Index q = base + oy * W + ox;
        for (Index ky = 0; ky < kernel_; ++ky)
          for (Index kx = 0; kx < kernel_; ++kx) {
            const Index iy = oy + ky - pad, ix = ox + kx - pad;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            const Index p = base + iy * W + ix;
            const Index tap = ky * kernel_ + kx;
            if (kind_ == ConvKind::kDepthwise) {
              const In* xr = x.data() + p * x.cols();
              const double* dr = dy.data() + q * dy.cols();
              double* gt = gw.data() + tap * gw.rows();
              for (Index c = 0; c < out; ++c) gt[c] += static_cast<double>(xr[c]) * dr[c];
            } else {
              for (Index i = 0; i < in; ++i) {
                const In v = x(p, i);
                if (v == In{0}) continue;
                gw.col(i * taps() + tap).head(out) += as_real(v) * dy.row(q).head(out).transpose();
              }
            }
          }
      }
  }
}

Currents ElasticConv2d::backward(const InputCache& cache, const Grid& grid, const Currents& grad_out,
                                 bool input_grad) {
  if (!cache.valid()) throw UsageError("conv: backward without a cached forward");
  if (grad_out.rows() != grid.rows()) throw StructuralError("conv: gradient rows do not match the grid");
  const int g = cache.g;
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (!std::is_same_v<T, std::monostate>) weight_grad(x, grid, grad_out, g);
      },
      cache.input);
  if (!input_grad) return {};

  const Index out = out_channels(g);
  const Index in = in_channels(g);
  const Index O = weight.values.rows();
  Currents dx = Currents::Zero(grad_out.rows(), max_in());
  if (kind_ == ConvKind::kDense && kernel_ == 1) {
    dx.leftCols(in).noalias() = grad_out.leftCols(out) * weight.values.topLeftCorner(out, in);
    return dx;
  }
  const Index pad = kernel_ / 2;
  const Index H = grid.height, W = grid.width;
  for (Index n = 0; n < grid.images; ++n) {
    const Index base = n * grid.pixels();
    for (Index oy = 0; oy < H; ++oy)
      for (Index ox = 0; ox < W; ++ox) {
        const Index q = base + oy * W + ox;
        for (Index ky = 0; ky < kernel_; ++ky)
          for (Index kx = 0; kx < kernel_; ++kx) {
            const Index iy = oy + ky - pad, ix = ox + kx - pad;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            const Index p = base + iy * W + ix;
            const Index tap = ky * kernel_ + kx;
            if (kind_ == ConvKind::kDepthwise) {
              const double* gr = grad_out.data() + q * grad_out.cols();
              const double* wt = weight.values.data() + tap * O;
              double* xr = dx.data() + p * dx.cols();
              for (Index c = 0; c < out; ++c) xr[c] += gr[c] * wt[c];
            } else {
              const Eigen::Map<const Eigen::MatrixXd, 0, Eigen::OuterStride<>> w_tap(
                  weight.values.data() + tap * O, O, in, Eigen::OuterStride<>(taps() * O));
              dx.row(p).head(in) += grad_out.row(q).head(out) * w_tap.topRows(out);
            }
          }
      }
  }
  return dx;
}

void ElasticConv2d::collect(Registry& reg, const std::string& prefix) {
  reg.params.push_back({prefix + ".weight", &weight, -1});
}

// ------------------------------------------------------------------ pool

template <typename Scalar>
RowMatrix<Scalar> max_pool2(const RowMatrix<Scalar>& x, const Grid& grid, Index cols, PoolCache* cache) {
  if (grid.height % 2 != 0 || grid.width % 2 != 0) throw ConfigError("max_pool2: odd spatial size");
  if (x.rows() != grid.rows() || cols > x.cols()) throw StructuralError("max_pool2: shape mismatch");
  const Index H2 = grid.height / 2, W2 = grid.width / 2, W = grid.width;
  RowMatrix<Scalar> y = RowMatrix<Scalar>::Zero(grid.images * H2 * W2, x.cols());
  if (cache) {
    cache->argmax.assign(static_cast<std::size_t>(y.rows() * cols), 0);
    cache->cols = cols;
    cache->valid = true;
  }
  for (Index n = 0; n < grid.images; ++n)
    for (Index oy = 0; oy < H2; ++oy)
      for (Index ox = 0; ox < W2; ++ox) {
        const Index q = (n * H2 + oy) * W2 + ox;
        const Index p0 = n * grid.pixels() + 2 * oy * W + 2 * ox;
        const Index window[4] = {p0, p0 + 1, p0 + W, p0 + W + 1};
        for (Index c = 0; c < cols; ++c) {
          Scalar best = x(window[0], c);
          std::uint8_t arg = 0;
          for (std::uint8_t j = 1; j < 4; ++j) {
            if (x(window[j], c) > best) {
              best = x(window[j], c);
              arg = j;
            }
          }
          y(q, c) = best;
          if (cache) cache->argmax[static_cast<std::size_t>(q * cols + c)] = arg;
        }
      }
  return y;
}

template RowMatrix<double> max_pool2(const RowMatrix<double>&, const Grid&, Index, PoolCache*);
template RowMatrix<std::uint8_t> max_pool2(const RowMatrix<std::uint8_t>&, const Grid&, Index, PoolCache*);

Currents max_pool2_backward(const PoolCache& cache, const Grid& grid, const Currents& grad_out) {
  if (!cache.valid) throw UsageError("max_pool2: backward without a cached forward");
  const Index H2 = grid.height / 2, W2 = grid.width / 2, W = grid.width;
  Currents dx = Currents::Zero(grid.rows(), grad_out.cols());
  for (Index n = 0; n < grid.images; ++n)
    for (Index oy = 0; oy < H2; ++oy)
      for (Index ox = 0; ox < W2; ++ox) {
        const Index q = (n * H2 + oy) * W2 + ox;
        const Index p0 = n * grid.pixels() + 2 * oy * W + 2 * ox;
        const Index window[4] = {p0, p0 + 1, p0 + W, p0 + W + 1};
        for (Index c = 0; c < cache.cols; ++c)
          dx(window[cache.argmax[static_cast<std::size_t>(q * cache.cols + c)]], c) += grad_out(q, c);
      }
  return dx;
}

}  // namespace nest
