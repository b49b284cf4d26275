#pragma once

#include "nest/elastic_param.hpp"
#include "nest/registry.hpp"

#include <random>
#include <string>
#include <variant>
#include <vector>

namespace nest {

/// Input of a layer kept for its backward pass.
struct InputCache {
  std::variant<std::monostate, SpikeMatrix, Currents> input;
  int g = -1;

  bool valid() const { return g >= 0 && input.index() != 0; }
};

/// Linear map y = x W^T (+ b) whose output and input widths are prefix-sliced
/// by granularity. Forward accumulates weight columns for the non-zero inputs
/// in ascending order, so the result only depends on the active block.
class ElasticLinear {
 public:
  ElasticLinear() = default;
  ElasticLinear(std::vector<Index> out_extents, std::vector<Index> in_extents, bool bias);

  ElasticParam weight;  // [out_max x in_max]
  ElasticParam bias;    // [out_max x 1] when has_bias()

  bool has_bias() const { return has_bias_; }
  int granularities() const { return weight.granularities(); }
  Index out_features(int g) const { return weight.extent(g).rows; }
  Index in_features(int g) const { return weight.extent(g).cols; }
  Index max_out() const { return weight.values.rows(); }
  Index max_in() const { return weight.values.cols(); }

  void init(std::mt19937_64& rng);

  /// Output is [rows x max_out]; columns at or beyond out_features(g) are zero.
  Currents forward(const SpikeMatrix& x, int g, InputCache* cache = nullptr) const;
  Currents forward(const Currents& x, int g, InputCache* cache = nullptr) const;

  /// Accumulates parameter gradients on the active block and returns dL/dx
  /// ([rows x max_in], or empty when `input_grad` is false).
  Currents backward(const InputCache& cache, const Currents& grad_out, bool input_grad = true);

  void collect(Registry& reg, const std::string& prefix);

 private:
  bool has_bias_ = false;
};

/// Spatial geometry of activations laid out as [image * H * W, channels].
struct Grid {
  Index images = 1;
  Index height = 1;
  Index width = 1;
  Index pixels() const { return height * width; }
  Index rows() const { return images * height * width; }
};

enum class ConvKind { kDense, kDepthwise };

/// Stride-1 "same" convolution with elastic channel axes. Dense weights are
/// [out x in*k*k] with input channel major, so an input-channel prefix is a
/// column prefix. Depthwise weights are [channels x k*k].
class ElasticConv2d {
 public:
  ElasticConv2d() = default;
  ElasticConv2d(ConvKind kind, Index kernel, std::vector<Index> out_extents,
                std::vector<Index> in_extents);

  ElasticParam weight;

  ConvKind kind() const { return kind_; }
  Index kernel() const { return kernel_; }
  Index taps() const { return kernel_ * kernel_; }
  int granularities() const { return weight.granularities(); }
  Index out_channels(int g) const { return weight.extent(g).rows; }
  Index in_channels(int g) const;
  Index max_out() const { return weight.values.rows(); }
  Index max_in() const;

  void init(std::mt19937_64& rng);

  Currents forward(const SpikeMatrix& x, const Grid& grid, int g, InputCache* cache = nullptr) const;
  Currents forward(const Currents& x, const Grid& grid, int g, InputCache* cache = nullptr) const;
  Currents backward(const InputCache& cache, const Grid& grid, const Currents& grad_out,
                    bool input_grad = true);

  void collect(Registry& reg, const std::string& prefix);

 private:
  template <typename In>
  Currents forward_impl(const RowMatrix<In>& x, const Grid& grid, int g) const;
  template <typename In>
  void weight_grad(const RowMatrix<In>& x, const Grid& grid, const Currents& grad_out, int g);

  ConvKind kind_ = ConvKind::kDense;
  Index kernel_ = 1;
};

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major window order.
struct PoolCache {
  std::vector<std::uint8_t> argmax;
  Index cols = 0;
  bool valid = false;
};

template <typename Scalar>
RowMatrix<Scalar> max_pool2(const RowMatrix<Scalar>& x, const Grid& grid, Index cols,
                            PoolCache* cache = nullptr);
Currents max_pool2_backward(const PoolCache& cache, const Grid& grid, const Currents& grad_out);

}  // namespace nest
