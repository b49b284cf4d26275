#pragma once

#include "nest/core.hpp"

#include <random>
#include <string>
#include <vector>

namespace nest {

struct Extent {
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

/// A weight array allocated at its largest shape. Granularity g uses the
/// top-left block given by extent(g); smaller granularities are prefixes of
/// larger ones along every elastic axis.
class ElasticParam {
 public:
  ElasticParam() = default;
  ElasticParam(Index rows, Index cols, std::vector<Extent> extents, bool decays = true);

  /// Non-elastic parameter: every granularity sees the full array.
  static ElasticParam fixed(Index rows, Index cols, int granularities, bool decays = true);

  Eigen::MatrixXd values;
  Eigen::MatrixXd grads;

  int granularities() const { return static_cast<int>(extents_.size()); }
  const Extent& extent(int g) const;
  const std::vector<Extent>& extents() const { return extents_; }
  bool decays() const { return decays_; }

  auto active(int g) {
    const Extent& e = extent(g);
    return values.topLeftCorner(e.rows, e.cols);
  }
  auto active(int g) const {
    const Extent& e = extent(g);
    return values.topLeftCorner(e.rows, e.cols);
  }
  auto active_grad(int g) {
    const Extent& e = extent(g);
    return grads.topLeftCorner(e.rows, e.cols);
  }

  void zero_grad() { grads.setZero(); }
  void init_uniform(double bound, std::mt19937_64& rng);

  /// Copy of the granularity-g block as a standalone single-granularity parameter.
  ElasticParam extract(int g) const;

 private:
  std::vector<Extent> extents_;
  bool decays_ = true;
};

/// Geometric extents helper: row extents vary, columns fixed (or vice versa).
std::vector<Extent> row_elastic(const std::vector<Index>& rows, Index cols);
std::vector<Extent> col_elastic(Index rows, const std::vector<Index>& cols);

void check_granularity(int g, int granularities);

}  // namespace nest
