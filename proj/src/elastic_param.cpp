#include "nest/elastic_param.hpp"

#include <string>

namespace nest {

void check_granularity(int g, int granularities) {
  if (g < 0 || g >= granularities)
    throw ConfigError("granularity " + std::to_string(g) + " outside [0, " +
                      std::to_string(granularities) + ")");
}

ElasticParam::ElasticParam(Index rows, Index cols, std::vector<Extent> extents, bool decays)
    : values(Eigen::MatrixXd::Zero(rows, cols)),
      grads(Eigen::MatrixXd::Zero(rows, cols)),
      extents_(std::move(extents)),
      decays_(decays) {
  if (extents_.empty()) throw ConfigError("elastic param needs at least one extent");
  for (std::size_t g = 0; g < extents_.size(); ++g) {
    const Extent& e = extents_[g];
    if (e.rows < 1 || e.cols < 1 || e.rows > rows || e.cols > cols)
      throw ConfigError("elastic extent outside the allocated shape");
    if (g > 0 && (e.rows < extents_[g - 1].rows || e.cols < extents_[g - 1].cols))
      throw ConfigError("elastic extents must be non-decreasing in g");
  }
}

ElasticParam ElasticParam::fixed(Index rows, Index cols, int granularities, bool decays) {
  return ElasticParam(rows, cols, std::vector<Extent>(granularities, Extent{rows, cols}), decays);
}

const Extent& ElasticParam::extent(int g) const {
  check_granularity(g, granularities());
  return extents_[g];
}

void ElasticParam::init_uniform(double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  // Column-major fill keeps the draw order independent of the active extent.
  for (Index c = 0; c < values.cols(); ++c)
    for (Index r = 0; r < values.rows(); ++r) values(r, c) = dist(rng);
}

ElasticParam ElasticParam::extract(int g) const {
  const Extent& e = extent(g);
  ElasticParam out(e.rows, e.cols, {e}, decays_);
  out.values = values.topLeftCorner(e.rows, e.cols);
  return out;
}

std::vector<Extent> row_elastic(const std::vector<Index>& rows, Index cols) {
  std::vector<Extent> out;
  for (Index r : rows) out.push_back({r, cols});
  return out;
}

std::vector<Extent> col_elastic(Index rows, const std::vector<Index>& cols) {
  std::vector<Extent> out;
  for (Index c : cols) out.push_back({rows, c});
  return out;
}

}  // namespace nest
