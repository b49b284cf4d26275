#include "nest/norm.hpp"

#include <cmath>

namespace nest {

BatchNormBank::BatchNormBank(std::vector<Index> features, double eps, double momentum)
    : eps_(eps), momentum_(momentum) {
  if (features.empty()) throw ConfigError("batch norm: no granularities");
  for (std::size_t g = 0; g < features.size(); ++g) {
    const Index f = features[g];
    if (f < 1) throw ConfigError("batch norm: feature count must be positive");
    Bank bank;
    bank.gamma = ElasticParam::fixed(f, 1, 1, false);
    bank.gamma.values.setOnes();
    bank.beta = ElasticParam::fixed(f, 1, 1, false);
    bank.running_mean = Eigen::VectorXd::Zero(f);
    bank.running_var = Eigen::VectorXd::Ones(f);
    banks.push_back(std::move(bank));
    max_features_ = std::max(max_features_, f);
  }
}

Index BatchNormBank::features(int g) const {
  check_granularity(g, granularities());
  return banks[g].gamma.values.rows();
}

BatchNormBank::Stats BatchNormBank::prepare(const Currents& z, int g, bool training, BnCache* cache) const {
  const Index f = features(g);
  if (z.cols() < f) throw StructuralError("batch norm: input narrower than the active slice");
  const Bank& bank = banks[g];
  if (!training) return {bank.running_mean, (bank.running_var.array() + eps_).rsqrt().matrix()};
  if (!cache) throw UsageError("batch norm: training forward needs a cache");
  const Index n = z.rows();
  if (n < 2) throw StructuralError("batch norm: training needs at least two rows");
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(f);
  for (Index r = 0; r < n; ++r) sum += z.row(r).head(f);
  const Eigen::RowVectorXd mean = sum / static_cast<double>(n);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(f);
  for (Index r = 0; r < n; ++r) sq.array() += (z.row(r).head(f) - mean).array().square();
  cache->mean = mean.transpose();
  cache->batch_var = (sq / static_cast<double>(n)).transpose();
  cache->invstd = (cache->batch_var.array() + eps_).rsqrt();
  cache->g = g;
  return {cache->mean, cache->invstd};
}

void BatchNormBank::apply_row(const Stats& st, int g, const double* z, double* y) const {
  const Index f = features(g);
  const double* m = st.mean.data();
  const double* s = st.invstd.data();
  const double* gm = banks[g].gamma.values.data();
  const double* bt = banks[g].beta.values.data();
  for (Index c = 0; c < f; ++c) y[c] = (z[c] - m[c]) * s[c] * gm[c] + bt[c];
}

Currents BatchNormBank::forward(Currents z, int g, bool training, BnCache* cache) const {
  const Stats st = prepare(z, g, training, cache);
  const Index f = features(g);
  Currents y(z.rows(), z.cols());
  if (f < z.cols()) y.rightCols(z.cols() - f).setZero();
  for (Index r = 0; r < z.rows(); ++r) apply_row(st, g, z.row(r).data(), y.row(r).data());
  if (training) cache->z = std::move(z);
  return y;
}

Currents BatchNormBank::normalized(const BnCache& cache) const {
  if (!cache.valid()) throw UsageError("batch norm: no cached forward");
  const Stats st{cache.mean, cache.invstd};
  const Index f = features(cache.g);
  Currents y(cache.z.rows(), cache.z.cols());
  if (f < y.cols()) y.rightCols(y.cols() - f).setZero();
  for (Index r = 0; r < y.rows(); ++r) apply_row(st, cache.g, cache.z.row(r).data(), y.row(r).data());
  return y;
}

Currents BatchNormBank::backward(const BnCache& cache, Currents grad_y) {
  if (!cache.valid()) throw UsageError("batch norm: backward without a cached forward");
  const int g = cache.g;
  const Index f = features(g);
  const Index n = cache.z.rows();
  if (grad_y.rows() != n || grad_y.cols() < f) throw StructuralError("batch norm: gradient rows mismatch");
  Bank& bank = banks[g];

  const Eigen::RowVectorXd mean = cache.mean.transpose();
  const Eigen::RowVectorXd invstd = cache.invstd.transpose();
  Eigen::RowVectorXd sum_dy = Eigen::RowVectorXd::Zero(f);
  Eigen::RowVectorXd sum_dy_xhat = Eigen::RowVectorXd::Zero(f);
  for (Index r = 0; r < n; ++r) {
    const auto dy = grad_y.row(r).head(f).array();
    sum_dy.array() += dy;
    sum_dy_xhat.array() += dy * ((cache.z.row(r).head(f) - mean).array() * invstd.array());
  }
  bank.beta.grads.col(0) += sum_dy.transpose();
  bank.gamma.grads.col(0) += sum_dy_xhat.transpose();

  // The incoming gradient buffer becomes dL/dz in place.
  const Eigen::RowVectorXd scale =
      (bank.gamma.values.col(0).array() * cache.invstd.array()).transpose() / static_cast<double>(n);
  const double dn = static_cast<double>(n);
  for (Index r = 0; r < n; ++r) {
    auto d = grad_y.row(r).head(f).array();
    const auto xhat = (cache.z.row(r).head(f) - mean).array() * invstd.array();
    d = scale.array() * (dn * d - sum_dy.array() - xhat * sum_dy_xhat.array());
  }
  if (f < grad_y.cols()) grad_y.rightCols(grad_y.cols() - f).setZero();
  return grad_y;
}

void BatchNormBank::update_running(const BnCache& cache, std::optional<double> momentum) {
  if (!cache.valid()) throw UsageError("batch norm: no batch statistics to commit");
  const double m = momentum.value_or(momentum_);
  if (!(m > 0.0 && m <= 1.0)) throw UsageError("batch norm: momentum must be in (0, 1]");
  Bank& bank = banks[cache.g];
  const double n = static_cast<double>(cache.z.rows());
  const Eigen::VectorXd unbiased = cache.batch_var * (n / (n - 1.0));
  bank.running_mean = (1.0 - m) * bank.running_mean + m * cache.mean;
  bank.running_var = (1.0 - m) * bank.running_var + m * unbiased;
}

void BatchNormBank::collect(Registry& reg, const std::string& prefix) {
  for (int g = 0; g < granularities(); ++g) {
    const std::string p = prefix + ".bank" + std::to_string(g);
    reg.params.push_back({p + ".gamma", &banks[g].gamma, g});
    reg.params.push_back({p + ".beta", &banks[g].beta, g});
    reg.buffers.push_back({p + ".running_mean", &banks[g].running_mean, g});
    reg.buffers.push_back({p + ".running_var", &banks[g].running_var, g});
  }
}

// --------------------------------------------------------------- NormLif

NormLif::NormLif(std::string name, Section section, std::vector<Index> features, LifConfig lif)
    : bn(std::move(features)), lif(lif), name(std::move(name)), section(section) {
  lif.validate();
}

SpikeMatrix NormLif::forward(Currents z, const Pass& pass, NormLifCache* cache, Index fanout) const {
  const int g = pass.g;
  const Index f = bn.features(g);
  const BatchNormBank::Stats st = bn.prepare(z, g, pass.training, cache ? &cache->bn : nullptr);
  SpikeMatrix spikes(z.rows(), z.cols());
  if (f < z.cols()) spikes.rightCols(z.cols() - f).setZero();
  const Index count = lif_run_stream(
      z.rows(), pass.steps, f, lif, SpikeMode::kHeaviside,
      [&](Index i, double* buf) { bn.apply_row(st, g, z.row(i).data(), buf); }, spikes);
  if (pass.report)
    pass.report->add(name, section, count, z.rows() * f, z.rows() * bn.max_features(), fanout);
  if (cache) {
    cache->steps = pass.steps;
    if (pass.training) {
      cache->bn.z = std::move(z);
    } else {
      cache->bn = BnCache{};
    }
  }
  return spikes;
}

Currents NormLif::backward(const NormLifCache& cache, const Currents& grad_spikes) {
  const BnCache& c = cache.bn;
  if (!c.valid()) throw UsageError("norm lif: backward without a training forward");
  const Index f = bn.features(c.g);
  const BatchNormBank::Stats st{c.mean, c.invstd};
  Currents dy(c.z.rows(), c.z.cols());
  lif_backward_stream(
      c.z.rows(), cache.steps, f, lif, SpikeMode::kHeaviside,
      [&](Index i, double* buf) { bn.apply_row(st, c.g, c.z.row(i).data(), buf); }, grad_spikes, dy);
  return bn.backward(c, std::move(dy));
}

// ----------------------------------------------------------- ResidualLif

SpikeMatrix ResidualLif::forward(const SpikeMatrix& shortcut, const SpikeMatrix& branch,
                                 const Pass& pass, ResidualCache* cache, Index fanout) const {
  if (shortcut.rows() != branch.rows() || shortcut.cols() != branch.cols())
    throw StructuralError("residual: operand shapes differ");
  Currents sum = shortcut.cast<double>() + branch.cast<double>();
  SpikeMatrix spikes = SpikeMatrix::Zero(sum.rows(), sum.cols());
  const Index count = lif_run(sum, pass.steps, sum.cols(), lif, SpikeMode::kHeaviside, spikes);
  if (pass.report) pass.report->add(name, section, count, sum.size(), sum.size(), fanout);
  if (cache) {
    cache->sum = std::move(sum);
    cache->steps = pass.steps;
    cache->valid = true;
  }
  return spikes;
}

Currents ResidualLif::backward(const ResidualCache& cache, const Currents& grad_spikes) const {
  if (!cache.valid) throw UsageError("residual: backward without a cached forward");
  return lif_run_backward(cache.sum, cache.steps, cache.sum.cols(), lif, SpikeMode::kHeaviside,
                          grad_spikes);
}

}  // namespace nest
