#include "nest/training.hpp"

#include "nest/events.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace nest {

Index TrainConfig::steps() const {
  return static_cast<Index>(std::llround(static_cast<double>(baseline_steps) * step_factor));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (baseline_steps < 1 || !(step_factor > 0.0) || steps() < 1) throw ConfigError("train: steps must be positive");
  if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2 for batch statistics");
  if (calibration_batches < 0) throw ConfigError("train: calibration_batches must be non-negative");
}

GranularitySampler::GranularitySampler(std::vector<double> probabilities) : p_(std::move(probabilities)) {
  if (p_.empty()) throw ConfigError("sampler: no granularities");
  double total = 0.0;
  for (double p : p_) {
    if (!(p >= 0.0)) throw ConfigError("sampler: probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("sampler: probabilities must sum to 1");
  double acc = 0.0;
  for (double p : p_) cdf_.push_back(acc += p);
}

int GranularitySampler::sample(std::mt19937_64& rng) const {
  // 53 random bits give a uniform double in [0, 1) independent of the
  // standard library's distribution implementation.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * cdf_.back();
  for (std::size_t g = 0; g < cdf_.size(); ++g)
    if (u < cdf_[g] && p_[g] > 0.0) return static_cast<int>(g);
  for (std::size_t g = cdf_.size(); g-- > 0;)
    if (p_[g] > 0.0) return static_cast<int>(g);
  return 0;
}

GranularitySampler sampler_from_params(const std::vector<double>& counts, SamplerRule rule) {
  if (counts.empty()) throw ConfigError("sampler: no parameter counts");
  for (std::size_t g = 0; g < counts.size(); ++g) {
    if (!(counts[g] > 0.0)) throw ConfigError("sampler: parameter counts must be positive");
    if (g > 0 && counts[g] < counts[g - 1]) throw ConfigError("sampler: parameter counts must be non-decreasing");
  }
  std::vector<double> w;
  for (double c : counts) w.push_back(rule == SamplerRule::kUniform ? 1.0 : rule == SamplerRule::kParamsSquared ? c * c : c);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return GranularitySampler(std::move(w));
}

GranularitySampler restrict_sampler(const GranularitySampler& s, const std::vector<int>& allowed) {
  if (allowed.empty()) return s;
  std::vector<double> p(s.probabilities().size(), 0.0);
  double total = 0.0;
  for (int g : allowed) {
    check_granularity(g, static_cast<int>(p.size()));
    p[g] = s.probabilities()[g];
  }
  for (double x : p) total += x;
  if (!(total > 0.0)) throw ConfigError("sampler: allowed granularities carry no probability");
  for (double& x : p) x /= total;
  return GranularitySampler(std::move(p));
}

double cosine_lr(Index step, Index total_steps, double lr0) {
  if (total_steps < 1 || step < 0 || step > total_steps) throw UsageError("cosine_lr: step outside [0, total]");
  return lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps))) / 2.0;
}

AdamW::AdamW(const Registry& reg, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), weight_decay_(cfg.weight_decay) {
  for (const auto& e : reg.params) {
    const auto& v = e.param->values;
    moments.push_back({Eigen::MatrixXd::Zero(v.rows(), v.cols()), Eigen::MatrixXd::Zero(v.rows(), v.cols())});
  }
}

void AdamW::step(const Registry& reg, int g, double lr) {
  if (reg.params.size() != moments.size()) throw StructuralError("adamw: registry does not match the moments");
  ++step_count;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count));
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    const auto ext = reg.params[i].active_extent(g);
    if (!ext) continue;
    ElasticParam& p = *reg.params[i].param;
    auto w = p.values.topLeftCorner(ext->rows, ext->cols);
    const auto grad = p.grads.topLeftCorner(ext->rows, ext->cols);
    auto m = moments[i].m.topLeftCorner(ext->rows, ext->cols);
    auto v = moments[i].v.topLeftCorner(ext->rows, ext->cols);
    m = beta1_ * m + (1.0 - beta1_) * grad;
    v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
    if (p.decays()) w *= 1.0 - lr * weight_decay_;
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

Batch make_batch(const std::vector<SpikeTensor>& frames, const std::vector<int>& labels,
                 const std::vector<Index>& indices) {
  Batch b;
  b.frames = batch_rows(frames, indices);
  b.steps = frames.at(indices.front()).dim(0);
  for (Index i : indices) b.labels.push_back(labels.at(i));
  return b;
}

double cross_entropy(const Currents& logits, const std::vector<int>& labels, Currents* grad) {
  const Index B = logits.rows();
  if (static_cast<Index>(labels.size()) != B) throw StructuralError("cross_entropy: label count mismatch");
  if (grad) grad->resize(B, logits.cols());
  double loss = 0.0;
  for (Index b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= logits.cols()) throw DataError("cross_entropy: label out of range");
    const double mx = logits.row(b).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(b).array() - mx).exp();
    const double z = e.sum();
    loss += std::log(z) + mx - logits(b, y);
    if (grad) {
      grad->row(b) = e / (z * static_cast<double>(B));
      (*grad)(b, y) -= 1.0 / static_cast<double>(B);
    }
  }
  return loss / static_cast<double>(B);
}

double train_step(Nestformer& model, AdamW& opt, const Batch& batch, int g, double lr) {
  Pass pass;
  pass.g = g;
  pass.steps = batch.steps;
  pass.batch = batch.size();
  pass.training = true;
  pass.mode = AttentionMode::kParallel;
  Nestformer::Cache cache;
  const Currents logits = model.run(batch.frames, pass, &cache);
  Currents grad;
  const double loss = cross_entropy(logits, batch.labels, &grad);
  if (!std::isfinite(loss)) throw NumericFault("train_step: non-finite loss at granularity " + std::to_string(g));

  const Registry reg = model.registry();
  model.zero_grad();
  model.backward(cache, grad);
  for (const auto& e : reg.params)
    if (!e.param->grads.allFinite()) throw NumericFault("train_step: non-finite gradient in " + e.name);
  opt.step(reg, g, lr);
  model.update_running(cache);
  return loss;
}

std::vector<StepRecord> train(Nestformer& model, const TrainConfig& cfg, const std::vector<SpikeTensor>& frames,
                              const std::vector<int>& labels, std::ostream* metrics,
                              const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();
  const Index n = static_cast<Index>(frames.size());
  if (n < cfg.batch_size || static_cast<Index>(labels.size()) != n)
    throw ConfigError("train: need at least one full batch of labelled samples");

  std::vector<double> counts;
  for (int g = 0; g < model.granularities(); ++g) counts.push_back(static_cast<double>(model.count_params(g)));
  const GranularitySampler sampler = restrict_sampler(sampler_from_params(counts, cfg.sampler), cfg.allowed);

  std::mt19937_64 g_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  std::mt19937_64 order_rng(cfg.seed ^ 0x14057b7ef767814fULL);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = n;

  AdamW opt(model.registry(), cfg);
  const Index total = cfg.steps();
  std::vector<StepRecord> log;
  for (Index s = 0; s < total; ++s) {
    if (cursor + cfg.batch_size > n) {
      // Fisher-Yates with raw engine output keeps the order identical across standard libraries.
      for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[order_rng() % static_cast<std::uint64_t>(i + 1)]);
      cursor = 0;
    }
    const std::vector<Index> idx(order.begin() + cursor, order.begin() + cursor + cfg.batch_size);
    cursor += cfg.batch_size;

    StepRecord rec;
    rec.step = s;
    rec.g = sampler.sample(g_rng);
    rec.lr = cosine_lr(s, total, cfg.lr);
    rec.loss = train_step(model, opt, make_batch(frames, labels, idx), rec.g, rec.lr);
    if (metrics) {
      *metrics << nlohmann::json{{"step", rec.step}, {"g", rec.g}, {"loss", rec.loss}, {"lr", rec.lr}}.dump() << '\n';
      metrics->flush();
    }
    spdlog::debug("step {} g{} loss {:.4f} lr {:.2e}", rec.step, rec.g, rec.loss, rec.lr);
    if (on_step) on_step(rec);
    log.push_back(rec);
  }
  if (cfg.calibration_batches > 0) {
    std::vector<int> gs = cfg.allowed;
    if (gs.empty())
      for (int g = 0; g < model.granularities(); ++g) gs.push_back(g);
    calibrate_running_stats(model, frames, gs, cfg.calibration_batches, cfg.batch_size,
                            cfg.seed ^ 0x2545f4914f6cdd1dULL);
  }
  return log;
}

void calibrate_running_stats(Nestformer& model, const std::vector<SpikeTensor>& frames,
                             const std::vector<int>& granularities, Index batches, Index batch_size,
                             std::uint64_t seed) {
  const Index n = static_cast<Index>(frames.size());
  if (batches < 1 || batch_size < 2 || n < batch_size)
    throw ConfigError("calibration: need at least one batch of two or more samples");
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % static_cast<std::uint64_t>(i + 1)]);
  for (int g : granularities) {
    check_granularity(g, model.granularities());
    for (Index k = 0; k < batches; ++k) {
      std::vector<Index> idx;
      for (Index j = 0; j < batch_size; ++j) idx.push_back(order[static_cast<std::size_t>((k * batch_size + j) % n)]);
      Pass pass;
      pass.g = g;
      pass.steps = frames.at(idx.front()).dim(0);
      pass.batch = batch_size;
      pass.training = true;
      Nestformer::Cache cache;
      model.run(batch_rows(frames, idx), pass, &cache);
      // Momentum 1/(k+1) turns the update into a running mean over the batches.
      model.update_running(cache, 1.0 / static_cast<double>(k + 1));
    }
  }
}

double evaluate(const Nestformer& model, const std::vector<SpikeTensor>& frames, const std::vector<int>& labels,
                int g, AttentionMode mode, Index batch_size, SpikeReport* report) {
  const Index n = static_cast<Index>(frames.size());
  if (n == 0 || static_cast<Index>(labels.size()) != n) throw UsageError("evaluate: empty or unlabelled set");
  Index correct = 0;
  for (Index start = 0; start < n; start += batch_size) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(frames, labels, idx);
    Pass pass;
    pass.g = g;
    pass.steps = b.steps;
    pass.batch = b.size();
    pass.mode = mode;
    pass.report = report;
    const Currents logits = model.run(b.frames, pass, nullptr);
    for (Index r = 0; r < logits.rows(); ++r) {
      Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      correct += arg == b.labels[r];
    }
  }
  if (report) report->batch = n;
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace nest
