#pragma once

#include "nest/model.hpp"

#include <functional>
#include <ostream>
#include <random>
#include <vector>

namespace nest {

/// How per-granularity parameter counts turn into sampling probabilities.
enum class SamplerRule { kParams, kParamsSquared, kUniform };

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 6e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Steps a single fixed-size model would get; the elastic run uses step_factor times that.
  Index baseline_steps = 400;
  double step_factor = 1.5;
  Index batch_size = 8;
  std::uint64_t seed = 0;
  SamplerRule sampler = SamplerRule::kParams;
  /// Granularities the sampler may pick; empty means all of them.
  std::vector<int> allowed;
  /// Batches per granularity for the closing running-statistics pass; 0 skips it.
  Index calibration_batches = 8;

  Index steps() const;
  void validate() const;
};

class GranularitySampler {
 public:
  explicit GranularitySampler(std::vector<double> probabilities);

  const std::vector<double>& probabilities() const { return p_; }
  int sample(std::mt19937_64& rng) const;

 private:
  std::vector<double> p_;
  std::vector<double> cdf_;
};

/// P(g) proportional to counts[g] (or its square, or uniform). Counts must be
/// positive and non-decreasing in g.
GranularitySampler sampler_from_params(const std::vector<double>& counts, SamplerRule rule = SamplerRule::kParams);

/// Zeroes the probability of granularities outside `allowed` and renormalises.
GranularitySampler restrict_sampler(const GranularitySampler& s, const std::vector<int>& allowed);

double cosine_lr(Index step, Index total_steps, double lr0);

/// AdamW with decoupled weight decay. Moments are kept at each parameter's
/// full shape and only the slice active at the step's granularity is read or
/// written.
class AdamW {
 public:
  struct Moments {
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
  };

  AdamW(const Registry& reg, const TrainConfig& cfg);

  std::vector<Moments> moments;
  Index step_count = 0;

  void step(const Registry& reg, int g, double lr);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
};

struct Batch {
  Currents frames;  // [T * B * H * W, channels]
  std::vector<int> labels;
  Index steps = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
};

Batch make_batch(const std::vector<SpikeTensor>& frames, const std::vector<int>& labels,
                 const std::vector<Index>& indices);

/// Mean cross-entropy of the rows of `logits`; `grad` receives dL/dlogits.
double cross_entropy(const Currents& logits, const std::vector<int>& labels, Currents* grad = nullptr);

/// One masked update at granularity g in the parallel executor. A non-finite
/// loss or gradient raises NumericFault before anything is modified.
double train_step(Nestformer& model, AdamW& opt, const Batch& batch, int g, double lr);

struct StepRecord {
  Index step = 0;
  int g = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Replaces the running statistics of each listed bank by the plain average
/// of `batches` training-mode batch statistics under the current weights.
/// Banks drift while other granularities update the shared weights, so the
/// training loop ends with this pass.
void calibrate_running_stats(Nestformer& model, const std::vector<SpikeTensor>& frames,
                             const std::vector<int>& granularities, Index batches, Index batch_size,
                             std::uint64_t seed);

/// Runs cfg.steps() steps over the training frames, then recalibrates the
/// running statistics of the sampled granularities. Each record is written
/// to `metrics` as one JSON line when given; `on_step` sees every record.
std::vector<StepRecord> train(Nestformer& model, const TrainConfig& cfg, const std::vector<SpikeTensor>& frames,
                              const std::vector<int>& labels, std::ostream* metrics = nullptr,
                              const std::function<void(const StepRecord&)>& on_step = {});

/// Fraction of correct argmax predictions; spikes are accumulated into `report`.
double evaluate(const Nestformer& model, const std::vector<SpikeTensor>& frames, const std::vector<int>& labels,
                int g, AttentionMode mode, Index batch_size = 16, SpikeReport* report = nullptr);

}  // namespace nest
