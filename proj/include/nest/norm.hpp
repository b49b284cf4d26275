#pragma once

#include "nest/elastic_param.hpp"
#include "nest/lif.hpp"
#include "nest/registry.hpp"
#include "nest/telemetry.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nest {

enum class AttentionMode { kParallel, kRowwise };

/// Per-call options threaded through a forward pass.
struct Pass {
  int g = 0;
  Index steps = 1;
  Index batch = 1;
  bool training = false;  // batch statistics and cached context for backward
  AttentionMode mode = AttentionMode::kParallel;
  SpikeReport* report = nullptr;
};

struct BnCache {
  Currents z;
  Eigen::VectorXd mean;
  Eigen::VectorXd invstd;
  Eigen::VectorXd batch_var;
  int g = -1;

  bool valid() const { return g >= 0; }
};

/// G independent batch-norm parameter sets; bank g normalises the first
/// features(g) columns and is the only one touched at granularity g.
class BatchNormBank {
 public:
  struct Bank {
    ElasticParam gamma;
    ElasticParam beta;
    Eigen::VectorXd running_mean;
    Eigen::VectorXd running_var;
  };

  BatchNormBank() = default;
  explicit BatchNormBank(std::vector<Index> features, double eps = 1e-5, double momentum = 0.1);

  std::vector<Bank> banks;

  int granularities() const { return static_cast<int>(banks.size()); }
  Index features(int g) const;
  Index max_features() const { return max_features_; }
  double eps() const { return eps_; }

  struct Stats {
    Eigen::VectorXd mean;
    Eigen::VectorXd invstd;
  };

  /// Batch statistics over all rows in training mode (recorded in `cache`,
  /// which is then required), running statistics otherwise.
  Stats prepare(const Currents& z, int g, bool training, BnCache* cache) const;
  /// y = (z - mean) * invstd * gamma + beta over the first features(g) entries of one row.
  void apply_row(const Stats& st, int g, const double* z, double* y) const;

  /// Training mode requires `cache` and normalises with batch statistics over
  /// all rows; eval mode uses the bank's running statistics.
  Currents forward(Currents z, int g, bool training, BnCache* cache = nullptr) const;
  Currents normalized(const BnCache& cache) const;
  Currents backward(const BnCache& cache, Currents grad_y);
  void update_running(const BnCache& cache, std::optional<double> momentum = std::nullopt);

  void collect(Registry& reg, const std::string& prefix);

 private:
  Index max_features_ = 0;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
};

struct NormLifCache {
  BnCache bn;
  Index steps = 0;
};

/// Batch norm (bank g) followed by a LIF population: the conv/linear -> BN ->
/// LIF ordering used throughout the network.
class NormLif {
 public:
  NormLif() = default;
  NormLif(std::string name, Section section, std::vector<Index> features, LifConfig lif);

  BatchNormBank bn;
  LifConfig lif;
  std::string name;
  Section section = Section::kEmbed;

  SpikeMatrix forward(Currents z, const Pass& pass, NormLifCache* cache, Index fanout = 0) const;
  Currents backward(const NormLifCache& cache, const Currents& grad_spikes);
  void update_running(const NormLifCache& cache, std::optional<double> momentum = std::nullopt) {
    bn.update_running(cache.bn, momentum);
  }

  void collect(Registry& reg, const std::string& prefix) { bn.collect(reg, prefix + ".bn"); }
};

struct ResidualCache {
  Currents sum;
  Index steps = 0;
  bool valid = false;
};

/// Spike-tensor addition followed by LIF re-binarisation.
class ResidualLif {
 public:
  ResidualLif() = default;
  ResidualLif(std::string name, Section section, LifConfig lif)
      : lif(lif), name(std::move(name)), section(section) {}

  LifConfig lif;
  std::string name;
  Section section = Section::kAttention;

  SpikeMatrix forward(const SpikeMatrix& shortcut, const SpikeMatrix& branch, const Pass& pass,
                      ResidualCache* cache, Index fanout = 0) const;
  Currents backward(const ResidualCache& cache, const Currents& grad_spikes) const;
};

}  // namespace nest
