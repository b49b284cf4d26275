#pragma once

#include "nest/layers.hpp"
#include "nest/norm.hpp"

#include <random>
#include <string>
#include <vector>

namespace nest {

struct WidthSchedule {
  Index h_min = 0;
  Index h_max = 0;
  int granularities = 0;
  std::vector<Index> widths;
};

/// Log-spaced hidden widths: round(h_min * 2^(g * log2(h_max / h_min) / (G - 1))).
WidthSchedule width_schedule(Index h_min, Index h_max, int granularities);

/// The reference widths {64, 160, 416, 1024}. Logs every entry where they
/// differ from the log-spaced generator.
WidthSchedule canonical_width_schedule();

/// Two-layer spiking MLP whose hidden width is prefix-sliced per granularity:
/// fc1 -> BN -> LIF -> fc2 -> BN -> LIF, input and output width fixed.
class ElasticMlp {
 public:
  struct Cache {
    InputCache fc1_in;
    NormLifCache norm1;
    InputCache fc2_in;
    NormLifCache norm2;
  };

  ElasticMlp() = default;
  ElasticMlp(const std::string& name, Index width, const std::vector<Index>& hidden, const LifConfig& lif);

  ElasticLinear fc1, fc2;
  NormLif lif1, lif2;

  int granularities() const { return fc1.granularities(); }
  Index hidden(int g) const { return fc1.out_features(g); }
  Index width() const { return fc1.max_in(); }

  void init(std::mt19937_64& rng);
  SpikeMatrix forward(const SpikeMatrix& x, const Pass& pass, Cache* cache) const;
  Currents backward(const Cache& cache, const Currents& grad_out);
  void update_running(const Cache& cache, std::optional<double> momentum = std::nullopt);
  void collect(Registry& reg, const std::string& prefix);
};

}  // namespace nest
