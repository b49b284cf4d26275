#include "nest/mlp.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace nest {

WidthSchedule width_schedule(Index h_min, Index h_max, int granularities) {
  if (h_min < 1 || h_min >= h_max) throw ConfigError("width_schedule: need 0 < h_min < h_max");
  if (granularities < 2) throw ConfigError("width_schedule: need at least two granularities");
  WidthSchedule s{h_min, h_max, granularities, {}};
  const double octaves = std::log2(static_cast<double>(h_max) / static_cast<double>(h_min));
  for (int g = 0; g < granularities; ++g) {
    const double exponent = g * octaves / (granularities - 1);
    s.widths.push_back(static_cast<Index>(std::llround(static_cast<double>(h_min) * std::exp2(exponent))));
  }
  s.widths.front() = h_min;
  s.widths.back() = h_max;
  for (int g = 1; g < granularities; ++g)
    if (s.widths[g] <= s.widths[g - 1])
      throw ConfigError("width_schedule: bounds too close for strictly increasing widths");
  return s;
}

WidthSchedule canonical_width_schedule() {
  WidthSchedule canonical{64, 1024, 4, {64, 160, 416, 1024}};
  const WidthSchedule generated = width_schedule(64, 1024, 4);
  for (int g = 0; g < canonical.granularities; ++g) {
    if (canonical.widths[g] != generated.widths[g])
      spdlog::info("mlp width g{}: canonical {} overrides log-spaced {}", g, canonical.widths[g],
                   generated.widths[g]);
  }
  return canonical;
}

ElasticMlp::ElasticMlp(const std::string& name, Index width, const std::vector<Index>& hidden,
                       const LifConfig& lif) {
  if (hidden.empty()) throw ConfigError("mlp: empty width schedule");
  for (std::size_t g = 1; g < hidden.size(); ++g)
    if (hidden[g] < hidden[g - 1]) throw ConfigError("mlp: hidden widths must be non-decreasing");
  const std::vector<Index> io(hidden.size(), width);
  fc1 = ElasticLinear(hidden, io, false);
  fc2 = ElasticLinear(io, hidden, false);
  lif1 = NormLif(name + ".lif1", Section::kMlp, hidden, lif);
  lif2 = NormLif(name + ".lif2", Section::kMlp, io, lif);
}

void ElasticMlp::init(std::mt19937_64& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

SpikeMatrix ElasticMlp::forward(const SpikeMatrix& x, const Pass& pass, Cache* cache) const {
  if (pass.training && !cache) throw UsageError("mlp: training forward needs a cache");
  const SpikeMatrix h = lif1.forward(fc1.forward(x, pass.g, cache ? &cache->fc1_in : nullptr), pass,
                                     cache ? &cache->norm1 : nullptr, width());
  return lif2.forward(fc2.forward(h, pass.g, cache ? &cache->fc2_in : nullptr), pass,
                      cache ? &cache->norm2 : nullptr, 1);
}

Currents ElasticMlp::backward(const Cache& cache, const Currents& grad_out) {
  const Currents grad_h = fc2.backward(cache.fc2_in, lif2.backward(cache.norm2, grad_out));
  return fc1.backward(cache.fc1_in, lif1.backward(cache.norm1, grad_h));
}

void ElasticMlp::update_running(const Cache& cache, std::optional<double> momentum) {
  lif1.update_running(cache.norm1, momentum);
  lif2.update_running(cache.norm2, momentum);
}

void ElasticMlp::collect(Registry& reg, const std::string& prefix) {
  fc1.collect(reg, prefix + ".fc1");
  lif1.collect(reg, prefix + ".lif1");
  fc2.collect(reg, prefix + ".fc2");
  lif2.collect(reg, prefix + ".lif2");
}

}  // namespace nest
