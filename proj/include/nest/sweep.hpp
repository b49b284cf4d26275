#pragma once

#include "nest/events.hpp"
#include "nest/model.hpp"
#include "nest/telemetry.hpp"

#include <string>
#include <vector>

namespace nest {

struct SweepCell {
  Index timesteps = 0;
  int granularity = 0;
  double accuracy = 0.0;
  double spikes_per_inference = 0.0;
  double energy_uj = 0.0;  // per inference
};

/// Evaluates every (T, g) pair on the split, re-binning the streams for each T.
/// Cells come back T-major in the order given.
std::vector<SweepCell> run_sweep(const Nestformer& model, const Dataset& data, const std::vector<Index>& steps,
                                 const std::vector<int>& granularities, AttentionMode mode, Index batch,
                                 const EnergyModel& energy);

/// Heatmap: header "T,g0,g1,...", one row per T, cells "accuracy;energy_uJ".
std::string sweep_heatmap_csv(const std::vector<SweepCell>& cells);
/// One line per cell: "T,g,accuracy,spikes_per_inference,energy_uJ".
std::string sweep_long_csv(const std::vector<SweepCell>& cells);

}  // namespace nest
