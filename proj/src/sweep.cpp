#include "nest/sweep.hpp"

#include "nest/training.hpp"

#include <spdlog/spdlog.h>

#include <sstream>

namespace nest {

std::vector<SweepCell> run_sweep(const Nestformer& model, const Dataset& data, const std::vector<Index>& steps,
                                 const std::vector<int>& granularities, AttentionMode mode, Index batch,
                                 const EnergyModel& energy) {
  if (steps.empty() || granularities.empty()) throw UsageError("sweep: empty grid");
  std::vector<SweepCell> cells;
  for (Index T : steps) {
    const auto frames = bin_dataset(data, T);
    for (int g : granularities) {
      SpikeReport report;
      report.granularity = g;
      report.timesteps = T;
      SweepCell c;
      c.timesteps = T;
      c.granularity = g;
      c.accuracy = evaluate(model, frames, data.labels, g, mode, batch, &report);
      const double n = static_cast<double>(report.batch);
      c.spikes_per_inference = static_cast<double>(report.total_spikes()) / n;
      c.energy_uj = energy_estimate(report, energy) / n;
      spdlog::info("sweep T={} g{} accuracy {:.4f} energy {:.4f} uJ", T, g, c.accuracy, c.energy_uj);
      cells.push_back(c);
    }
  }
  return cells;
}

std::string sweep_heatmap_csv(const std::vector<SweepCell>& cells) {
  std::vector<int> gs;
  for (const auto& c : cells) {
    if (!gs.empty() && c.granularity == gs.front()) break;
    gs.push_back(c.granularity);
  }
  if (gs.empty() || cells.size() % gs.size() != 0) throw StructuralError("sweep: ragged grid");
  std::ostringstream out;
  out.precision(10);
  out << 'T';
  for (int g : gs) out << ",g" << g;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i % gs.size() == 0) out << '\n' << cells[i].timesteps;
    out << ',' << cells[i].accuracy << ';' << cells[i].energy_uj;
  }
  out << '\n';
  return out.str();
}

std::string sweep_long_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out.precision(17);
  out << "T,g,accuracy,spikes_per_inference,energy_uJ\n";
  for (const auto& c : cells)
    out << c.timesteps << ',' << c.granularity << ',' << c.accuracy << ',' << c.spikes_per_inference << ','
        << c.energy_uj << '\n';
  return out.str();
}

}  // namespace nest
