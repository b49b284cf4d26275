#pragma once

#include "nest/core.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace nest {

enum class Section { kEmbed, kAttention, kMlp, kHead };

const char* section_name(Section s);
Section parse_section(const std::string& name);

struct LayerSpikes {
  std::string name;
  Section section = Section::kEmbed;
  Index spikes = 0;
  Index slots = 0;      // active neurons x T x batch
  Index max_slots = 0;  // neurons at maximum allocation x T x batch
  Index fanout = 0;     // active synapses reached by one spike
};

/// Spike accounting for one (batched) inference. Entries appear in layer
/// construction order.
struct SpikeReport {
  std::vector<LayerSpikes> layers;
  Index batch = 0;
  Index timesteps = 0;
  int granularity = 0;

  void add(const std::string& name, Section section, Index spikes, Index slots, Index max_slots,
           Index fanout);
  Index total_spikes() const;
  Index total_slots() const;
  Index total_max_slots() const;
  Index synaptic_ops(bool fanout_weighted) const;
  const LayerSpikes* find(const std::string& name) const;
};

struct EnergyModel {
  double energy_per_sop_pj = 23.6;
  double range_min_pj = 0.9;
  double range_max_pj = 26.0;
  bool fanout_weighted = false;

  void validate() const;
};

struct FiringRates {
  std::vector<double> active;  // per layer, spikes / active slots
  std::vector<double> max_alloc;  // per layer, spikes / max-allocation slots
  double total_active = 0.0;
  double total_max_alloc = 0.0;
};

FiringRates firing_rate(const SpikeReport& report);

/// Fractions of all spikes in embed, attention, mlp and head, in that order.
std::array<double, 4> section_spike_share(const SpikeReport& report);

/// Energy in microjoules for `spikes` synaptic operations.
double energy_uj(double synaptic_ops, const EnergyModel& model);
double energy_estimate(const SpikeReport& report, const EnergyModel& model);

/// Each energy divided by the last one (the largest granularity).
std::vector<double> relative_energy(const std::vector<double>& energies_uj);

std::string report_to_json(const SpikeReport& report, const EnergyModel& model);
std::string report_to_csv(const SpikeReport& report);
SpikeReport report_from_json(const std::string& text);

}  // namespace nest
