#include "nest/telemetry.hpp"

#include <json.hpp>

#include <sstream>

namespace nest {

using nlohmann::json;

const char* section_name(Section s) {
  switch (s) {
    case Section::kEmbed:
      return "embed";
    case Section::kAttention:
      return "attention";
    case Section::kMlp:
      return "mlp";
    case Section::kHead:
      return "head";
  }
  return "unknown";
}

Section parse_section(const std::string& name) {
  if (name == "embed") return Section::kEmbed;
  if (name == "attention") return Section::kAttention;
  if (name == "mlp") return Section::kMlp;
  if (name == "head") return Section::kHead;
  throw DataError("unknown section '" + name + "'");
}

void SpikeReport::add(const std::string& name, Section section, Index spikes, Index slots, Index max_slots,
                      Index fanout) {
  if (spikes < 0 || slots < 0 || max_slots < slots) throw ContractViolation("spike report: bad counts");
  for (auto& l : layers) {
    if (l.name == name) {
      l.spikes += spikes;
      l.slots += slots;
      l.max_slots += max_slots;
      return;
    }
  }
  layers.push_back({name, section, spikes, slots, max_slots, fanout});
}

Index SpikeReport::total_spikes() const {
  Index n = 0;
  for (const auto& l : layers) n += l.spikes;
  return n;
}

Index SpikeReport::total_slots() const {
  Index n = 0;
  for (const auto& l : layers) n += l.slots;
  return n;
}

Index SpikeReport::total_max_slots() const {
  Index n = 0;
  for (const auto& l : layers) n += l.max_slots;
  return n;
}

Index SpikeReport::synaptic_ops(bool fanout_weighted) const {
  if (!fanout_weighted) return total_spikes();
  Index n = 0;
  for (const auto& l : layers) n += l.spikes * l.fanout;
  return n;
}

const LayerSpikes* SpikeReport::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

void EnergyModel::validate() const {
  if (!(energy_per_sop_pj > 0.0)) throw ConfigError("energy per SOP must be positive");
  if (!(range_min_pj > 0.0) || range_min_pj > range_max_pj) throw ConfigError("bad energy range");
}

FiringRates firing_rate(const SpikeReport& report) {
  auto ratio = [](Index a, Index b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  FiringRates r;
  for (const auto& l : report.layers) {
    r.active.push_back(ratio(l.spikes, l.slots));
    r.max_alloc.push_back(ratio(l.spikes, l.max_slots));
  }
  r.total_active = ratio(report.total_spikes(), report.total_slots());
  r.total_max_alloc = ratio(report.total_spikes(), report.total_max_slots());
  return r;
}

std::array<double, 4> section_spike_share(const SpikeReport& report) {
  if (report.layers.empty()) throw UsageError("section share of an empty report");
  const Index total = report.total_spikes();
  if (total == 0) throw UsageError("section share of a report without spikes");
  std::array<Index, 4> counts{};
  for (const auto& l : report.layers) counts[static_cast<std::size_t>(l.section)] += l.spikes;
  std::array<double, 4> share{};
  for (std::size_t s = 0; s < 4; ++s) share[s] = static_cast<double>(counts[s]) / static_cast<double>(total);
  return share;
}

double energy_uj(double synaptic_ops, const EnergyModel& model) {
  model.validate();
  return synaptic_ops * model.energy_per_sop_pj * 1e-6;
}

double energy_estimate(const SpikeReport& report, const EnergyModel& model) {
  return energy_uj(static_cast<double>(report.synaptic_ops(model.fanout_weighted)), model);
}

std::vector<double> relative_energy(const std::vector<double>& energies_uj) {
  if (energies_uj.size() < 2) throw UsageError("relative energy needs at least two reports");
  const double ref = energies_uj.back();
  if (!(ref > 0.0)) throw UsageError("relative energy: reference energy must be positive");
  std::vector<double> out;
  for (double e : energies_uj) out.push_back(e / ref);
  return out;
}

std::string report_to_json(const SpikeReport& report, const EnergyModel& model) {
  const FiringRates rates = firing_rate(report);
  json layers = json::array();
  for (std::size_t i = 0; i < report.layers.size(); ++i) {
    const auto& l = report.layers[i];
    layers.push_back({{"name", l.name},
                      {"section", section_name(l.section)},
                      {"spikes", l.spikes},
                      {"slots", l.slots},
                      {"max_slots", l.max_slots},
                      {"fanout", l.fanout},
                      {"rate", rates.active[i]},
                      {"rate_max_alloc", rates.max_alloc[i]}});
  }
  json sections = json::object();
  std::array<Index, 4> counts{};
  for (const auto& l : report.layers) counts[static_cast<std::size_t>(l.section)] += l.spikes;
  for (std::size_t s = 0; s < 4; ++s) sections[section_name(static_cast<Section>(s))] = counts[s];
  json doc{{"granularity", report.granularity},
           {"batch", report.batch},
           {"timesteps", report.timesteps},
           {"layers", layers},
           {"totals",
            {{"spikes", report.total_spikes()},
             {"slots", report.total_slots()},
             {"max_slots", report.total_max_slots()},
             {"rate", rates.total_active},
             {"rate_max_alloc", rates.total_max_alloc}}},
           {"sections", sections},
           {"energy_per_sop_pj", model.energy_per_sop_pj},
           {"fanout_weighted", model.fanout_weighted},
           {"energy_uJ", energy_estimate(report, model)}};
  return doc.dump(2);
}

std::string report_to_csv(const SpikeReport& report) {
  const FiringRates rates = firing_rate(report);
  std::ostringstream out;
  out.precision(17);
  out << "layer,section,spikes,slots,rate\n";
  for (std::size_t i = 0; i < report.layers.size(); ++i) {
    const auto& l = report.layers[i];
    out << l.name << ',' << section_name(l.section) << ',' << l.spikes << ',' << l.slots << ',' << rates.active[i]
        << '\n';
  }
  return out.str();
}

SpikeReport report_from_json(const std::string& text) {
  SpikeReport r;
  try {
    const json doc = json::parse(text);
    r.granularity = doc.at("granularity").get<int>();
    r.batch = doc.at("batch").get<Index>();
    r.timesteps = doc.at("timesteps").get<Index>();
    for (const auto& l : doc.at("layers"))
      r.layers.push_back({l.at("name").get<std::string>(), parse_section(l.at("section").get<std::string>()),
                          l.at("spikes").get<Index>(), l.at("slots").get<Index>(), l.at("max_slots").get<Index>(),
                          l.at("fanout").get<Index>()});
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed spike report: ") + e.what());
  }
  return r;
}

}  // namespace nest
