#include "nest/run_config.hpp"

#include <fstream>

namespace nest {

using nlohmann::json;

namespace {

template <typename Setter>
void for_keys(const json& j, const char* section, Setter&& set) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!set(key, value)) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
}

json train_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"baseline_steps", t.baseline_steps},
          {"step_factor", t.step_factor},
          {"batch_size", t.batch_size},
          {"sampler", sampler_name(t.sampler)},
          {"allowed", t.allowed},
          {"calibration_batches", t.calibration_batches}};
}

TrainConfig train_from(const json& j) {
  TrainConfig t;
  for_keys(j, "train", [&](const std::string& k, const json& v) {
    if (k == "lr") t.lr = v.get<double>();
    else if (k == "weight_decay") t.weight_decay = v.get<double>();
    else if (k == "beta1") t.beta1 = v.get<double>();
    else if (k == "beta2") t.beta2 = v.get<double>();
    else if (k == "eps") t.eps = v.get<double>();
    else if (k == "baseline_steps") t.baseline_steps = v.get<Index>();
    else if (k == "step_factor") t.step_factor = v.get<double>();
    else if (k == "batch_size") t.batch_size = v.get<Index>();
    else if (k == "sampler") t.sampler = parse_sampler(v.get<std::string>());
    else if (k == "allowed") t.allowed = v.get<std::vector<int>>();
    else if (k == "calibration_batches") t.calibration_batches = v.get<Index>();
    else return false;
    return true;
  });
  return t;
}

json data_json(const DataConfig& d) {
  return {{"source", d.source},
          {"train_dir", d.train_dir},
          {"test_dir", d.test_dir},
          {"train_per_class", d.train_per_class},
          {"test_per_class", d.test_per_class},
          {"noise", d.noise},
          {"train_seed", d.train_seed},
          {"test_seed", d.test_seed}};
}

DataConfig data_from(const json& j) {
  DataConfig d;
  for_keys(j, "data", [&](const std::string& k, const json& v) {
    if (k == "source") d.source = v.get<std::string>();
    else if (k == "train_dir") d.train_dir = v.get<std::string>();
    else if (k == "test_dir") d.test_dir = v.get<std::string>();
    else if (k == "train_per_class") d.train_per_class = v.get<Index>();
    else if (k == "test_per_class") d.test_per_class = v.get<Index>();
    else if (k == "noise") d.noise = v.get<double>();
    else if (k == "train_seed") d.train_seed = v.get<std::uint64_t>();
    else if (k == "test_seed") d.test_seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return d;
}

json telemetry_json(const TelemetryConfig& t) {
  return {{"energy_per_sop_pj", t.energy.energy_per_sop_pj},
          {"range_min_pj", t.energy.range_min_pj},
          {"range_max_pj", t.energy.range_max_pj},
          {"fanout_weighted", t.energy.fanout_weighted},
          {"eval_batch", t.eval_batch}};
}

TelemetryConfig telemetry_from(const json& j) {
  TelemetryConfig t;
  for_keys(j, "telemetry", [&](const std::string& k, const json& v) {
    if (k == "energy_per_sop_pj") t.energy.energy_per_sop_pj = v.get<double>();
    else if (k == "range_min_pj") t.energy.range_min_pj = v.get<double>();
    else if (k == "range_max_pj") t.energy.range_max_pj = v.get<double>();
    else if (k == "fanout_weighted") t.energy.fanout_weighted = v.get<bool>();
    else if (k == "eval_batch") t.eval_batch = v.get<Index>();
    else return false;
    return true;
  });
  return t;
}

}  // namespace

const char* sampler_name(SamplerRule rule) {
  switch (rule) {
    case SamplerRule::kParams:
      return "params";
    case SamplerRule::kParamsSquared:
      return "params_squared";
    case SamplerRule::kUniform:
      return "uniform";
  }
  return "params";
}

SamplerRule parse_sampler(const std::string& name) {
  if (name == "params") return SamplerRule::kParams;
  if (name == "params_squared") return SamplerRule::kParamsSquared;
  if (name == "uniform") return SamplerRule::kUniform;
  throw ConfigError("unknown sampler '" + name + "'");
}

void DataConfig::validate() const {
  if (source == "synthetic") {
    if (train_per_class < 1 || test_per_class < 1) throw ConfigError("data: per-class counts must be positive");
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("data: noise must be a probability");
  } else if (source == "directory") {
    if (train_dir.empty() || test_dir.empty()) throw ConfigError("data: directory source needs train_dir and test_dir");
  } else {
    throw ConfigError("data: source must be 'synthetic' or 'directory'");
  }
}

void TelemetryConfig::validate() const {
  energy.validate();
  if (eval_batch < 1) throw ConfigError("telemetry: eval_batch must be positive");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  telemetry.validate();
  for (int g : train.allowed) check_granularity(g, model.granularities());
  if (data.source == "synthetic" && model.classes != kGestureClasses)
    throw ConfigError("data: the synthetic task has four classes");
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", train_json(c.train)},
          {"data", data_json(c.data)},
          {"telemetry", telemetry_json(c.telemetry)},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  try {
    for_keys(doc, "run config", [&](const std::string& k, const json& v) {
      if (k == "model") c.model = config_from_json(v);
      else if (k == "train") c.train = train_from(v);
      else if (k == "data") c.data = data_from(v);
      else if (k == "telemetry") c.telemetry = telemetry_from(v);
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else return false;
      return true;
    });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

Dataset load_split(const RunConfig& cfg, bool train) {
  const DataConfig& d = cfg.data;
  if (d.source == "directory")
    return load_dataset(train ? d.train_dir : d.test_dir, cfg.model.height, cfg.model.width,
                        static_cast<int>(cfg.model.classes));
  return synth_dataset(train ? d.train_per_class : d.test_per_class, train ? d.train_seed : d.test_seed,
                       cfg.model.timesteps, cfg.model.height, cfg.model.width, d.noise);
}

}  // namespace nest
