#pragma once

#include "nest/events.hpp"
#include "nest/model.hpp"
#include "nest/telemetry.hpp"
#include "nest/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace nest {

/// Where samples come from: the built-in moving-bar generator or a directory
/// with an index.csv per split.
struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "directory"
  std::string train_dir;
  std::string test_dir;
  Index train_per_class = 256;
  Index test_per_class = 64;
  double noise = 1e-3;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;

  void validate() const;
};

struct TelemetryConfig {
  EnergyModel energy;
  Index eval_batch = 16;

  void validate() const;
};

/// One declarative document per run. `seed` drives weight init, the
/// granularity sampler and the batch order.
struct RunConfig {
  NestformerConfig model;
  TrainConfig train;
  DataConfig data;
  TelemetryConfig telemetry;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Rejects unknown keys at every level before anything is computed.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

const char* sampler_name(SamplerRule rule);
SamplerRule parse_sampler(const std::string& name);

/// Materialises a split at the model's resolution. Streams are generated
/// (synthetic) or read from the split's directory.
Dataset load_split(const RunConfig& cfg, bool train);

}  // namespace nest
