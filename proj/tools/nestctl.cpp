// nestctl: train, evaluate, slice and inspect elastic spiking transformers.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error (missing or
// malformed files), 3 numeric fault during training, 4 checkpoint version
// mismatch.

#include "nest/checkpoint.hpp"
#include "nest/run_config.hpp"
#include "nest/sweep.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace nest;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kVersion = 4 };

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<int> granularity;
  std::vector<Index> timesteps;
  std::string mode;
  std::optional<std::uint64_t> seed;
};

// The data split must match the model it is fed to, so the checkpoint's
// architecture replaces the config's model section.
RunConfig run_config(const Options& o, const Nestformer* model = nullptr) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (model) cfg.model = model->cfg;
  return cfg;
}

std::optional<AttentionMode> parse_mode(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "parallel") return AttentionMode::kParallel;
  if (s == "rowwise") return AttentionMode::kRowwise;
  throw UsageError("--mode must be parallel or rowwise");
}

void check_timesteps(Index T) {
  for (Index a : kAllowedTimesteps)
    if (a == T) return;
  throw UsageError("--timesteps must be one of 4, 8, 16, 32, 64");
}

std::vector<int> granularities(const Nestformer& m, const std::optional<int>& g) {
  if (g) {
    check_granularity(*g, m.granularities());
    return {*g};
  }
  std::vector<int> all;
  for (int i = 0; i < m.granularities(); ++i) all.push_back(i);
  return all;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

struct Measured {
  double accuracy = 0.0;
  SpikeReport report;
};

Measured measure(const Nestformer& m, const std::vector<SpikeTensor>& frames, const std::vector<int>& labels, int g,
                 AttentionMode mode, Index batch) {
  Measured r;
  r.report.granularity = g;
  r.report.timesteps = frames.front().dim(0);
  r.accuracy = evaluate(m, frames, labels, g, mode, batch, &r.report);
  return r;
}

int cmd_train(const Options& o) {
  RunConfig cfg = run_config(o);
  if (!o.timesteps.empty()) {
    check_timesteps(o.timesteps.front());
    cfg.model.timesteps = o.timesteps.front();
    cfg.validate();
  }
  const fs::path dir = out_dir(o);
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");

  const Dataset train_set = load_split(cfg, true);
  const Dataset test_set = load_split(cfg, false);
  const auto train_frames = bin_dataset(train_set, cfg.model.timesteps);
  const auto test_frames = bin_dataset(test_set, cfg.model.timesteps);
  spdlog::info("train {} samples, test {} samples, {} steps", train_set.size(), test_set.size(), cfg.train.steps());

  Nestformer model(cfg.model);
  model.init(cfg.seed);
  std::ofstream metrics(dir / "metrics.jsonl");
  train(model, cfg.train, train_frames, train_set.labels, &metrics, [&](const StepRecord& r) {
    if ((r.step + 1) % 25 == 0) spdlog::info("step {} g{} loss {:.4f}", r.step + 1, r.g, r.loss);
  });
  save_checkpoint(model, dir / "model.ckpt");

  json acc = json::object();
  for (int g = 0; g < model.granularities(); ++g) {
    const Measured r = measure(model, test_frames, test_set.labels, g, model.mode, cfg.telemetry.eval_batch);
    acc["g" + std::to_string(g)] = r.accuracy;
    spdlog::info("g{} accuracy {:.4f}", g, r.accuracy);
  }
  write_text(dir / "eval.json", acc.dump(2) + "\n");
  std::cout << acc.dump() << '\n';
  return kOk;
}

int cmd_eval(const Options& o) {
  const Nestformer model = load_checkpoint(o.checkpoint);
  const RunConfig cfg = run_config(o, &model);
  const Index T = o.timesteps.empty() ? model.cfg.timesteps : o.timesteps.front();
  check_timesteps(T);
  const AttentionMode mode = parse_mode(o.mode).value_or(model.mode);
  const Dataset test_set = load_split(cfg, false);
  const auto frames = bin_dataset(test_set, T);
  json doc = json::object();
  for (int g : granularities(model, o.granularity)) {
    const Measured r = measure(model, frames, test_set.labels, g, mode, cfg.telemetry.eval_batch);
    doc["g" + std::to_string(g)] = r.accuracy;
  }
  std::cout << doc.dump() << '\n';
  if (!o.out.empty()) write_text(out_dir(o) / "eval.json", doc.dump(2) + "\n");
  return kOk;
}

int cmd_extract(const Options& o, bool convert) {
  if (o.out.empty()) throw UsageError("--out is required");
  if (!convert && !o.granularity) throw UsageError("extract needs --granularity");
  Nestformer model = load_checkpoint(o.checkpoint);
  Nestformer sub = convert ? convert_to_deployment(model, o.granularity.value_or(-1))
                           : extract_submodel(model, *o.granularity);
  const fs::path path(o.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_checkpoint(sub, path);
  std::cout << json{{"params", sub.count_params(0)}, {"out", path.string()}}.dump() << '\n';
  return kOk;
}

int cmd_sweep(const Options& o) {
  const Nestformer model = load_checkpoint(o.checkpoint);
  const RunConfig cfg = run_config(o, &model);
  const std::vector<Index> steps = o.timesteps.empty() ? std::vector<Index>{4, 8} : o.timesteps;
  for (Index T : steps) check_timesteps(T);
  const AttentionMode mode = parse_mode(o.mode).value_or(model.mode);
  const fs::path dir = out_dir(o);
  const auto cells = run_sweep(model, load_split(cfg, false), steps, granularities(model, o.granularity), mode,
                               cfg.telemetry.eval_batch, cfg.telemetry.energy);
  const std::string grid = sweep_heatmap_csv(cells);
  write_text(dir / "sweep.csv", grid);
  write_text(dir / "sweep_long.csv", sweep_long_csv(cells));
  std::cout << grid;
  return kOk;
}

int cmd_report(const Options& o) {
  const Nestformer model = load_checkpoint(o.checkpoint);
  const RunConfig cfg = run_config(o, &model);
  const Index T = o.timesteps.empty() ? model.cfg.timesteps : o.timesteps.front();
  check_timesteps(T);
  const AttentionMode mode = parse_mode(o.mode).value_or(model.mode);
  const Dataset test_set = load_split(cfg, false);
  const auto frames = bin_dataset(test_set, T);
  const fs::path dir = out_dir(o);
  for (int g : granularities(model, o.granularity)) {
    const Measured r = measure(model, frames, test_set.labels, g, mode, cfg.telemetry.eval_batch);
    const std::string stem = "report_g" + std::to_string(g);
    write_text(dir / (stem + ".json"), report_to_json(r.report, cfg.telemetry.energy) + "\n");
    write_text(dir / (stem + ".csv"), report_to_csv(r.report));
    std::cout << json{{"granularity", g},
                      {"accuracy", r.accuracy},
                      {"spikes", r.report.total_spikes()},
                      {"energy_uJ", energy_estimate(r.report, cfg.telemetry.energy)}}
                     .dump()
              << '\n';
  }
  return kOk;
}

void set_log_level() {
  if (const char* level = std::getenv("NEST_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level();
  CLI::App app{"Elastic spiking transformer toolkit"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run config (JSON)");
    sub->add_option("--seed", o.seed, "Override the run seed");
    sub->add_option("--mode", o.mode, "Attention executor: parallel or rowwise");
    sub->add_option("--timesteps", o.timesteps, "Timesteps (a list for sweep)")->delimiter(',');
    sub->add_option("--granularity", o.granularity, "Granularity index");
    sub->add_option("--out", o.out, "Output directory (output file for extract/convert)");
  };
  auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  };

  CLI::App* train_cmd = app.add_subcommand("train", "Train the universal model from a run config");
  add_common(train_cmd);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Accuracy per granularity on the test split");
  add_common(eval_cmd);
  add_checkpoint(eval_cmd);
  CLI::App* extract_cmd = app.add_subcommand("extract", "Write the standalone subnet at one granularity");
  add_common(extract_cmd);
  add_checkpoint(extract_cmd);
  CLI::App* convert_cmd = app.add_subcommand("convert", "Extract and switch to the row-wise executor");
  add_common(convert_cmd);
  add_checkpoint(convert_cmd);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Accuracy and energy over a timestep x granularity grid");
  add_common(sweep_cmd);
  add_checkpoint(sweep_cmd);
  CLI::App* report_cmd = app.add_subcommand("report", "Spike reports for a checkpoint");
  add_common(report_cmd);
  add_checkpoint(report_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o);
    if (eval_cmd->parsed()) return cmd_eval(o);
    if (extract_cmd->parsed()) return cmd_extract(o, false);
    if (convert_cmd->parsed()) return cmd_extract(o, true);
    if (sweep_cmd->parsed()) return cmd_sweep(o);
    if (report_cmd->parsed()) return cmd_report(o);
  } catch (const VersionMismatch& e) {
    spdlog::error("{}", e.what());
    return kVersion;
  } catch (const NumericFault& e) {
    spdlog::error("{}", e.what());
    return kNumeric;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const StructuralError& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  return kUsage;
}
