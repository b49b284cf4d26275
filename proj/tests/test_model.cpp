#include "support.hpp"

#include "nest/checkpoint.hpp"
#include "nest/events.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace nest;
using namespace nest::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nest_model_tests";
  fs::create_directories(dir);
  return dir / name;
}

Nestformer lively_small(std::uint64_t seed) {
  Nestformer m(small_config());
  m.init(seed);
  Rng rng(seed + 100);
  make_lively(m, rng);
  return m;
}

}  // namespace

TEST_CASE("config json round trip and schema checks") {
  const NestformerConfig c = small_config();
  const NestformerConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  auto doc = to_json(c);
  doc["depth"] = 3;
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
  doc = to_json(c);
  doc["lif"]["leak"] = 0.5;
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
  doc = to_json(c);
  doc["timesteps"] = 6;
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
  doc = to_json(c);
  doc["heads"] = {1, 2, 4, 16};
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);  // 16 heads of 8 exceed embed_dim
  doc = to_json(c);
  doc["mlp_hidden"] = {16, 8, 104, 256};
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
}

TEST_CASE("parameter counts grow with granularity") {
  const Nestformer m(NestformerConfig{});
  for (int g = 0; g + 1 < 4; ++g) CHECK(m.count_params(g) < m.count_params(g + 1));
}

TEST_CASE("registry names are unique and bank entries point at one granularity") {
  Nestformer m(small_config());
  const Registry reg = m.registry();
  std::set<std::string> names;
  for (const auto& e : reg.params) names.insert(e.name);
  for (const auto& b : reg.buffers) names.insert(b.name);
  CHECK(names.size() == reg.params.size() + reg.buffers.size());
  for (const auto& e : reg.params)
    if (e.bank >= 0)
      for (int g = 0; g < 4; ++g) CHECK(e.active_extent(g).has_value() == (g == e.bank));
}

TEST_CASE("extracted subnets reproduce the universal logits") {
  const Nestformer m = lively_small(3);
  Rng rng(4);
  for (int g = 0; g < 4; ++g) {
    const Nestformer sub = extract_submodel(m, g);
    CHECK(sub.granularities() == 1);
    CHECK(sub.count_params(0) == m.count_params(g));
    for (int n = 0; n < 3; ++n) {
      const SpikeTensor x = random_spike_tensor({4, 2, 2, 16, 16}, 0.2, rng);
      CHECK(sub.forward(x, 0) == m.forward(x, g));
    }
  }
}

TEST_CASE("deployment conversion switches executors without changing logits") {
  const Nestformer m = lively_small(5);
  Rng rng(6);
  const Nestformer dep = convert_to_deployment(m, 2);
  CHECK(dep.mode == AttentionMode::kRowwise);
  const Nestformer again = convert_to_deployment(dep);
  const SpikeTensor x = random_spike_tensor({4, 1, 2, 16, 16}, 0.2, rng);
  SpikeReport r;
  const Currents ref = m.forward(x, 2, AttentionMode::kParallel, &r);
  CHECK(r.total_spikes() > 0);
  CHECK(dep.forward(x, 0) == ref);
  CHECK(again.forward(x, 0) == ref);
  CHECK(convert_to_deployment(m).count_params(0) == m.count_params(3));
}

TEST_CASE("direct coding drives the first layer with real currents") {
  const Nestformer m = lively_small(7);
  RealTensor zero({4, 1, 2, 16, 16});
  SpikeReport r;
  m.forward(zero, 1, std::nullopt, &r);
  const LayerSpikes* first = r.find("embed.stage0.compress_lif");
  REQUIRE(first);
  RealTensor img({2, 16, 16}, 0.5);
  const RealTensor coded = encode_static(img, 4);
  CHECK(coded.shape() == Shape{4, 1, 2, 16, 16});
  CHECK_NOTHROW(m.forward(coded, 1));
}

TEST_CASE("checkpoints round-trip bit for bit") {
  Nestformer m = lively_small(8);
  const fs::path path = scratch("roundtrip.ckpt");
  save_checkpoint(m, path);
  const Nestformer back = load_checkpoint(path);
  Rng rng(9);
  const SpikeTensor x = random_spike_tensor({4, 1, 2, 16, 16}, 0.2, rng);
  for (int g = 0; g < 4; ++g) CHECK(back.forward(x, g) == m.forward(x, g));
  Nestformer copy = back;
  const fs::path again = scratch("roundtrip2.ckpt");
  save_checkpoint(copy, again);
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("checkpoint loading rejects bad files") {
  Nestformer m(small_config());
  m.init(1);
  const fs::path path = scratch("bad.ckpt");
  save_checkpoint(m, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(in)), {});
  }
  auto write = [&](const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
  };

  CHECK_THROWS_AS(load_checkpoint(scratch("missing.ckpt")), DataError);
  std::string v2 = bytes;
  v2[8] = 2;
  write(v2);
  CHECK_THROWS_AS(load_checkpoint(path), VersionMismatch);
  write(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  write(bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  write(wrong_magic);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
