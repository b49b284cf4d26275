#include "support.hpp"

#include "nest/telemetry.hpp"

#include <doctest.h>

using namespace nest;
using namespace nest::testing;

TEST_CASE("energy per inference matches the published operation counts") {
  const EnergyModel e;
  const std::vector<std::pair<double, double>> rows{{0.56e6, 13.3}, {0.82e6, 19.3}, {1.22e6, 28.7}, {1.95e6, 46.1}};
  std::vector<double> energies;
  for (const auto& [sops, uj] : rows) {
    energies.push_back(energy_uj(sops, e));
    CHECK(energies.back() == doctest::Approx(uj).epsilon(0.01));
  }
  const auto rel = relative_energy(energies);
  const std::vector<double> pct{0.29, 0.42, 0.62, 1.00};
  for (std::size_t i = 0; i < pct.size(); ++i) CHECK(rel[i] == doctest::Approx(pct[i]).epsilon(0.02));
  CHECK_THROWS_AS(relative_energy({1.0}), UsageError);
  CHECK_THROWS_AS(relative_energy({1.0, 0.0}), UsageError);
}

TEST_CASE("energy scales linearly with spikes") {
  Rng rng(1);
  const EnergyModel e;
  for (int i = 0; i < 100; ++i) {
    SpikeReport r;
    const Index a = uniform_int(rng, 0, 100000), b = uniform_int(rng, 0, 100000);
    r.add("x", Section::kMlp, a, 100000, 100000, 3);
    r.add("y", Section::kAttention, b, 100000, 200000, 5);
    CHECK(energy_estimate(r, e) == doctest::Approx((a + b) * 23.6e-6));
    EnergyModel w = e;
    w.fanout_weighted = true;
    CHECK(r.synaptic_ops(true) == 3 * a + 5 * b);
    CHECK(energy_estimate(r, w) == doctest::Approx((3 * a + 5 * b) * 23.6e-6));
  }
  EnergyModel bad;
  bad.energy_per_sop_pj = 0.0;
  CHECK_THROWS_AS(energy_uj(1.0, bad), ConfigError);
}

TEST_CASE("firing rates and section shares") {
  SpikeReport r;
  r.add("e", Section::kEmbed, 10, 100, 200, 1);
  r.add("a", Section::kAttention, 30, 100, 100, 1);
  r.add("a", Section::kAttention, 10, 100, 100, 1);  // repeated layer accumulates
  r.add("h", Section::kHead, 0, 50, 50, 1);
  CHECK(r.layers.size() == 3);
  const FiringRates fr = firing_rate(r);
  CHECK(fr.active[0] == 0.1);
  CHECK(fr.max_alloc[0] == 0.05);
  CHECK(fr.active[1] == 0.2);
  CHECK(fr.total_active == doctest::Approx(50.0 / 350.0));
  CHECK(fr.total_max_alloc == doctest::Approx(50.0 / 450.0));
  const auto share = section_spike_share(r);
  CHECK(share[0] == 0.2);
  CHECK(share[1] == 0.8);
  CHECK(share[2] == 0.0);
  CHECK_THROWS_AS(section_spike_share(SpikeReport{}), UsageError);
  CHECK_THROWS_AS(r.add("z", Section::kMlp, 1, 10, 5, 1), ContractViolation);
}

TEST_CASE("reports survive a json round trip") {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    SpikeReport r;
    r.granularity = static_cast<int>(uniform_int(rng, 0, 3));
    r.batch = uniform_int(rng, 1, 64);
    r.timesteps = 8;
    const Index layers = uniform_int(rng, 1, 6);
    for (Index l = 0; l < layers; ++l) {
      const Index slots = uniform_int(rng, 1, 5000);
      r.add("layer" + std::to_string(l), static_cast<Section>(uniform_int(rng, 0, 3)), uniform_int(rng, 0, slots),
            slots, slots + uniform_int(rng, 0, 100), uniform_int(rng, 0, 9));
    }
    const SpikeReport back = report_from_json(report_to_json(r, EnergyModel{}));
    CHECK(back.granularity == r.granularity);
    CHECK(back.batch == r.batch);
    REQUIRE(back.layers.size() == r.layers.size());
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
      CHECK(back.layers[l].name == r.layers[l].name);
      CHECK(back.layers[l].section == r.layers[l].section);
      CHECK(back.layers[l].spikes == r.layers[l].spikes);
      CHECK(back.layers[l].max_slots == r.layers[l].max_slots);
      CHECK(back.layers[l].fanout == r.layers[l].fanout);
    }
  }
  CHECK_THROWS_AS(report_from_json("{"), DataError);
  CHECK_THROWS_AS(report_from_json(R"({"granularity":0,"batch":1,"timesteps":4,"layers":[{"name":"x","section":"tail",
      "spikes":1,"slots":1,"max_slots":1,"fanout":1}]})"),
                  DataError);
}

TEST_CASE("csv report has one line per layer") {
  SpikeReport r;
  r.add("a", Section::kMlp, 1, 4, 4, 1);
  r.add("b", Section::kHead, 2, 4, 4, 1);
  CHECK(report_to_csv(r) == "layer,section,spikes,slots,rate\na,mlp,1,4,0.25\nb,head,2,4,0.5\n");
}
