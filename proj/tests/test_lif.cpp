#include "support.hpp"

#include <doctest.h>

using namespace nest;
using namespace nest::testing;

TEST_CASE("lif charges, fires and hard-resets") {
  LifConfig cfg;  // tau 2, threshold 1, reset 0
  LifState state(1, cfg);
  const Eigen::ArrayXd x = Eigen::ArrayXd::Constant(1, 1.5);
  // h1 = 0.75, h2 = 0.75 + (1.5 - 0.75) / 2 = 1.125 -> spike, reset, repeat.
  const double expected[] = {0, 1, 0, 1, 0, 1};
  for (double e : expected) CHECK(lif_forward(x, state, cfg)(0) == e);
  CHECK(state.v(0) == 0.0);
}

TEST_CASE("lif leaks toward the reset potential") {
  LifConfig cfg;
  cfg.v_reset = -0.5;
  LifState state(1, cfg);
  state.v(0) = 0.5;
  lif_forward(Eigen::ArrayXd::Zero(1), state, cfg);
  CHECK(state.v(0) == doctest::Approx(0.0));  // halfway from 0.5 to -0.5
}

TEST_CASE("threshold crossing is inclusive") {
  LifConfig cfg;
  LifState state(1, cfg);
  CHECK(lif_forward(Eigen::ArrayXd::Constant(1, 2.0), state, cfg)(0) == 1.0);
}

TEST_CASE("surrogate is the derivative of the relaxed spike") {
  for (double alpha : {1.0, 2.0, 4.0})
    for (double x : {-2.0, -0.3, 0.0, 0.1, 1.7}) {
      const double h = 1e-6;
      const double fd = (relaxed_spike(x + h, alpha) - relaxed_spike(x - h, alpha)) / (2 * h);
      CHECK(surrogate_grad(x, alpha) == doctest::Approx(fd).epsilon(1e-7));
    }
  CHECK(surrogate_grad(0.0, 2.0) == doctest::Approx(1.0));  // peak alpha / 2
  CHECK(relaxed_spike(0.0, 2.0) == doctest::Approx(0.5));
}

TEST_CASE("lif_run matches repeated single steps bit for bit") {
  Rng rng(3);
  LifConfig cfg;
  const Index steps = 5, rows = 3, cols = 4;
  const Currents x = random_currents(steps * rows, cols, rng, -1.0, 3.0);
  SpikeMatrix fast(steps * rows, cols);
  const Index count = lif_run(x, steps, cols, cfg, SpikeMode::kHeaviside, fast);
  LifState state(rows * cols, cfg);
  Index n = 0;
  for (Index t = 0; t < steps; ++t) {
    Eigen::ArrayXd in(rows * cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) in(r * cols + c) = x(t * rows + r, c);
    const Eigen::ArrayXd s = lif_forward(in, state, cfg);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) CHECK(fast(t * rows + r, c) == s(r * cols + c));
    n += static_cast<Index>(s.sum());
  }
  CHECK(count == n);
}

TEST_CASE("undriven columns are left alone") {
  LifConfig cfg;
  const Currents x = Currents::Constant(4, 3, 5.0);
  SpikeMatrix s = SpikeMatrix::Constant(4, 3, 7);
  lif_run(x, 2, 2, cfg, SpikeMode::kHeaviside, s);
  CHECK((s.col(2).array() == 7).all());
  CHECK((s.leftCols(2).array() == 1).all());
}

TEST_CASE("single-step heaviside backward is surrogate over tau") {
  LifConfig cfg;
  Currents x(1, 1);
  x(0, 0) = 1.6;  // h = 0.8
  const Currents g = Currents::Ones(1, 1);
  const Currents dx = lif_run_backward(x, 1, 1, cfg, SpikeMode::kHeaviside, g);
  CHECK(dx(0, 0) == doctest::Approx(surrogate_grad(0.8 - 1.0, 2.0) / 2.0));
}

TEST_CASE("lif gradient matches finite differences of the relaxed neuron") {
  const GradCheck r = check_lif(8, 11);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("lif rejects bad configs and shapes") {
  LifConfig cfg;
  cfg.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  SpikeMatrix s(5, 1);
  CHECK_THROWS_AS(lif_run(Currents::Zero(5, 1), 2, 1, LifConfig{}, SpikeMode::kHeaviside, s), StructuralError);
  SpikeMatrix binary(4, 1);
  CHECK_THROWS_AS(lif_run(Currents::Zero(4, 1), 2, 1, LifConfig{}, SpikeMode::kRelaxed, binary), UsageError);
}
