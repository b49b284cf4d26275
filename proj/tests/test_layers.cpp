#include "support.hpp"

#include <doctest.h>

using namespace nest;
using namespace nest::testing;

namespace {

// Direct "same" convolution from the definition.
Currents naive_conv(const Currents& x, const Grid& grid, const Eigen::MatrixXd& w, ConvKind kind, Index k,
                    Index out, Index in, Index out_cols) {
  Currents y = Currents::Zero(x.rows(), out_cols);
  const Index pad = k / 2;
  for (Index n = 0; n < grid.images; ++n)
    for (Index oy = 0; oy < grid.height; ++oy)
      for (Index ox = 0; ox < grid.width; ++ox)
        for (Index o = 0; o < out; ++o) {
          double acc = 0.0;
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = oy + ky - pad, ix = ox + kx - pad;
              if (iy < 0 || iy >= grid.height || ix < 0 || ix >= grid.width) continue;
              const Index p = (n * grid.height + iy) * grid.width + ix;
              if (kind == ConvKind::kDepthwise) {
                acc += x(p, o) * w(o, ky * k + kx);
              } else {
                for (Index i = 0; i < in; ++i) acc += x(p, i) * w(o, i * k * k + ky * k + kx);
              }
            }
          y((n * grid.height + oy) * grid.width + ox, o) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("linear forward equals the dense product on the active block") {
  Rng rng(5);
  ElasticLinear layer({3, 5, 8}, {2, 4, 6}, true);
  layer.init(rng);
  const Currents x = random_currents(7, 6, rng);
  for (int g = 0; g < 3; ++g) {
    const Index out = layer.out_features(g), in = layer.in_features(g);
    const Currents y = layer.forward(x, g);
    Currents ref = Currents::Zero(7, 8);
    ref.leftCols(out) = (x.leftCols(in) * layer.weight.values.topLeftCorner(out, in).transpose()).rowwise() +
                        layer.bias.values.col(0).head(out).transpose();
    CHECK((y - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("spike and real inputs of equal value give identical linear outputs") {
  Rng rng(6);
  ElasticLinear layer({4, 9}, {5, 12}, false);
  layer.init(rng);
  const SpikeMatrix s = random_spikes(10, 12, 0.3, rng);
  for (int g = 0; g < 2; ++g) CHECK(layer.forward(s, g) == layer.forward(Currents(s.cast<double>()), g));
}

TEST_CASE("inactive linear weights do not influence the output") {
  Rng rng(7);
  ElasticLinear layer({2, 4}, {3, 6}, false);
  layer.init(rng);
  const SpikeMatrix s = random_spikes(6, 6, 0.5, rng);
  const Currents before = layer.forward(s, 0);
  layer.weight.values.bottomRows(2).setConstant(99.0);
  layer.weight.values.rightCols(3).setConstant(-99.0);
  CHECK(layer.forward(s, 0) == before);
}

TEST_CASE("conv forward matches the direct definition") {
  Rng rng(8);
  for (ConvKind kind : {ConvKind::kDense, ConvKind::kDepthwise})
    for (Index k : {1, 3}) {
      const std::vector<Index> outs{2, 5};
      const std::vector<Index> ins = kind == ConvKind::kDepthwise ? outs : std::vector<Index>{3, 4};
      ElasticConv2d conv(kind, k, outs, ins);
      conv.init(rng);
      const Grid grid{2, 4, 5};
      const Currents x = random_currents(grid.rows(), ins.back(), rng);
      for (int g = 0; g < 2; ++g) {
        const Currents ref = naive_conv(x, grid, conv.weight.values, kind, k, conv.out_channels(g),
                                        conv.in_channels(g), conv.max_out());
        CHECK((conv.forward(x, grid, g) - ref).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
}

TEST_CASE("max pool picks window maxima and routes gradients to them") {
  const Grid grid{1, 2, 4};
  Currents x(8, 1);
  x << 1, 5, 2, 2,  //
      3, 0, 7, 2;
  PoolCache cache;
  const Currents y = max_pool2(x, grid, 1, &cache);
  REQUIRE(y.rows() == 2);
  CHECK(y(0, 0) == 5);
  CHECK(y(1, 0) == 7);
  const Currents dx = max_pool2_backward(cache, grid, Currents::Ones(2, 1));
  CHECK(dx.sum() == 2);
  CHECK(dx(1, 0) == 1);
  CHECK(dx(6, 0) == 1);
}

TEST_CASE("max pool ties go to the first window element") {
  const Grid grid{1, 2, 2};
  const Currents x = Currents::Ones(4, 1);
  PoolCache cache;
  max_pool2(x, grid, 1, &cache);
  const Currents dx = max_pool2_backward(cache, grid, Currents::Ones(1, 1));
  CHECK(dx(0, 0) == 1);
  CHECK(dx.sum() == 1);
}

TEST_CASE("layer gradients match finite differences") {
  CHECK(check_linear(6, 21).worst < 1e-4);
  CHECK(check_conv(ConvKind::kDense, 1, 4, 22).worst < 1e-4);
  CHECK(check_conv(ConvKind::kDense, 3, 4, 23).worst < 1e-4);
  CHECK(check_conv(ConvKind::kDepthwise, 3, 4, 24).worst < 1e-4);
  CHECK(check_maxpool(4, 25).worst < 1e-4);
}

TEST_CASE("backward only touches the active weight block") {
  Rng rng(9);
  ElasticLinear layer({2, 4}, {3, 6}, false);
  layer.init(rng);
  InputCache cache;
  layer.forward(random_spikes(5, 6, 0.6, rng), 0, &cache);
  layer.weight.zero_grad();
  layer.backward(cache, random_currents(5, 4, rng));
  CHECK(layer.weight.grads.bottomRows(2).isZero(0));
  CHECK(layer.weight.grads.rightCols(3).isZero(0));
}

TEST_CASE("layers reject mismatched shapes") {
  ElasticLinear layer({2}, {3}, false);
  CHECK_THROWS_AS(layer.forward(Currents(Currents::Zero(2, 2)), 0), StructuralError);
  CHECK_THROWS_AS(layer.backward(InputCache{}, Currents::Zero(2, 2)), UsageError);
  CHECK_THROWS_AS(ElasticConv2d(ConvKind::kDense, 2, {1}, {1}), ConfigError);
  CHECK_THROWS_AS(ElasticConv2d(ConvKind::kDepthwise, 3, {2}, {3}), ConfigError);
}
