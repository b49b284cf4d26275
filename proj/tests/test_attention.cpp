#include "support.hpp"

#include <doctest.h>

using namespace nest;
using namespace nest::testing;

TEST_CASE("both executors agree with the direct definition") {
  Rng rng(41);
  const LifConfig lif;
  for (int n = 0; n < 30; ++n) {
    const Index T = uniform_int(rng, 1, 6), B = uniform_int(rng, 1, 2), H = uniform_int(rng, 1, 3);
    const Index N = uniform_int(rng, 1, 8), D = uniform_int(rng, 1, 8);
    const double scale = n % 2 ? 0.5 : 0.125 * static_cast<double>(uniform_int(rng, 1, 8));
    const Qkv x = random_qkv(rng, T, B, H, N, D, uniform_real(rng, 0.2, 0.8));
    const SpikeTensor ref = naive_ssa(x.q, x.k, x.v, scale, lif);
    AttentionState s1(B, H, N, D, lif), s2(B, H, N, D, lif);
    CHECK(parallel_ssa(x.q, x.k, x.v, scale, lif, s1) == ref);
    CHECK(rowwise_ssa(x.q, x.k, x.v, scale, lif, s2) == ref);
  }
}

TEST_CASE("attention membranes persist across calls") {
  Rng rng(42);
  const LifConfig lif;
  const Qkv x = random_qkv(rng, 4, 1, 2, 5, 4, 0.6);
  AttentionState whole(1, 2, 5, 4, lif);
  const SpikeTensor all = parallel_ssa(x.q, x.k, x.v, 0.5, lif, whole);

  AttentionState split(1, 2, 5, 4, lif);
  auto slice = [](const SpikeTensor& t, Index t0) {
    SpikeTensor out({1, 1, 2, 5, 4});
    const Index per = t.size() / t.dim(0);
    std::copy_n(t.data().begin() + t0 * per, per, out.data().begin());
    return out;
  };
  for (Index t = 0; t < 4; ++t) {
    const SpikeTensor step = rowwise_ssa(slice(x.q, t), slice(x.k, t), slice(x.v, t), 0.5, lif, split);
    CHECK(step == slice(all, t));
  }
  for (std::size_t i = 0; i < whole.score.size(); ++i) {
    CHECK(whole.score[i] == split.score[i]);
    CHECK(whole.out[i] == split.out[i]);
  }
}

TEST_CASE("no queries means no attention spikes") {
  Rng rng(43);
  const LifConfig lif;
  Qkv x = random_qkv(rng, 3, 1, 1, 4, 4, 0.7);
  std::fill(x.q.data().begin(), x.q.data().end(), 0);
  AttentionState st(1, 1, 4, 4, lif);
  CHECK(parallel_ssa(x.q, x.k, x.v, 0.5, lif, st).count() == 0);
}

TEST_CASE("attention rejects malformed inputs") {
  const LifConfig lif;
  SpikeTensor q({1, 1, 1, 2, 2}), k({1, 1, 1, 3, 2});
  AttentionState st(1, 1, 2, 2, lif);
  CHECK_THROWS_AS(parallel_ssa(q, k, q, 0.5, lif, st), StructuralError);
  SpikeTensor bad({1, 1, 1, 2, 2});
  bad.data()[0] = 2;
  CHECK_THROWS_AS(rowwise_ssa(bad, q, q, 0.5, lif, st), ContractViolation);
}

TEST_CASE("attention gradient matches finite differences of the relaxed core") {
  CHECK(check_attention(6, 44).worst < 1e-4);
}

TEST_CASE("elastic attention leaves inactive heads silent") {
  Rng rng(45);
  AttentionConfig cfg;
  cfg.embed_dim = 32;
  cfg.head_dim = 4;
  cfg.heads = {2, 8};
  ElasticAttention attn("a", cfg);
  attn.init(rng);
  // Bias the projections towards firing so the scores and outputs spike too.
  for (NormLif* l : {&attn.q_lif, &attn.k_lif, &attn.v_lif}) l->bn.banks[0].beta.values.setConstant(1.5);
  Pass pass;
  pass.steps = 4;
  pass.batch = 2;
  pass.g = 0;
  pass.training = true;
  ElasticAttention::Cache cache;
  const SpikeMatrix y = attn.forward(random_spikes(4 * 2 * 16, 32, 0.4, rng), 16, pass, &cache);
  CHECK(y.rows() == 128);
  CHECK(y.cols() == 32);
  CHECK(cache.q.rightCols(32 - 8).isZero(0));
  CHECK(cache.v.rightCols(32 - 8).isZero(0));
  attn.backward(cache, random_currents(128, 32, rng));
  CHECK(attn.wq.weight.grads.bottomRows(24).isZero(0));
  CHECK(attn.proj.weight.grads.rightCols(24).isZero(0));
  CHECK(!attn.wq.weight.grads.topRows(8).isZero(0));
  CHECK(!attn.wv.weight.grads.topRows(8).isZero(0));
  CHECK(!attn.proj.weight.grads.leftCols(8).isZero(0));
}

TEST_CASE("elastic attention executors agree end to end") {
  Rng rng(46);
  AttentionConfig cfg;
  cfg.embed_dim = 32;
  cfg.head_dim = 4;
  cfg.heads = {2, 8};
  ElasticAttention attn("a", cfg);
  attn.init(rng);
  const SpikeMatrix x = random_spikes(3 * 2 * 5, 32, 0.5, rng);
  for (int g = 0; g < 2; ++g) {
    Pass p;
    p.steps = 3;
    p.batch = 2;
    p.g = g;
    p.mode = AttentionMode::kParallel;
    Pass r = p;
    r.mode = AttentionMode::kRowwise;
    CHECK(attn.forward(x, 5, p, nullptr) == attn.forward(x, 5, r, nullptr));
  }
}
