#include "nest/attention.hpp"

#include <cmath>

namespace nest {

namespace {

using Mat = Eigen::MatrixXd;

double spike_of(double h, const LifConfig& lif, SpikeMode mode) {
  if (mode == SpikeMode::kHeaviside) return h >= lif.v_threshold ? 1.0 : 0.0;
  return relaxed_spike(h - lif.v_threshold, lif.surrogate_alpha);
}

// Advances one population by one step. Writes the charged potentials to h
// (when given) and the spikes (0/1 or relaxed) to s.
void step_population(Mat& v, const Mat& drive, const LifConfig& lif, SpikeMode mode, Index& count, Mat* h,
                     Mat& s) {
  s.resize(v.rows(), v.cols());
  if (h) h->resize(v.rows(), v.cols());
  const Index n = v.size();
  double* vp = v.data();
  const double* dp = drive.data();
  double* sp = s.data();
  double* hp = h ? h->data() : nullptr;
  Index fired = 0;
  for (Index i = 0; i < n; ++i) {
    const double hi = lif_charge(vp[i], dp[i], lif);
    if (hp) hp[i] = hi;
    if (mode == SpikeMode::kHeaviside) {
      const bool fire = hi >= lif.v_threshold;
      fired += fire;
      sp[i] = fire ? 1.0 : 0.0;
      vp[i] = fire ? lif.v_reset : hi;
    } else {
      const double si = relaxed_spike(hi - lif.v_threshold, lif.surrogate_alpha);
      sp[i] = si;
      vp[i] = hi * (1.0 - si) + lif.v_reset * si;
    }
  }
  count += fired;
}

// dL/dh / tau for one LIF step given dL/ds; updates the carried dL/dv in place.
void lif_grad_step(const Mat& h, const double* grad_s, Index grad_stride, Mat& grad_v, const LifConfig& lif,
                   SpikeMode mode, double out_scale, Mat& grad_in) {
  const Index rows = h.rows(), cols = h.cols();
  grad_in.resize(rows, cols);
  const double keep = 1.0 - 1.0 / lif.tau;
  for (Index c = 0; c < cols; ++c) {
    const double* hp = h.data() + c * rows;
    double* gv = grad_v.data() + c * rows;
    double* gi = grad_in.data() + c * rows;
    for (Index r = 0; r < rows; ++r) {
      const double hi = hp[r];
      const double sg = surrogate_grad(hi - lif.v_threshold, lif.surrogate_alpha);
      const double s = spike_of(hi, lif, mode);
      const double gs = grad_s[r * grad_stride + c];
      const double gh = gs * sg + gv[r] * ((1.0 - s) + (lif.v_reset - hi) * sg);
      gv[r] = gh * keep;
      gi[r] = gh / lif.tau * out_scale;
    }
  }
}

void check_qkv(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, const AttentionState& st) {
  if (q.rank() != 5 || q.shape() != k.shape() || q.shape() != v.shape())
    throw StructuralError("ssa: Q, K, V must share a [T, B, h, N, D] shape");
  q.check_binary();
  k.check_binary();
  v.check_binary();
  if (st.batch != q.dim(1) || st.heads != q.dim(2) || st.tokens != q.dim(3) || st.head_dim != q.dim(4))
    throw StructuralError("ssa: attention state does not match the input shape");
}

Currents gather_head(const SpikeTensor& x, Index b, Index h) {
  const Index T = x.dim(0), B = x.dim(1), H = x.dim(2), N = x.dim(3), D = x.dim(4);
  Currents out(T * N, D);
  const auto data = x.data();
  for (Index t = 0; t < T; ++t)
    for (Index n = 0; n < N; ++n)
      for (Index d = 0; d < D; ++d) out(t * N + n, d) = data[(((t * B + b) * H + h) * N + n) * D + d];
  return out;
}

void scatter_head(const Currents& o, Index b, Index h, SpikeTensor& x) {
  const Index T = x.dim(0), B = x.dim(1), H = x.dim(2), N = x.dim(3), D = x.dim(4);
  auto data = x.data();
  for (Index t = 0; t < T; ++t)
    for (Index n = 0; n < N; ++n)
      for (Index d = 0; d < D; ++d)
        data[(((t * B + b) * H + h) * N + n) * D + d] = static_cast<std::uint8_t>(o(t * N + n, d));
}

template <typename Kernel>
SpikeTensor run_heads(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                      AttentionState& state, Kernel&& kernel) {
  check_qkv(q, k, v, state);
  SpikeTensor out(q.shape());
  for (Index b = 0; b < q.dim(1); ++b)
    for (Index h = 0; h < q.dim(2); ++h) {
      Currents o;
      const std::size_t slot = static_cast<std::size_t>(b * state.heads + h);
      kernel(gather_head(q, b, h), gather_head(k, b, h), gather_head(v, b, h), state.score[slot],
             state.out[slot], o);
      scatter_head(o, b, h, out);
    }
  return out;
}

// Gathers head h of batch element b from a [T * B * N, h_max * D] matrix.
Currents gather_rows(const SpikeMatrix& x, Index steps, Index batch, Index tokens, Index b, Index h,
                     Index dim) {
  Currents out(steps * tokens, dim);
  for (Index t = 0; t < steps; ++t)
    out.middleRows(t * tokens, tokens) =
        x.block((t * batch + b) * tokens, h * dim, tokens, dim).cast<double>();
  return out;
}

}  // namespace

AttentionState::AttentionState(Index batch, Index heads, Index tokens, Index head_dim, const LifConfig& cfg)
    : batch(batch), heads(heads), tokens(tokens), head_dim(head_dim) {
  score.assign(static_cast<std::size_t>(batch * heads), Eigen::MatrixXd::Constant(tokens, tokens, cfg.v_reset));
  out.assign(static_cast<std::size_t>(batch * heads), Eigen::MatrixXd::Constant(tokens, head_dim, cfg.v_reset));
}

void AttentionState::reset(const LifConfig& cfg) {
  for (auto& m : score) m.setConstant(cfg.v_reset);
  for (auto& m : out) m.setConstant(cfg.v_reset);
}

HeadSpikes ssa_head_parallel(const Currents& q, const Currents& k, const Currents& v, Index steps,
                             double scale, const LifConfig& lif, SpikeMode mode, Eigen::MatrixXd& score_v,
                             Eigen::MatrixXd& out_v, Currents& out) {
  const Index N = q.rows() / steps;
  const Index D = q.cols();
  out.setZero(q.rows(), D);
  HeadSpikes counts;
  Mat scores(N, N), attn, drive(N, D), o;
  for (Index t = 0; t < steps; ++t) {
    // The product of binary operands is an exact integer; scaling it afterwards
    // keeps the rounding identical to the row-wise executor.
    scores.noalias() = q.middleRows(t * N, N) * k.middleRows(t * N, N).transpose();
    scores *= scale;
    step_population(score_v, scores, lif, mode, counts.attn, nullptr, attn);
    drive.noalias() = attn * v.middleRows(t * N, N);
    step_population(out_v, drive, lif, mode, counts.out, nullptr, o);
    out.middleRows(t * N, N) = o;
  }
  return counts;
}

HeadSpikes ssa_head_rowwise(const Currents& q, const Currents& k, const Currents& v, Index steps,
                            double scale, const LifConfig& lif, Eigen::MatrixXd& score_v,
                            Eigen::MatrixXd& out_v, Currents& out) {
  const Index N = q.rows() / steps;
  const Index D = q.cols();
  out.setZero(q.rows(), D);
  HeadSpikes counts;
  Eigen::VectorXd a(N);
  for (Index t = 0; t < steps; ++t) {
    const Index base = t * N;
    for (Index i = 0; i < N; ++i) {
      // a_i = LIF(linear(q_i, K)): the keys act as synaptic weights of query row i.
      for (Index j = 0; j < N; ++j) {
        double dot = 0.0;
        for (Index d = 0; d < D; ++d) dot += q(base + i, d) * k(base + j, d);
        const double h = lif_charge(score_v(i, j), dot * scale, lif);
        const bool fire = h >= lif.v_threshold;
        a(j) = fire ? 1.0 : 0.0;
        score_v(i, j) = fire ? lif.v_reset : h;
        counts.attn += fire;
      }
      // o_i = LIF(linear(a_i, V^T)).
      for (Index d = 0; d < D; ++d) {
        double acc = 0.0;
        for (Index j = 0; j < N; ++j) acc += a(j) * v(base + j, d);
        const double h = lif_charge(out_v(i, d), acc, lif);
        const bool fire = h >= lif.v_threshold;
        out(base + i, d) = fire ? 1.0 : 0.0;
        out_v(i, d) = fire ? lif.v_reset : h;
        counts.out += fire;
      }
    }
  }
  return counts;
}

HeadGrads ssa_head_backward(const Currents& q, const Currents& k, const Currents& v, Index steps,
                            double scale, const LifConfig& lif, SpikeMode mode, const Currents& grad_out) {
  const Index N = q.rows() / steps;
  const Index D = q.cols();
  if (grad_out.rows() != q.rows() || grad_out.cols() < D) throw StructuralError("ssa backward: shape mismatch");

  std::vector<Mat> score_h(static_cast<std::size_t>(steps));
  std::vector<Mat> out_h(static_cast<std::size_t>(steps));
  Mat score_v = Mat::Constant(N, N, lif.v_reset);
  Mat out_v = Mat::Constant(N, D, lif.v_reset);
  Mat scores(N, N), attn, drive(N, D), o;
  Index unused = 0;
  for (Index t = 0; t < steps; ++t) {
    scores.noalias() = q.middleRows(t * N, N) * k.middleRows(t * N, N).transpose();
    scores *= scale;
    step_population(score_v, scores, lif, mode, unused, &score_h[t], attn);
    drive.noalias() = attn * v.middleRows(t * N, N);
    step_population(out_v, drive, lif, mode, unused, &out_h[t], o);
  }

  HeadGrads grads{Currents(q.rows(), D), Currents(q.rows(), D), Currents(q.rows(), D)};
  Mat grad_score_v = Mat::Zero(N, N);
  Mat grad_out_v = Mat::Zero(N, D);
  Mat grad_drive, grad_scores;
  Currents grad_attn(N, N);
  for (Index t = steps - 1; t >= 0; --t) {
    lif_grad_step(out_h[t], grad_out.data() + t * N * grad_out.cols(), grad_out.cols(), grad_out_v, lif, mode,
                  1.0, grad_drive);
    const auto vt = v.middleRows(t * N, N);
    grad_attn.noalias() = grad_drive * vt.transpose();
    attn.resize(N, N);
    for (Index i = 0; i < attn.size(); ++i) attn.data()[i] = spike_of(score_h[t].data()[i], lif, mode);
    grads.dv.middleRows(t * N, N).noalias() = attn.transpose() * grad_drive;
    lif_grad_step(score_h[t], grad_attn.data(), N, grad_score_v, lif, mode, scale, grad_scores);
    grads.dq.middleRows(t * N, N).noalias() = grad_scores * k.middleRows(t * N, N);
    grads.dk.middleRows(t * N, N).noalias() = grad_scores.transpose() * q.middleRows(t * N, N);
  }
  return grads;
}

SpikeTensor parallel_ssa(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                         const LifConfig& lif, AttentionState& state) {
  const Index steps = q.dim(0);
  return run_heads(q, k, v, state, [&](const Currents& qh, const Currents& kh, const Currents& vh,
                                       Eigen::MatrixXd& sv, Eigen::MatrixXd& ov, Currents& o) {
    ssa_head_parallel(qh, kh, vh, steps, scale, lif, SpikeMode::kHeaviside, sv, ov, o);
  });
}

SpikeTensor rowwise_ssa(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                        const LifConfig& lif, AttentionState& state) {
  const Index steps = q.dim(0);
  return run_heads(q, k, v, state, [&](const Currents& qh, const Currents& kh, const Currents& vh,
                                       Eigen::MatrixXd& sv, Eigen::MatrixXd& ov, Currents& o) {
    ssa_head_rowwise(qh, kh, vh, steps, scale, lif, sv, ov, o);
  });
}

// ------------------------------------------------------ ElasticAttention

ElasticAttention::ElasticAttention(const std::string& name, const AttentionConfig& config) : cfg(config) {
  if (cfg.heads.empty()) throw ConfigError("attention: empty head schedule");
  if (cfg.head_dim < 1 || cfg.embed_dim < 1) throw ConfigError("attention: dimensions must be positive");
  if (!(cfg.scale > 0.0)) throw ConfigError("attention: scale must be positive");
  std::vector<Index> widths;
  for (std::size_t g = 0; g < cfg.heads.size(); ++g) {
    if (cfg.heads[g] < 1 || (g > 0 && cfg.heads[g] < cfg.heads[g - 1]))
      throw ConfigError("attention: head schedule must be positive and non-decreasing");
    widths.push_back(cfg.heads[g] * cfg.head_dim);
  }
  const std::vector<Index> full(cfg.heads.size(), cfg.embed_dim);
  wq = ElasticLinear(widths, full, false);
  wk = ElasticLinear(widths, full, false);
  wv = ElasticLinear(widths, full, false);
  proj = ElasticLinear(full, widths, false);
  q_lif = NormLif(name + ".q_lif", Section::kAttention, widths, cfg.lif);
  k_lif = NormLif(name + ".k_lif", Section::kAttention, widths, cfg.lif);
  v_lif = NormLif(name + ".v_lif", Section::kAttention, widths, cfg.lif);
  proj_lif = NormLif(name + ".proj_lif", Section::kAttention, full, cfg.lif);
  attn_name_ = name + ".attn_lif";
  out_name_ = name + ".out_lif";
}

Index ElasticAttention::heads(int g) const {
  check_granularity(g, granularities());
  return cfg.heads[g];
}

void ElasticAttention::init(std::mt19937_64& rng) {
  wq.init(rng);
  wk.init(rng);
  wv.init(rng);
  proj.init(rng);
}

ElasticAttention::Projections ElasticAttention::project(const SpikeMatrix& x, const Pass& pass,
                                                        Cache* cache) const {
  if (x.cols() != cfg.embed_dim) throw StructuralError("attention: input width differs from embed_dim");
  const Index rows_per_step = x.rows() / pass.steps;
  const Index tokens = rows_per_step / pass.batch;
  Projections p;
  p.q = q_lif.forward(wq.forward(x, pass.g, cache ? &cache->x : nullptr), pass,
                      cache ? &cache->q_norm : nullptr, tokens);
  p.k = k_lif.forward(wk.forward(x, pass.g), pass, cache ? &cache->k_norm : nullptr, tokens);
  p.v = v_lif.forward(wv.forward(x, pass.g), pass, cache ? &cache->v_norm : nullptr, tokens);
  return p;
}

SpikeMatrix ElasticAttention::forward(const SpikeMatrix& x, Index tokens, const Pass& pass, Cache* cache) const {
  if (pass.training && !cache) throw UsageError("attention: training forward needs a cache");
  if (x.rows() != pass.steps * pass.batch * tokens) throw StructuralError("attention: row count mismatch");
  Projections p = project(x, pass, cache);

  const Index active_heads = heads(pass.g);
  const Index D = cfg.head_dim;
  SpikeMatrix o = SpikeMatrix::Zero(x.rows(), wq.max_out());
  Index attn_spikes = 0, out_spikes = 0;
  Eigen::MatrixXd score_v, out_v;
  Currents head_out;
  for (Index b = 0; b < pass.batch; ++b)
    for (Index h = 0; h < active_heads; ++h) {
      const Currents qh = gather_rows(p.q, pass.steps, pass.batch, tokens, b, h, D);
      const Currents kh = gather_rows(p.k, pass.steps, pass.batch, tokens, b, h, D);
      const Currents vh = gather_rows(p.v, pass.steps, pass.batch, tokens, b, h, D);
      score_v.setConstant(tokens, tokens, cfg.lif.v_reset);
      out_v.setConstant(tokens, D, cfg.lif.v_reset);
      const HeadSpikes counts =
          pass.mode == AttentionMode::kRowwise
              ? ssa_head_rowwise(qh, kh, vh, pass.steps, cfg.scale, cfg.lif, score_v, out_v, head_out)
              : ssa_head_parallel(qh, kh, vh, pass.steps, cfg.scale, cfg.lif, SpikeMode::kHeaviside,
                                  score_v, out_v, head_out);
      attn_spikes += counts.attn;
      out_spikes += counts.out;
      for (Index t = 0; t < pass.steps; ++t)
        o.block((t * pass.batch + b) * tokens, h * D, tokens, D) =
            head_out.middleRows(t * tokens, tokens).cast<std::uint8_t>();
    }
  if (pass.report) {
    const Index per_head_scores = pass.steps * pass.batch * tokens * tokens;
    const Index per_head_out = pass.steps * pass.batch * tokens * D;
    const Index max_heads = cfg.heads.back();
    pass.report->add(attn_name_, Section::kAttention, attn_spikes, per_head_scores * active_heads,
                     per_head_scores * max_heads, D);
    pass.report->add(out_name_, Section::kAttention, out_spikes, per_head_out * active_heads,
                     per_head_out * max_heads, cfg.embed_dim);
  }

  SpikeMatrix y = proj_lif.forward(proj.forward(o, pass.g, cache ? &cache->proj_in : nullptr), pass,
                                   cache ? &cache->proj_norm : nullptr, 1);
  if (cache) {
    cache->q = std::move(p.q);
    cache->k = std::move(p.k);
    cache->v = std::move(p.v);
    cache->tokens = tokens;
  }
  return y;
}

Currents ElasticAttention::backward(const Cache& cache, const Currents& grad_out) {
  const int g = cache.x.g;
  const Index steps = cache.q_norm.steps;
  const Index tokens = cache.tokens;
  const Index batch = cache.q.rows() / (steps * tokens);
  const Index D = cfg.head_dim;

  const Currents grad_proj = proj_lif.backward(cache.proj_norm, grad_out);
  const Currents grad_o = proj.backward(cache.proj_in, grad_proj);

  Currents dq = Currents::Zero(cache.q.rows(), cache.q.cols());
  Currents dk = Currents::Zero(cache.q.rows(), cache.q.cols());
  Currents dv = Currents::Zero(cache.q.rows(), cache.q.cols());
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads(g); ++h) {
      Currents go(steps * tokens, D);
      for (Index t = 0; t < steps; ++t)
        go.middleRows(t * tokens, tokens) = grad_o.block((t * batch + b) * tokens, h * D, tokens, D);
      const HeadGrads hg = ssa_head_backward(gather_rows(cache.q, steps, batch, tokens, b, h, D),
                                             gather_rows(cache.k, steps, batch, tokens, b, h, D),
                                             gather_rows(cache.v, steps, batch, tokens, b, h, D), steps,
                                             cfg.scale, cfg.lif, SpikeMode::kHeaviside, go);
      for (Index t = 0; t < steps; ++t) {
        const Index r = (t * batch + b) * tokens;
        dq.block(r, h * D, tokens, D) = hg.dq.middleRows(t * tokens, tokens);
        dk.block(r, h * D, tokens, D) = hg.dk.middleRows(t * tokens, tokens);
        dv.block(r, h * D, tokens, D) = hg.dv.middleRows(t * tokens, tokens);
      }
    }

  Currents dx = wq.backward(cache.x, q_lif.backward(cache.q_norm, dq));
  dx += wk.backward(cache.x, k_lif.backward(cache.k_norm, dk));
  dx += wv.backward(cache.x, v_lif.backward(cache.v_norm, dv));
  return dx;
}

void ElasticAttention::update_running(const Cache& cache, std::optional<double> momentum) {
  q_lif.update_running(cache.q_norm, momentum);
  k_lif.update_running(cache.k_norm, momentum);
  v_lif.update_running(cache.v_norm, momentum);
  proj_lif.update_running(cache.proj_norm, momentum);
}

ElasticAttention::QkvTensors ElasticAttention::project_qkv(const SpikeTensor& x, int g) const {
  if (x.rank() != 4 || x.dim(3) != cfg.embed_dim)
    throw StructuralError("project_qkv: expected a [T, B, N, C] tensor with C = embed_dim");
  const Index T = x.dim(0), B = x.dim(1), N = x.dim(2), C = x.dim(3);
  SpikeMatrix xm(T * B * N, C);
  std::copy(x.data().begin(), x.data().end(), xm.data());
  Pass pass;
  pass.g = g;
  pass.steps = T;
  pass.batch = B;
  const Projections p = project(xm, pass, nullptr);

  const Index H = heads(g), D = cfg.head_dim;
  auto to_tensor = [&](const SpikeMatrix& m) {
    SpikeTensor out({T, B, H, N, D});
    for (Index t = 0; t < T; ++t)
      for (Index b = 0; b < B; ++b)
        for (Index h = 0; h < H; ++h)
          for (Index n = 0; n < N; ++n)
            for (Index d = 0; d < D; ++d) out(
                {t, b, h, n, d}) = m((t * B + b) * N + n, h * D + d);
    return out;
  };
  return {to_tensor(p.q), to_tensor(p.k), to_tensor(p.v)};
}

void ElasticAttention::collect(Registry& reg, const std::string& prefix) {
  wq.collect(reg, prefix + ".wq");
  q_lif.collect(reg, prefix + ".q_lif");
  wk.collect(reg, prefix + ".wk");
  k_lif.collect(reg, prefix + ".k_lif");
  wv.collect(reg, prefix + ".wv");
  v_lif.collect(reg, prefix + ".v_lif");
  proj.collect(reg, prefix + ".proj");
  proj_lif.collect(reg, prefix + ".proj_lif");
}

}  // namespace nest
