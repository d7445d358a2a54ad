#pragma once

/// SimSR on state-goal tuples: the cosine measurement between l2-normalized
/// encoder features, the sample-based operator target (reward difference plus
/// discounted next-tuple measurement under a frozen encoder), the mean-square
/// encoder loss, and the sensitivity-aware regularizer that substitutes
/// normalized local responses for the always-zero reward differences.
///
/// The encoder is the first layer of the policy network; gradients returned
/// here are policy-shaped but only the layer-1 block is ever nonzero.

#include <type_traits>
#include <vector>

#include "gcrl/core.hpp"
#include "gcrl/dataset.hpp"
#include "gcrl/env.hpp"
#include "gcrl/mlp.hpp"

namespace gcrl {

inline Vec encoder_features(const Mlp& policy, const Vec& input) {
    return Mlp::features(policy.forward(input, 1));
}

/// Unit-norm representation z = psi(x) / ||psi(x)||_2.
inline Vec normalized_representation(const Mlp& policy, const Vec& input) {
    Vec z = encoder_features(policy, input);
    const double n = norm2(z);
    if (n <= 1e-12) throw NumericalError("degenerate representation: zero-norm encoder output");
    for (auto& x : z) x /= n;
    return z;
}

/// M(a, b) = 1 - cos(feat(a), feat(b)), in [0, 2].
template <class FeatureFn>
    requires std::is_invocable_r_v<Vec, FeatureFn&, const Vec&>
double measurement(FeatureFn&& features, const Vec& input_a, const Vec& input_b) {
    const Vec za = features(input_a);
    const Vec zb = features(input_b);
    const double na = norm2(za), nb = norm2(zb);
    if (na <= 1e-12 || nb <= 1e-12)
        throw NumericalError("degenerate representation: zero-norm encoder output");
    return 1.0 - dot(za, zb) / (na * nb);
}

inline double measurement(const Mlp& policy, const Vec& input_a, const Vec& input_b) {
    return measurement([&](const Vec& x) { return encoder_features(policy, x); }, input_a,
                       input_b);
}

/// Operator target for one transition pair: |r_i - r_j| plus the discounted
/// measurement of the sampled next tuples under the frozen feature map.
template <class FeatureFn>
double simsr_target(FeatureFn&& frozen_features, const Transition& a, const Transition& b,
                    double gamma) {
    const double dr = std::abs(a.reward - b.reward);
    return dr + gamma * measurement(frozen_features, concat(a.next_state, a.goal),
                                    concat(b.next_state, b.goal));
}

namespace detail {

struct NormalizedBatch {
    BatchTape tape;
    Matrix zhat;     // unit rows
    Vec norms;
};

inline NormalizedBatch normalized_batch(const Mlp& policy, const Matrix& inputs) {
    NormalizedBatch nb;
    nb.tape = policy.forward_batch(inputs, 1);
    const Matrix& z = Mlp::features(nb.tape);
    nb.zhat = z;
    nb.norms.resize(z.rows);
    for (int i = 0; i < z.rows; ++i) {
        double s = 0.0;
        const double* row = z.row(i);
        for (int j = 0; j < z.cols; ++j) s += row[j] * row[j];
        const double n = std::sqrt(s);
        if (n <= 1e-12)
            throw NumericalError("degenerate representation: zero-norm encoder output");
        nb.norms[i] = n;
        double* zr = nb.zhat.row(i);
        for (int j = 0; j < z.cols; ++j) zr[j] /= n;
    }
    return nb;
}

/// dM/dz_a for M = 1 - zhat_a . zhat_b, scaled by w, written into out row.
inline void measurement_cotangent_row(const double* zha, const double* zhb, double cosab,
                                      double norm_a, double w, double* out, int width) {
    const double c = -w / norm_a;
    for (int j = 0; j < width; ++j) out[j] = c * (zhb[j] - cosab * zha[j]);
}

}  // namespace detail

struct SimsrLossResult {
    double loss = 0.0;
    MlpGrads grads;  // policy-shaped; only layer 1 nonzero
};

/// Mean-square SimSR loss over a minibatch paired with a permuted copy of
/// itself. Gradients flow only through the current-tuple measurement; the
/// next-tuple term uses the frozen target policy's encoder.
inline SimsrLossResult simsr_loss(const Mlp& policy, const Mlp& target_policy,
                                  const Minibatch& batch, const std::vector<size_t>& pairing,
                                  double gamma) {
    const int n = batch.size();
    require(n > 0, "simsr_loss: empty batch");
    require(static_cast<int>(pairing.size()) == n, "simsr_loss: pairing size mismatch");
    const int ds = batch.states.cols, dg = batch.goals.cols;

    auto pack = [&](const Matrix& s, const Matrix& g, bool permute) {
        Matrix x(n, ds + dg);
        for (int i = 0; i < n; ++i) {
            const int r = permute ? static_cast<int>(pairing[i]) : i;
            std::copy(s.row(r), s.row(r) + ds, x.row(i));
            std::copy(g.row(r), g.row(r) + dg, x.row(i) + ds);
        }
        return x;
    };

    auto cur_i = detail::normalized_batch(policy, pack(batch.states, batch.goals, false));
    auto cur_j = detail::normalized_batch(policy, pack(batch.states, batch.goals, true));
    auto nxt_i = detail::normalized_batch(target_policy, pack(batch.next_states, batch.goals, false));
    auto nxt_j = detail::normalized_batch(target_policy, pack(batch.next_states, batch.goals, true));

    const int width = cur_i.zhat.cols;
    Matrix cot_i(n, width), cot_j(n, width);
    SimsrLossResult out;
    out.grads = policy.zero_grads();
    for (int k = 0; k < n; ++k) {
        double cos_cur = 0.0, cos_nxt = 0.0;
        const double *zi = cur_i.zhat.row(k), *zj = cur_j.zhat.row(k);
        for (int j = 0; j < width; ++j) cos_cur += zi[j] * zj[j];
        const double *wi = nxt_i.zhat.row(k), *wj = nxt_j.zhat.row(k);
        for (int j = 0; j < width; ++j) cos_nxt += wi[j] * wj[j];
        const double m_cur = 1.0 - cos_cur;
        const double dr = std::abs(batch.rewards[k] - batch.rewards[pairing[k]]);
        const double target = dr + gamma * (1.0 - cos_nxt);
        const double resid = m_cur - target;
        out.loss += resid * resid / n;
        const double w = 2.0 * resid / n;
        detail::measurement_cotangent_row(zi, zj, cos_cur, cur_i.norms[k], w, cot_i.row(k), width);
        detail::measurement_cotangent_row(zj, zi, cos_cur, cur_j.norms[k], w, cot_j.row(k), width);
    }
    policy.backward_batch(cur_i.tape, cot_i, &out.grads, nullptr);
    policy.backward_batch(cur_j.tape, cot_j, &out.grads, nullptr);
    return out;
}

// ---------------------------------------------------------------------------
// Sensitivity-Aware Regularizer
// ---------------------------------------------------------------------------

struct SarConfig {
    double radius = 0.1;  // l-inf radius of the delta draws
    double beta = 1.0;    // weight of the goal-perturbation term
    int resample_budget = 16;

    void validate() const {
        require(radius > 0.0, "SarConfig: radius must be positive");
        require(beta >= 0.0, "SarConfig: beta must be nonnegative");
    }
};

struct SarDeltas {
    Vec state_i, state_j, goal_i, goal_j;
};

inline Vec sample_nonzero_delta(Rng& rng, size_t dim, const SarConfig& cfg) {
    for (int attempt = 0; attempt < cfg.resample_budget; ++attempt) {
        Vec d = rng.uniform_vec(dim, -cfg.radius, cfg.radius);
        if (norm2(d) > 0.0) return d;
    }
    throw Error("sar_regularizer: zero-norm delta after resample budget");
}

inline SarDeltas sample_sar_deltas(Rng& rng, size_t state_dim, size_t goal_dim,
                                   const SarConfig& cfg) {
    SarDeltas d;
    d.state_i = sample_nonzero_delta(rng, state_dim, cfg);
    d.state_j = sample_nonzero_delta(rng, state_dim, cfg);
    d.goal_i = sample_nonzero_delta(rng, goal_dim, cfg);
    d.goal_j = sample_nonzero_delta(rng, goal_dim, cfg);
    return d;
}

struct SarResult {
    double value = 0.0;
    MlpGrads grads;
};

namespace detail {

struct MeasurementRecord {
    Tape tape_a, tape_b;
    Vec zh_a, zh_b;
    double norm_a = 0.0, norm_b = 0.0;
    double cosab = 0.0;
    double m = 0.0;
};

inline MeasurementRecord measure_record(const Mlp& policy, const Vec& xa, const Vec& xb) {
    MeasurementRecord r;
    r.tape_a = policy.forward(xa, 1);
    r.tape_b = policy.forward(xb, 1);
    r.zh_a = Mlp::features(r.tape_a);
    r.zh_b = Mlp::features(r.tape_b);
    r.norm_a = norm2(r.zh_a);
    r.norm_b = norm2(r.zh_b);
    if (r.norm_a <= 1e-12 || r.norm_b <= 1e-12)
        throw NumericalError("degenerate representation: zero-norm encoder output");
    for (auto& x : r.zh_a) x /= r.norm_a;
    for (auto& x : r.zh_b) x /= r.norm_b;
    r.cosab = dot(r.zh_a, r.zh_b);
    r.m = 1.0 - r.cosab;
    return r;
}

inline void accumulate_measurement_grad(const Mlp& policy, const MeasurementRecord& r, double w,
                                        MlpGrads& g) {
    const int width = static_cast<int>(r.zh_a.size());
    Vec cot(width);
    measurement_cotangent_row(r.zh_a.data(), r.zh_b.data(), r.cosab, r.norm_a, w, cot.data(), width);
    policy.accumulate_params(r.tape_a, cot, g, nullptr);
    measurement_cotangent_row(r.zh_b.data(), r.zh_a.data(), r.cosab, r.norm_b, w, cot.data(), width);
    policy.accumulate_params(r.tape_b, cot, g, nullptr);
}

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// | M(i, i+ds_i)/||ds_i|| - M(j, j+ds_j)/||ds_j|| |
///   + beta * | M(i, i+dg_i)/||dg_i|| - M(j, j+dg_j)/||dg_j|| |
/// with state perturbations applied to the state slice and goal perturbations
/// to the goal slice.
inline SarResult sar_regularizer(const Mlp& policy, const StateGoalTuple& tuple_i,
                                 const StateGoalTuple& tuple_j, const SarConfig& cfg,
                                 const SarDeltas& deltas) {
    cfg.validate();
    require(norm2(deltas.state_i) > 0.0 && norm2(deltas.state_j) > 0.0 &&
                norm2(deltas.goal_i) > 0.0 && norm2(deltas.goal_j) > 0.0,
            "sar_regularizer: zero-norm delta");
    auto plus = [](const Vec& a, const Vec& b) {
        Vec r(a.size());
        for (size_t k = 0; k < a.size(); ++k) r[k] = a[k] + b[k];
        return r;
    };
    const Vec xi = concat(tuple_i.state, tuple_i.goal);
    const Vec xj = concat(tuple_j.state, tuple_j.goal);

    auto rec_is = detail::measure_record(policy, xi, concat(plus(tuple_i.state, deltas.state_i), tuple_i.goal));
    auto rec_js = detail::measure_record(policy, xj, concat(plus(tuple_j.state, deltas.state_j), tuple_j.goal));
    auto rec_ig = detail::measure_record(policy, xi, concat(tuple_i.state, plus(tuple_i.goal, deltas.goal_i)));
    auto rec_jg = detail::measure_record(policy, xj, concat(tuple_j.state, plus(tuple_j.goal, deltas.goal_j)));

    const double inv_si = 1.0 / norm2(deltas.state_i);
    const double inv_sj = 1.0 / norm2(deltas.state_j);
    const double inv_gi = 1.0 / norm2(deltas.goal_i);
    const double inv_gj = 1.0 / norm2(deltas.goal_j);

    // volatile pins each normalized response to a rounded double; otherwise
    // fused contraction of the products into the subtraction keeps identical
    // i/j terms from cancelling exactly
    volatile double resp_is = rec_is.m * inv_si;
    volatile double resp_js = rec_js.m * inv_sj;
    volatile double resp_ig = rec_ig.m * inv_gi;
    volatile double resp_jg = rec_jg.m * inv_gj;
    const double a_term = resp_is - resp_js;
    const double b_term = resp_ig - resp_jg;

    SarResult out;
    out.value = std::abs(a_term) + cfg.beta * std::abs(b_term);
    out.grads = policy.zero_grads();
    const double sa = detail::sgn(a_term), sb = detail::sgn(b_term);
    if (sa != 0.0) {
        detail::accumulate_measurement_grad(policy, rec_is, sa * inv_si, out.grads);
        detail::accumulate_measurement_grad(policy, rec_js, -sa * inv_sj, out.grads);
    }
    if (cfg.beta > 0.0 && sb != 0.0) {
        detail::accumulate_measurement_grad(policy, rec_ig, cfg.beta * sb * inv_gi, out.grads);
        detail::accumulate_measurement_grad(policy, rec_jg, -cfg.beta * sb * inv_gj, out.grads);
    }
    return out;
}

inline SarResult sar_regularizer(const Mlp& policy, const StateGoalTuple& tuple_i,
                                 const StateGoalTuple& tuple_j, const SarConfig& cfg, Rng& rng) {
    return sar_regularizer(policy, tuple_i, tuple_j, cfg,
                           sample_sar_deltas(rng, tuple_i.state.size(), tuple_i.goal.size(), cfg));
}

// ---------------------------------------------------------------------------
// Operator contraction probe on a tabulated tuple set
// ---------------------------------------------------------------------------

/// A finite tuple set with per-tuple rewards and one fixed sampled successor
/// index each; measurements are tabulated as square matrices over tuples.
struct TabulatedMdp {
    Vec rewards;
    std::vector<int> next;

    void validate() const {
        require(rewards.size() == next.size(), "TabulatedMdp: size mismatch");
        for (int k : next)
            require(k >= 0 && k < static_cast<int>(next.size()), "TabulatedMdp: bad next index");
    }
};

inline Matrix apply_simsr_operator(const TabulatedMdp& mdp, const Matrix& m, double gamma) {
    mdp.validate();
    const int n = static_cast<int>(mdp.rewards.size());
    require(m.rows == n && m.cols == n, "apply_simsr_operator: matrix size mismatch");
    Matrix out(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            out(a, b) = std::abs(mdp.rewards[a] - mdp.rewards[b]) + gamma * m(mdp.next[a], mdp.next[b]);
    return out;
}

/// ||T M1 - T M2||_inf / ||M1 - M2||_inf, 0/0 reported as 0.
inline double simsr_contraction_probe(const TabulatedMdp& mdp, const Matrix& m1, const Matrix& m2,
                                      double gamma) {
    const Matrix t1 = apply_simsr_operator(mdp, m1, gamma);
    const Matrix t2 = apply_simsr_operator(mdp, m2, gamma);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < m1.a.size(); ++i) {
        num = std::max(num, std::abs(t1.a[i] - t2.a[i]));
        den = std::max(den, std::abs(m1.a[i] - m2.a[i]));
    }
    return den == 0.0 ? 0.0 : num / den;
}

}  // namespace gcrl
