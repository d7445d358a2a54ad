#pragma once

/// Observation-space adversaries. The semi-contrastive representation (SCR)
/// family needs only the policy network: it drives the perturbed tuple's
/// layer features toward the features of a sign-negated tuple. The SA family
/// ascends the negated critic value. Both come in single-step (FGSM) and
/// iterated (PGD) forms; iterates take raw gradient steps and the result is
/// projected onto the l-inf ball (per-step projection is optional).

#include <string>

#include "gcrl/core.hpp"
#include "gcrl/env.hpp"
#include "gcrl/mlp.hpp"

namespace gcrl {

enum class AttackKind { uniform, sa_fgsm, sa_pgd, scr_fgsm, scr_pgd };
enum class NegativeMode { state, goal, state_goal };
enum class PerturbTarget { state, goal, both };
enum class ProjectionTiming { final_only, per_step };

inline std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::uniform: return "uniform";
        case AttackKind::sa_fgsm: return "sa-fgsm";
        case AttackKind::sa_pgd: return "sa-pgd";
        case AttackKind::scr_fgsm: return "scr-fgsm";
        case AttackKind::scr_pgd: return "scr-pgd";
    }
    return "?";
}
inline AttackKind attack_kind_from(const std::string& s) {
    if (s == "uniform") return AttackKind::uniform;
    if (s == "sa-fgsm") return AttackKind::sa_fgsm;
    if (s == "sa-pgd") return AttackKind::sa_pgd;
    if (s == "scr-fgsm") return AttackKind::scr_fgsm;
    if (s == "scr-pgd") return AttackKind::scr_pgd;
    throw ConfigError(cat("unknown attack kind '", s, "'"));
}

inline std::string to_string(NegativeMode m) {
    switch (m) {
        case NegativeMode::state: return "state";
        case NegativeMode::goal: return "goal";
        case NegativeMode::state_goal: return "state+goal";
    }
    return "?";
}
inline NegativeMode negative_mode_from(const std::string& s) {
    if (s == "state") return NegativeMode::state;
    if (s == "goal") return NegativeMode::goal;
    if (s == "state+goal") return NegativeMode::state_goal;
    throw ConfigError(cat("unknown negative mode '", s, "'"));
}

inline std::string to_string(PerturbTarget t) {
    switch (t) {
        case PerturbTarget::state: return "state";
        case PerturbTarget::goal: return "goal";
        case PerturbTarget::both: return "both";
    }
    return "?";
}
inline PerturbTarget perturb_target_from(const std::string& s) {
    if (s == "state") return PerturbTarget::state;
    if (s == "goal") return PerturbTarget::goal;
    if (s == "both") return PerturbTarget::both;
    throw ConfigError(cat("unknown perturbation target '", s, "'"));
}

inline std::string to_string(ProjectionTiming p) {
    return p == ProjectionTiming::final_only ? "final" : "per-step";
}
inline ProjectionTiming projection_from(const std::string& s) {
    if (s == "final") return ProjectionTiming::final_only;
    if (s == "per-step") return ProjectionTiming::per_step;
    throw ConfigError(cat("unknown projection timing '", s, "'"));
}

struct AttackSpec {
    AttackKind kind = AttackKind::scr_pgd;
    double eps_state = 0.1;
    double eps_goal = 0.1;
    int steps = 10;
    double step_size = 0.01;
    NegativeMode negative_mode = NegativeMode::state;
    PerturbTarget target = PerturbTarget::state;
    int layer = 1;
    ProjectionTiming projection = ProjectionTiming::final_only;
    bool sign_grad = false;

    bool perturbs_state() const { return target != PerturbTarget::goal; }
    bool perturbs_goal() const { return target != PerturbTarget::state; }

    void validate() const {
        require(eps_state >= 0.0 && eps_goal >= 0.0, "AttackSpec: radii must be nonnegative");
        require(steps >= 1, "AttackSpec: steps must be >= 1");
        require(step_size > 0.0, "AttackSpec: step_size must be positive");
        require(layer >= 1, "AttackSpec: layer must be >= 1");
    }

    std::string name() const {
        std::string n = to_string(kind);
        if (kind == AttackKind::scr_fgsm || kind == AttackKind::scr_pgd)
            n += "/" + to_string(negative_mode);
        n += "/" + to_string(target);
        return n;
    }
};

/// Incident counters for attacks that had to fall back to the clean input.
struct AttackStats {
    size_t aborted = 0;
};

/// Sign-flip of the selected tuple components; mode `state` gives <-s, g>,
/// `goal` gives <s, -g>, `state+goal` gives <-s, -g>.
inline StateGoalTuple negative_tuple(const StateGoalTuple& t, NegativeMode mode) {
    StateGoalTuple n = t;
    if (mode != NegativeMode::goal)
        for (auto& x : n.state) x = -x;
    if (mode != NegativeMode::state)
        for (auto& x : n.goal) x = -x;
    return n;
}

/// Clamp of one coordinate into the eps-ball around anchor. The clamp bounds
/// round, so the result is nudged inward until the recomputed distance
/// |v - anchor| satisfies the bound exactly.
inline double clamp_into_ball(double v, double anchor, double eps) {
    v = std::clamp(v, anchor - eps, anchor + eps);
    while (std::abs(v - anchor) > eps) v = std::nextafter(v, anchor);
    return v;
}

/// Coordinate-wise clamp of candidate into [anchor - eps, anchor + eps].
inline Vec project_linf(const Vec& candidate, const Vec& anchor, double eps) {
    require(candidate.size() == anchor.size(), "project_linf: dim mismatch");
    require(eps >= 0.0, "project_linf: negative radius");
    Vec r(candidate.size());
    for (size_t i = 0; i < r.size(); ++i) r[i] = clamp_into_ball(candidate[i], anchor[i], eps);
    return r;
}

/// log(1 + exp(-v)), evaluated as softplus(-v) to stay stable for large |v|.
inline double logistic_loss(double v) {
    if (v >= 0.0) return std::log1p(std::exp(-v));
    return -v + std::log1p(std::exp(v));
}

struct ScrLossResult {
    double loss = 0.0;
    Vec grad_state;
    Vec grad_goal;
};

/// L_sim = -f(adv)^T f(negative) with f the policy-net features at `layer`,
/// plus its gradient with respect to the adversarial tuple's state and goal.
inline ScrLossResult scr_similarity_loss(const Mlp& policy, const StateGoalTuple& adv,
                                         const StateGoalTuple& negative, int layer) {
    require(layer >= 1 && layer <= policy.depth(), "scr_similarity_loss: bad layer ", layer);
    const Vec x_adv = concat(adv.state, adv.goal);
    const Vec x_neg = concat(negative.state, negative.goal);
    Tape t_adv = policy.forward(x_adv, layer);
    const Vec f_neg = Mlp::features(policy.forward(x_neg, layer));
    const Vec& f_adv = Mlp::features(t_adv);
    ScrLossResult r;
    r.loss = -dot(f_adv, f_neg);
    Vec cot(f_neg.size());
    for (size_t i = 0; i < cot.size(); ++i) cot[i] = -f_neg[i];
    Vec dx = policy.backward_input(t_adv, cot);
    r.grad_state.assign(dx.begin(), dx.begin() + adv.state.size());
    r.grad_goal.assign(dx.begin() + adv.state.size(), dx.end());
    return r;
}

namespace detail {

inline void descend(Vec& v, const Vec& grad, double alpha, bool sign_grad) {
    for (size_t i = 0; i < v.size(); ++i) {
        double g = grad[i];
        if (sign_grad) g = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        v[i] -= alpha * g;
    }
}

/// Shared PGD loop; `grad_fn(current) -> (grad_state, grad_goal)` is the
/// gradient of the loss being minimized.
template <class GradFn>
StateGoalTuple pgd_loop(const StateGoalTuple& clean, const AttackSpec& spec, int steps,
                        double alpha_state, double alpha_goal, GradFn&& grad_fn,
                        AttackStats* stats) {
    StateGoalTuple v = clean;
    for (int i = 0; i < steps; ++i) {
        auto [gs, gg] = grad_fn(v);
        if (!all_finite(gs) || !all_finite(gg)) {
            if (stats) ++stats->aborted;
            return clean;
        }
        if (spec.perturbs_state()) descend(v.state, gs, alpha_state, spec.sign_grad);
        if (spec.perturbs_goal()) descend(v.goal, gg, alpha_goal, spec.sign_grad);
        if (spec.projection == ProjectionTiming::per_step) {
            if (spec.perturbs_state()) v.state = project_linf(v.state, clean.state, spec.eps_state);
            if (spec.perturbs_goal()) v.goal = project_linf(v.goal, clean.goal, spec.eps_goal);
        }
    }
    if (spec.perturbs_state()) v.state = project_linf(v.state, clean.state, spec.eps_state);
    if (spec.perturbs_goal()) v.goal = project_linf(v.goal, clean.goal, spec.eps_goal);
    return v;
}

}  // namespace detail

/// Iterated SCR attack (Def. by raw-gradient descent on L_sim from the clean
/// tuple, negative tuple fixed from the clean input).
inline StateGoalTuple scr_pgd(const Mlp& policy, const StateGoalTuple& tuple,
                              const AttackSpec& spec, AttackStats* stats = nullptr) {
    spec.validate();
    const StateGoalTuple neg = negative_tuple(tuple, spec.negative_mode);
    return detail::pgd_loop(
        tuple, spec, spec.steps, spec.step_size, spec.step_size,
        [&](const StateGoalTuple& v) {
            ScrLossResult r = scr_similarity_loss(policy, v, neg, spec.layer);
            return std::pair<Vec, Vec>(std::move(r.grad_state), std::move(r.grad_goal));
        },
        stats);
}

/// Single-step SCR attack; the step size is the attack radius of each slice.
inline StateGoalTuple scr_fgsm(const Mlp& policy, const StateGoalTuple& tuple,
                               const AttackSpec& spec, AttackStats* stats = nullptr) {
    spec.validate();
    const StateGoalTuple neg = negative_tuple(tuple, spec.negative_mode);
    return detail::pgd_loop(
        tuple, spec, 1, spec.eps_state, spec.eps_goal,
        [&](const StateGoalTuple& v) {
            ScrLossResult r = scr_similarity_loss(policy, v, neg, spec.layer);
            return std::pair<Vec, Vec>(std::move(r.grad_state), std::move(r.grad_goal));
        },
        stats);
}

/// Critic access for the SA family: either a Q network over (s, g, a) with the
/// action re-derived from the current adversarial tuple, or a plain value
/// surface over (s, g).
struct CriticView {
    const Mlp* policy = nullptr;  // needed to re-derive actions for Q critics
    const Mlp* critic = nullptr;
    bool action_dependent = true;
};

namespace detail {

inline std::pair<Vec, Vec> sa_gradient(const CriticView& cv, const StateGoalTuple& v) {
    Vec q_in;
    if (cv.action_dependent) {
        Vec u = cv.policy->output(concat(v.state, v.goal));
        for (auto& x : u) x = std::tanh(x);
        q_in = concat(v.state, v.goal, u);
    } else {
        q_in = concat(v.state, v.goal);
    }
    Tape t = cv.critic->forward(q_in);
    Vec dx = cv.critic->backward_input(t, Vec{1.0});  // dQ/d(input)
    Vec gs(dx.begin(), dx.begin() + v.state.size());
    Vec gg(dx.begin() + v.state.size(), dx.begin() + v.state.size() + v.goal.size());
    return {std::move(gs), std::move(gg)};
}

}  // namespace detail

/// SA attack: maximizes -Q over the ball, i.e. gradient descent on the critic
/// value. The action is re-derived from the current adversarial tuple at each
/// iterate for Q critics.
inline StateGoalTuple sa_attack(const CriticView& cv, const StateGoalTuple& tuple,
                                const AttackSpec& spec, AttackStats* stats = nullptr) {
    spec.validate();
    require(cv.critic != nullptr, "sa_attack: no critic available");
    require(!cv.action_dependent || cv.policy != nullptr, "sa_attack: Q critic needs the policy");
    const bool single = spec.kind == AttackKind::sa_fgsm;
    return detail::pgd_loop(
        tuple, spec, single ? 1 : spec.steps, single ? spec.eps_state : spec.step_size,
        single ? spec.eps_goal : spec.step_size,
        [&](const StateGoalTuple& v) { return detail::sa_gradient(cv, v); }, stats);
}

/// I.i.d. uniform noise in [-eps, +eps] per coordinate on the targeted slices.
inline StateGoalTuple uniform_attack(const StateGoalTuple& tuple, const AttackSpec& spec,
                                     Rng& rng) {
    spec.validate();
    StateGoalTuple v = tuple;
    if (spec.perturbs_state())
        for (size_t i = 0; i < v.state.size(); ++i)
            v.state[i] = clamp_into_ball(v.state[i] + rng.uniform(-spec.eps_state, spec.eps_state),
                                         tuple.state[i], spec.eps_state);
    if (spec.perturbs_goal())
        for (size_t i = 0; i < v.goal.size(); ++i)
            v.goal[i] = clamp_into_ball(v.goal[i] + rng.uniform(-spec.eps_goal, spec.eps_goal),
                                        tuple.goal[i], spec.eps_goal);
    return v;
}

// ---------------------------------------------------------------------------
// Batched SCR-PGD over a minibatch, used by adversarial augmentation during
// training. Numerically equivalent to mapping scr_pgd over the rows; any
// non-finite gradient makes the whole batch fall back to the clean inputs.
// ---------------------------------------------------------------------------

struct BatchAttackResult {
    Matrix states;
    Matrix goals;
    bool fell_back = false;
};

inline BatchAttackResult scr_pgd_batch(const Mlp& policy, const Matrix& states,
                                       const Matrix& goals, const AttackSpec& spec,
                                       AttackStats* stats = nullptr) {
    spec.validate();
    const int n = states.rows, ds = states.cols, dg = goals.cols;
    auto pack = [&](const Matrix& s, const Matrix& g) {
        Matrix x(n, ds + dg);
        for (int i = 0; i < n; ++i) {
            std::copy(s.row(i), s.row(i) + ds, x.row(i));
            std::copy(g.row(i), g.row(i) + dg, x.row(i) + ds);
        }
        return x;
    };

    Matrix neg_s = states, neg_g = goals;
    if (spec.negative_mode != NegativeMode::goal)
        for (auto& x : neg_s.a) x = -x;
    if (spec.negative_mode != NegativeMode::state)
        for (auto& x : neg_g.a) x = -x;
    const Matrix f_neg = Mlp::features(policy.forward_batch(pack(neg_s, neg_g), spec.layer));

    const int steps = spec.kind == AttackKind::scr_fgsm ? 1 : spec.steps;
    Matrix vs = states, vg = goals;
    for (int i = 0; i < steps; ++i) {
        BatchTape t = policy.forward_batch(pack(vs, vg), spec.layer);
        Matrix cot = f_neg;
        for (auto& x : cot.a) x = -x;
        Matrix dx;
        policy.backward_batch(t, cot, nullptr, &dx);
        if (!dx.all_finite()) {
            if (stats) ++stats->aborted;
            return {states, goals, true};
        }
        const double as = spec.kind == AttackKind::scr_fgsm ? spec.eps_state : spec.step_size;
        const double ag = spec.kind == AttackKind::scr_fgsm ? spec.eps_goal : spec.step_size;
        for (int r = 0; r < n; ++r) {
            const double* drow = dx.row(r);
            if (spec.perturbs_state()) {
                double* srow = vs.row(r);
                for (int j = 0; j < ds; ++j) {
                    double g = drow[j];
                    if (spec.sign_grad) g = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                    srow[j] -= as * g;
                }
            }
            if (spec.perturbs_goal()) {
                double* grow = vg.row(r);
                for (int j = 0; j < dg; ++j) {
                    double g = drow[ds + j];
                    if (spec.sign_grad) g = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                    grow[j] -= ag * g;
                }
            }
        }
        if (spec.projection == ProjectionTiming::per_step || i + 1 == steps) {
            if (spec.perturbs_state())
                for (size_t k = 0; k < vs.a.size(); ++k)
                    vs.a[k] = clamp_into_ball(vs.a[k], states.a[k], spec.eps_state);
            if (spec.perturbs_goal())
                for (size_t k = 0; k < vg.a.size(); ++k)
                    vg.a[k] = clamp_into_ball(vg.a[k], goals.a[k], spec.eps_goal);
        }
    }
    return {std::move(vs), std::move(vg), false};
}

}  // namespace gcrl
