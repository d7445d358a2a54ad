#pragma once

/// Offline goal-conditioned agents. Every agent shares one backbone: a policy
/// network whose first layer is the representation encoder (width 256, ReLU)
/// followed by a three-layer actor head with tanh-bounded output, and, where
/// the algorithm has one, a four-layer critic over (s, g, a). Target copies
/// trail the online networks by polyak averaging once per training cycle.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gcrl/core.hpp"
#include "gcrl/dataset.hpp"
#include "gcrl/env.hpp"
#include "gcrl/mlp.hpp"

namespace gcrl {

enum class Algo { ddpg, gcsl, gofar };

inline std::string to_string(Algo a) {
    switch (a) {
        case Algo::ddpg: return "ddpg";
        case Algo::gcsl: return "gcsl";
        case Algo::gofar: return "gofar";
    }
    return "?";
}
inline Algo algo_from(const std::string& s) {
    if (s == "ddpg") return Algo::ddpg;
    if (s == "gcsl") return Algo::gcsl;
    if (s == "gofar") return Algo::gofar;
    throw ConfigError(cat("unknown algorithm '", s, "'"));
}

inline Matrix hstack(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows, "hstack: row mismatch");
    Matrix m(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        std::copy(a.row(i), a.row(i) + a.cols, m.row(i));
        std::copy(b.row(i), b.row(i) + b.cols, m.row(i) + a.cols);
    }
    return m;
}

inline Matrix hstack(const Matrix& a, const Matrix& b, const Matrix& c) {
    return hstack(hstack(a, b), c);
}

inline void tanh_inplace(Matrix& m) {
    for (auto& x : m.a) x = std::tanh(x);
}

/// Discriminator + value network used by GoFar.
struct GoFarAux {
    Mlp discriminator;  // input: achieved goal ++ goal, scalar logit
    Mlp value;          // input: state ++ goal, scalar
};

struct AgentBundle {
    Algo algo = Algo::ddpg;
    double gamma = 0.98;
    int state_dim = 0, goal_dim = 0, action_dim = 0;
    std::string pipeline = "vanilla";

    Mlp policy;
    Mlp policy_target;
    std::optional<Mlp> critic;
    std::optional<Mlp> critic_target;
    std::optional<GoFarAux> aux;

    static AgentBundle make(Algo algo, int ds, int dg, int da, double gamma, uint64_t seed,
                            int width = 256, bool freeze_biases = false) {
        AgentBundle b;
        b.algo = algo;
        b.gamma = gamma;
        b.state_dim = ds;
        b.goal_dim = dg;
        b.action_dim = da;
        const int in = ds + dg;
        b.policy = Mlp::make({in, width, width, width, da}, derive_seed(seed, 1), freeze_biases);
        b.policy_target = b.policy;
        if (algo == Algo::ddpg) {
            b.critic = Mlp::make({in + da, width, width, width, 1}, derive_seed(seed, 2), freeze_biases);
            b.critic_target = b.critic;
        }
        if (algo == Algo::gofar) {
            b.aux = GoFarAux{
                Mlp::make({2 * dg, width, width, width, 1}, derive_seed(seed, 3), freeze_biases),
                Mlp::make({in, width, width, width, 1}, derive_seed(seed, 4), freeze_biases)};
        }
        return b;
    }

    int encoder_width() const { return policy.layer_out_dim(0); }

    /// Deterministic action: tanh(actor(encoder(<s, g>))).
    Vec act(const StateGoalTuple& obs) const {
        require(static_cast<int>(obs.state.size()) == state_dim, "act: state dim ",
                obs.state.size(), ", expected ", state_dim);
        require(static_cast<int>(obs.goal.size()) == goal_dim, "act: goal dim ", obs.goal.size(),
                ", expected ", goal_dim);
        Vec u = policy.output(concat(obs.state, obs.goal));
        for (auto& x : u) x = std::tanh(x);
        return u;
    }

    Matrix act_batch(const Matrix& inputs) const {
        Matrix a = Mlp::features(policy.forward_batch(inputs));
        tanh_inplace(a);
        return a;
    }

    Policy as_policy() const {
        return [this](const StateGoalTuple& obs) { return act(obs); };
    }

    void polyak_targets(double tau) {
        polyak_update(policy_target, policy, tau);
        if (critic) polyak_update(*critic_target, *critic, tau);
    }

    void save(std::ostream& os) const {
        BinWriter w(os);
        w.u32(kMagic);
        w.u32(1);
        w.u8(static_cast<uint8_t>(algo));
        w.f64(gamma);
        w.u32(static_cast<uint32_t>(state_dim));
        w.u32(static_cast<uint32_t>(goal_dim));
        w.u32(static_cast<uint32_t>(action_dim));
        w.str(pipeline);
        w.u8(critic.has_value() ? 1 : 0);
        w.u8(aux.has_value() ? 1 : 0);
        policy.save(os);
        policy_target.save(os);
        if (critic) {
            critic->save(os);
            critic_target->save(os);
        }
        if (aux) {
            aux->discriminator.save(os);
            aux->value.save(os);
        }
    }

    static AgentBundle load(std::istream& is) {
        BinReader r(is);
        require(r.u32() == kMagic, "AgentBundle::load: bad magic");
        require(r.u32() == 1, "AgentBundle::load: unsupported version");
        AgentBundle b;
        b.algo = static_cast<Algo>(r.u8());
        b.gamma = r.f64();
        b.state_dim = static_cast<int>(r.u32());
        b.goal_dim = static_cast<int>(r.u32());
        b.action_dim = static_cast<int>(r.u32());
        b.pipeline = r.str();
        const bool has_critic = r.u8() != 0;
        const bool has_aux = r.u8() != 0;
        b.policy = Mlp::load(is);
        b.policy_target = Mlp::load(is);
        if (has_critic) {
            b.critic = Mlp::load(is);
            b.critic_target = Mlp::load(is);
        }
        if (has_aux) {
            b.aux = GoFarAux{Mlp::load(is), Mlp::load(is)};
        }
        return b;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        require(os.good(), "cannot open '", path, "' for writing");
        save(os);
        require(os.good(), "write failed for '", path, "'");
    }

    static AgentBundle load_file(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        require(is.good(), "cannot open checkpoint file '", path, "'");
        return load(is);
    }

    static constexpr uint32_t kMagic = 0x42414347;  // "GCAB"
};

// ---------------------------------------------------------------------------
// Losses. Each returns the scalar and the gradient for the network it trains;
// anything else involved is treated as constant.
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    MlpGrads grads;
};

/// Mean squared Bellman residual against r + gamma * Q_target(s', pi_target(s', g), g).
/// With clip_targets the (constant) target is projected into the feasible
/// value range [0, 1/(1-gamma)] implied by the 0/1 step reward.
inline LossResult ddpg_critic_loss(const AgentBundle& b, const Minibatch& mb,
                                   bool clip_targets = false) {
    require(b.critic.has_value(), "ddpg_critic_loss: bundle has no critic");
    const int n = mb.size();
    require(n > 0, "ddpg_critic_loss: empty minibatch");

    Matrix next_in = hstack(mb.next_states, mb.goals);
    Matrix next_a = Mlp::features(b.policy_target.forward_batch(next_in));
    tanh_inplace(next_a);
    const Matrix q_next = Mlp::features(b.critic_target->forward_batch(hstack(next_in, next_a)));

    BatchTape tape = b.critic->forward_batch(hstack(mb.states, mb.goals, mb.actions));
    const Matrix& q = Mlp::features(tape);

    LossResult out;
    out.grads = b.critic->zero_grads();
    Matrix cot(n, 1);
    for (int i = 0; i < n; ++i) {
        double target = mb.rewards[i] + b.gamma * q_next(i, 0);
        if (clip_targets) target = std::clamp(target, 0.0, 1.0 / (1.0 - b.gamma));
        const double diff = q(i, 0) - target;
        out.loss += diff * diff / n;
        cot(i, 0) = 2.0 * diff / n;
    }
    b.critic->backward_batch(tape, cot, &out.grads, nullptr);
    return out;
}

/// -mean Q(s, pi(s, g), g); gradients reach the actor and encoder only.
/// With action_l2 > 0 the mean squared action is added to keep the tanh head
/// away from saturation during training (the hindsight-DDPG convention); the
/// spec'd pure objective is the default.
inline LossResult ddpg_actor_loss(const AgentBundle& b, const Minibatch& mb,
                                  double action_l2 = 0.0) {
    require(b.critic.has_value(), "ddpg_actor_loss: bundle has no critic");
    const int n = mb.size();
    require(n > 0, "ddpg_actor_loss: empty minibatch");

    Matrix pol_in = hstack(mb.states, mb.goals);
    BatchTape ptape = b.policy.forward_batch(pol_in);
    Matrix a = Mlp::features(ptape);
    tanh_inplace(a);

    BatchTape qtape = b.critic->forward_batch(hstack(pol_in, a));
    const Matrix& q = Mlp::features(qtape);

    LossResult out;
    out.grads = b.policy.zero_grads();
    double loss = 0.0;
    Matrix cot(n, 1);
    for (int i = 0; i < n; ++i) {
        loss -= q(i, 0) / n;
        cot(i, 0) = -1.0 / n;
    }

    Matrix dq_in;
    b.critic->backward_batch(qtape, cot, nullptr, &dq_in);
    const int off = b.state_dim + b.goal_dim;
    const double pen = action_l2 / (static_cast<double>(n) * b.action_dim);
    Matrix du(n, b.action_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < b.action_dim; ++j) {
            const double aij = a(i, j);
            double da = dq_in(i, off + j);
            if (action_l2 != 0.0) {
                loss += pen * aij * aij;
                da += 2.0 * pen * aij;
            }
            du(i, j) = da * (1.0 - aij * aij);
        }
    out.loss = loss;
    b.policy.backward_batch(ptape, du, &out.grads, nullptr);
    return out;
}

/// Behaviour cloning on (relabeled) transitions: mean over samples of the
/// per-coordinate mean squared action error.
inline LossResult gcsl_loss(const AgentBundle& b, const Minibatch& mb) {
    const int n = mb.size();
    require(n > 0, "gcsl_loss: empty minibatch");
    BatchTape ptape = b.policy.forward_batch(hstack(mb.states, mb.goals));
    Matrix a = Mlp::features(ptape);
    tanh_inplace(a);

    LossResult out;
    out.grads = b.policy.zero_grads();
    const double scale = 1.0 / (static_cast<double>(n) * b.action_dim);
    Matrix du(n, b.action_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < b.action_dim; ++j) {
            const double diff = a(i, j) - mb.actions(i, j);
            out.loss += diff * diff * scale;
            du(i, j) = 2.0 * diff * scale * (1.0 - a(i, j) * a(i, j));
        }
    b.policy.backward_batch(ptape, du, &out.grads, nullptr);
    return out;
}

// ---------------------------------------------------------------------------
// GoFar: discriminator-estimated rewards, chi^2 conjugate value objective,
// advantage-weighted regression for the policy.
// ---------------------------------------------------------------------------

inline double gofar_f_star(double y) { return y + 0.25 * y * y; }
inline double gofar_f_star_prime(double y) { return 1.0 + 0.5 * y; }

inline Matrix achieved_batch(const Environment& env, const Matrix& states) {
    Matrix ag(states.rows, env.goal_dim());
    for (int i = 0; i < states.rows; ++i) ag.set_row(i, env.achieved_goal(states.row_vec(i)));
    return ag;
}

struct GoFarRewards {
    Vec r;
    size_t clamp_count = 0;
};

/// log c/(1-c) with c the clamped sigmoid discriminator output on
/// (achieved(s), g); treated as a constant reward estimate downstream.
inline GoFarRewards gofar_reward_estimate(const AgentBundle& b, const Environment& env,
                                          const Matrix& states, const Matrix& goals) {
    require(b.aux.has_value(), "gofar_reward_estimate: bundle has no GoFar aux nets");
    GoFarRewards out;
    const Matrix logits =
        Mlp::features(b.aux->discriminator.forward_batch(hstack(achieved_batch(env, states), goals)));
    out.r.resize(logits.rows);
    for (int i = 0; i < logits.rows; ++i) {
        double c = 1.0 / (1.0 + std::exp(-logits(i, 0)));
        if (c < 1e-6 || c > 1.0 - 1e-6) {
            ++out.clamp_count;
            c = std::clamp(c, 1e-6, 1.0 - 1e-6);
        }
        out.r[i] = std::log(c) - std::log1p(-c);
    }
    return out;
}

/// Logistic discriminator loss; positives are goal/goal pairs, negatives are
/// dataset (achieved, goal) pairs. Perfect separation drives it to 0+.
inline LossResult gofar_discriminator_loss(const AgentBundle& b, const Environment& env,
                                           const Minibatch& mb, const Matrix& positive_goals,
                                           size_t* clamp_count = nullptr) {
    require(b.aux.has_value(), "gofar_discriminator_loss: bundle has no GoFar aux nets");
    const Mlp& disc = b.aux->discriminator;
    const int n = mb.size(), m = positive_goals.rows;
    require(n > 0 && m > 0, "gofar_discriminator_loss: empty minibatch");

    BatchTape pos_tape = disc.forward_batch(hstack(positive_goals, positive_goals));
    BatchTape neg_tape = disc.forward_batch(hstack(achieved_batch(env, mb.states), mb.goals));

    LossResult out;
    out.grads = disc.zero_grads();
    size_t clamps = 0;
    auto clamped = [&clamps](double c) {
        if (c < 1e-6 || c > 1.0 - 1e-6) {
            ++clamps;
            return std::clamp(c, 1e-6, 1.0 - 1e-6);
        }
        return c;
    };
    Matrix pos_cot(m, 1), neg_cot(n, 1);
    for (int i = 0; i < m; ++i) {
        const double c = 1.0 / (1.0 + std::exp(-Mlp::features(pos_tape)(i, 0)));
        out.loss -= std::log(clamped(c)) / m;
        pos_cot(i, 0) = (c - 1.0) / m;
    }
    for (int i = 0; i < n; ++i) {
        const double c = 1.0 / (1.0 + std::exp(-Mlp::features(neg_tape)(i, 0)));
        out.loss -= std::log1p(-clamped(c)) / n;
        neg_cot(i, 0) = c / n;
    }
    disc.backward_batch(pos_tape, pos_cot, &out.grads, nullptr);
    disc.backward_batch(neg_tape, neg_cot, &out.grads, nullptr);
    if (clamp_count) *clamp_count += clamps;
    return out;
}

/// (1-gamma) E[V(s0, g0)] + E[f*(R + gamma V(s', g) - V(s, g))], gradients
/// through every V term (no stop gradient; the objective is a dual).
inline LossResult gofar_value_loss(const AgentBundle& b, const Environment& env,
                                   const Minibatch& mb, const Minibatch& initial,
                                   size_t* clamp_count = nullptr) {
    require(b.aux.has_value(), "gofar_value_loss: bundle has no GoFar aux nets");
    const Mlp& value = b.aux->value;
    const int n = mb.size(), m = initial.size();
    require(n > 0 && m > 0, "gofar_value_loss: empty minibatch");

    GoFarRewards rew = gofar_reward_estimate(b, env, mb.states, mb.goals);
    if (clamp_count) *clamp_count += rew.clamp_count;

    BatchTape t0 = value.forward_batch(hstack(initial.states, initial.goals));
    BatchTape tc = value.forward_batch(hstack(mb.states, mb.goals));
    BatchTape tn = value.forward_batch(hstack(mb.next_states, mb.goals));

    LossResult out;
    out.grads = value.zero_grads();
    Matrix cot0(m, 1), cotc(n, 1), cotn(n, 1);
    for (int i = 0; i < m; ++i) {
        out.loss += (1.0 - b.gamma) * Mlp::features(t0)(i, 0) / m;
        cot0(i, 0) = (1.0 - b.gamma) / m;
    }
    for (int i = 0; i < n; ++i) {
        const double y =
            rew.r[i] + b.gamma * Mlp::features(tn)(i, 0) - Mlp::features(tc)(i, 0);
        out.loss += gofar_f_star(y) / n;
        const double dy = gofar_f_star_prime(y) / n;
        cotn(i, 0) = b.gamma * dy;
        cotc(i, 0) = -dy;
    }
    value.backward_batch(t0, cot0, &out.grads, nullptr);
    value.backward_batch(tc, cotc, &out.grads, nullptr);
    value.backward_batch(tn, cotn, &out.grads, nullptr);
    return out;
}

/// Advantage-weighted regression: w = f*'(R + gamma V(s') - V(s)) treated as a
/// constant, squared action error standing in for -log pi of the
/// deterministic actor.
inline LossResult gofar_policy_loss(const AgentBundle& b, const Environment& env,
                                    const Minibatch& mb, size_t* clamp_count = nullptr) {
    require(b.aux.has_value(), "gofar_policy_loss: bundle has no GoFar aux nets");
    const int n = mb.size();
    require(n > 0, "gofar_policy_loss: empty minibatch");

    GoFarRewards rew = gofar_reward_estimate(b, env, mb.states, mb.goals);
    if (clamp_count) *clamp_count += rew.clamp_count;
    const Matrix vc = Mlp::features(b.aux->value.forward_batch(hstack(mb.states, mb.goals)));
    const Matrix vn = Mlp::features(b.aux->value.forward_batch(hstack(mb.next_states, mb.goals)));

    BatchTape ptape = b.policy.forward_batch(hstack(mb.states, mb.goals));
    Matrix a = Mlp::features(ptape);
    tanh_inplace(a);

    LossResult out;
    out.grads = b.policy.zero_grads();
    const double scale = 1.0 / (static_cast<double>(n) * b.action_dim);
    Matrix du(n, b.action_dim);
    for (int i = 0; i < n; ++i) {
        const double w = gofar_f_star_prime(rew.r[i] + b.gamma * vn(i, 0) - vc(i, 0));
        for (int j = 0; j < b.action_dim; ++j) {
            const double diff = a(i, j) - mb.actions(i, j);
            out.loss += w * diff * diff * scale;
            du(i, j) = 2.0 * w * diff * scale * (1.0 - a(i, j) * a(i, j));
        }
    }
    b.policy.backward_batch(ptape, du, &out.grads, nullptr);
    return out;
}

struct GoFarLosses {
    LossResult discriminator;
    LossResult value;
    LossResult policy;
    size_t clamp_count = 0;
};

/// All three GoFar objectives evaluated at the current parameters.
inline GoFarLosses gofar_losses(const AgentBundle& b, const Environment& env, const Minibatch& mb,
                                const Minibatch& initial, const Matrix& positive_goals) {
    GoFarLosses out;
    out.discriminator = gofar_discriminator_loss(b, env, mb, positive_goals, &out.clamp_count);
    out.value = gofar_value_loss(b, env, mb, initial, &out.clamp_count);
    out.policy = gofar_policy_loss(b, env, mb, &out.clamp_count);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSchedule {
    int epochs = 30;
    int cycles = 20;
    int batches_per_cycle = 40;
    int batch_size = 512;
    double lr = 1e-3;
    double tau = 0.05;
    double future_ratio = 0.8;
    double action_l2 = 0.3;     // actor tanh-saturation penalty (DDPG only)
    bool clip_targets = false;  // project Bellman targets into [0, 1/(1-gamma)]
    int eval_episodes = 10;
    bool record_snapshots = false;

    AdamConfig adam() const { return {lr, 0.9, 0.999, 1e-8}; }
    void validate() const {
        require(epochs >= 0 && cycles >= 1 && batches_per_cycle >= 1 && batch_size >= 1,
                "TrainSchedule: nonpositive loop bounds");
        require(future_ratio >= 0.0 && future_ratio <= 1.0, "TrainSchedule: future_ratio in [0,1]");
        require(tau > 0.0 && tau <= 1.0, "TrainSchedule: tau in (0,1]");
    }
};

struct TrainCounters {
    size_t attack_fallbacks = 0;
    size_t disc_clamps = 0;
};

struct TrainResult {
    std::vector<double> nature_curve;       // per-epoch mean nature return
    std::vector<AgentBundle> snapshots;     // per-epoch copies when recorded
    bool aborted = false;
    std::string message;
    TrainCounters counters;
};

struct Optimizers {
    AdamState policy;
    AdamState critic;
    AdamState discriminator;
    AdamState value;
    AdamState encoder;  // separate state for representation-only steps

    static Optimizers make(const AgentBundle& b, AdamConfig cfg) {
        Optimizers o;
        o.policy = AdamState(b.policy, cfg);
        o.encoder = AdamState(b.policy, cfg);
        if (b.critic) o.critic = AdamState(*b.critic, cfg);
        if (b.aux) {
            o.discriminator = AdamState(b.aux->discriminator, cfg);
            o.value = AdamState(b.aux->value, cfg);
        }
        return o;
    }
};

inline double evaluate_nature(const AgentBundle& b, const Environment& env, int episodes,
                              uint64_t seed) {
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(e)));
        Vec s0 = env.sample_initial_state(rng);
        Vec g = env.sample_goal(rng);
        total += rollout(env, b.as_policy(), std::move(s0), g, env.horizon(), b.gamma).discounted_return;
    }
    return total / episodes;
}

/// One vanilla minibatch update for the bundle's base algorithm.
inline void base_update(AgentBundle& b, const HindsightSampler& sampler, const Minibatch& mb,
                        Optimizers& opt, Rng& rng, TrainCounters& counters,
                        double action_l2 = 0.0, bool clip_targets = false) {
    switch (b.algo) {
        case Algo::ddpg: {
            LossResult c = ddpg_critic_loss(b, mb, clip_targets);
            if (!std::isfinite(c.loss)) throw NumericalError("ddpg critic loss is non-finite");
            opt.critic.step(*b.critic, c.grads);
            LossResult a = ddpg_actor_loss(b, mb, action_l2);
            if (!std::isfinite(a.loss)) throw NumericalError("ddpg actor loss is non-finite");
            opt.policy.step(b.policy, a.grads);
            break;
        }
        case Algo::gcsl: {
            LossResult l = gcsl_loss(b, mb);
            if (!std::isfinite(l.loss)) throw NumericalError("gcsl loss is non-finite");
            opt.policy.step(b.policy, l.grads);
            break;
        }
        case Algo::gofar: {
            const Environment& env = sampler.env();
            Matrix positives(mb.size(), env.goal_dim());
            for (int i = 0; i < mb.size(); ++i) positives.set_row(i, env.sample_goal(rng));
            LossResult d = gofar_discriminator_loss(b, env, mb, positives, &counters.disc_clamps);
            if (!std::isfinite(d.loss)) throw NumericalError("gofar discriminator loss is non-finite");
            opt.discriminator.step(b.aux->discriminator, d.grads);
            Minibatch initial = sampler.sample_initial(rng, mb.size());
            LossResult v = gofar_value_loss(b, env, mb, initial, &counters.disc_clamps);
            if (!std::isfinite(v.loss)) throw NumericalError("gofar value loss is non-finite");
            opt.value.step(b.aux->value, v.grads);
            LossResult p = gofar_policy_loss(b, env, mb, &counters.disc_clamps);
            if (!std::isfinite(p.loss)) throw NumericalError("gofar policy loss is non-finite");
            opt.policy.step(b.policy, p.grads);
            break;
        }
    }
}

/// Epoch/cycle/minibatch loop shared by the vanilla and defended trainers.
/// `cycle_hook(bundle, sampler, optimizers, rng, counters)` runs once at the
/// start of every cycle (representation-learning steps live there);
/// `update(bundle, sampler, minibatch, optimizers, rng, counters)` performs one
/// minibatch update. Targets polyak-trail once per cycle. A non-finite loss
/// aborts, restoring the last state that completed a cycle.
template <class CycleHook, class UpdateFn>
TrainResult train_loop(AgentBundle& bundle, const OfflineDataset& data, const Environment& env,
                       const TrainSchedule& sched, uint64_t seed, CycleHook&& cycle_hook,
                       UpdateFn&& update) {
    sched.validate();
    const double fr = bundle.algo == Algo::gofar ? 0.0 : sched.future_ratio;
    HindsightSampler sampler(data, env, fr);
    Optimizers opt = Optimizers::make(bundle, sched.adam());
    Rng rng(derive_seed(seed, 0x7121100ULL));
    TrainResult res;
    AgentBundle last_good = bundle;
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        for (int cycle = 0; cycle < sched.cycles; ++cycle) {
            try {
                cycle_hook(bundle, sampler, opt, rng, res.counters);
                for (int k = 0; k < sched.batches_per_cycle; ++k) {
                    Minibatch mb = sampler.sample(rng, sched.batch_size);
                    update(bundle, sampler, mb, opt, rng, res.counters);
                }
                bundle.polyak_targets(sched.tau);
                last_good = bundle;
            } catch (const NumericalError& e) {
                bundle = last_good;
                res.aborted = true;
                res.message = cat("aborted at epoch ", epoch, " cycle ", cycle, ": ", e.what());
                return res;
            }
        }
        res.nature_curve.push_back(evaluate_nature(bundle, env, sched.eval_episodes,
                                                   derive_seed(seed, 0xE7A1ULL, epoch)));
        if (sched.record_snapshots) res.snapshots.push_back(bundle);
    }
    return res;
}

inline void no_cycle_hook(AgentBundle&, const HindsightSampler&, Optimizers&, Rng&,
                          TrainCounters&) {}

/// Vanilla offline training for the bundle's algorithm.
inline TrainResult train(AgentBundle& bundle, const OfflineDataset& data, const Environment& env,
                         const TrainSchedule& sched, uint64_t seed) {
    const double al2 = sched.action_l2;
    const bool clip = sched.clip_targets;
    return train_loop(bundle, data, env, sched, seed, no_cycle_hook,
                      [al2, clip](AgentBundle& b, const HindsightSampler& s, const Minibatch& mb,
                                  Optimizers& o, Rng& r, TrainCounters& c) {
                          base_update(b, s, mb, o, r, c, al2, clip);
                      });
}

}  // namespace gcrl
