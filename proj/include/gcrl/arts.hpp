#pragma once

/// Defense stack: semi-contrastive adversarial augmentation (training on the
/// average of clean and attacked objective terms) and the SimSR encoder step
/// with the optional sensitivity-aware regularizer. Pipelines compose either
/// or both onto any base algorithm.

#include <string>

#include "gcrl/agents.hpp"
#include "gcrl/attacks.hpp"
#include "gcrl/core.hpp"
#include "gcrl/simsr.hpp"

namespace gcrl {

struct DefenseConfig {
    bool scaa = false;
    AttackSpec augmentation;    // SCR family only
    bool adversarial_only = false;  // train on attacked terms exclusively
    bool simsr = false;
    bool sar = false;
    SarConfig sar_config;
    double sar_coeff = 1.0;     // weight of SAR relative to the SimSR loss

    DefenseConfig() {
        augmentation.kind = AttackKind::scr_pgd;
        augmentation.negative_mode = NegativeMode::state;
        augmentation.target = PerturbTarget::state;
    }

    bool any() const { return scaa || simsr; }

    void validate(Algo) const {
        if (scaa)
            require(augmentation.kind == AttackKind::scr_fgsm ||
                        augmentation.kind == AttackKind::scr_pgd,
                    "DefenseConfig: augmentation must use the critic-free SCR family");
        if (sar) require(simsr, "DefenseConfig: SAR attaches only to SimSR-based pipelines");
        if (sar) sar_config.validate();
    }

    std::string suffix() const {
        std::string s;
        if (simsr) s += "+simsr";
        if (sar) s += "+sar";
        if (scaa) s += "+scaa";
        return s;
    }
};

struct Pipeline {
    Algo base = Algo::ddpg;
    DefenseConfig defense;

    std::string name() const {
        std::string s = gcrl::to_string(base) + defense.suffix();
        return s;
    }
};

/// The four studied pipelines (rows of the defense comparison), with SCAA
/// composable on top of any of them.
inline Pipeline compose_defense(Algo base, const DefenseConfig& defense) {
    defense.validate(base);
    return Pipeline{base, defense};
}

namespace detail {

inline void check_finite_loss(double loss, const char* what) {
    if (!std::isfinite(loss)) throw NumericalError(cat(what, " is non-finite"));
}

/// DDPG update with clean and attacked terms weighted (wc, wa). The attacked
/// critic term lives entirely in the perturbed view: Q at the attacked current
/// tuple regresses to r + gamma Q_target at the attacked next tuple (the
/// negative tuples are built for both <s_t, g> and <s_{t+1}, g>), so the
/// critic solves a consistent Bellman recursion on attacked observations
/// rather than being forced constant across each perturbation ball. The
/// attacked actor term is -Q(V(s), V(g), pi(V(s), V(g))).
inline void scaa_ddpg_update(AgentBundle& b, const Minibatch& mb, const BatchAttackResult& adv,
                             const BatchAttackResult& adv_next, double wc, double wa,
                             Optimizers& opt, double action_l2, bool clip_targets) {
    const int n = mb.size();

    auto bellman_target = [&](const Matrix& next_s, const Matrix& next_g) {
        Matrix next_in = hstack(next_s, next_g);
        Matrix next_a = Mlp::features(b.policy_target.forward_batch(next_in));
        tanh_inplace(next_a);
        const Matrix q_next = Mlp::features(b.critic_target->forward_batch(hstack(next_in, next_a)));
        Vec target(n);
        for (int i = 0; i < n; ++i) {
            target[i] = mb.rewards[i] + b.gamma * q_next(i, 0);
            if (clip_targets) target[i] = std::clamp(target[i], 0.0, 1.0 / (1.0 - b.gamma));
        }
        return target;
    };
    const Vec target_clean = bellman_target(mb.next_states, mb.goals);
    const Vec target_adv = bellman_target(adv_next.states, adv_next.goals);

    // each term's gradient in its own container, combined at the stated
    // weights: at eps = 0 both halves are bitwise equal and their weighted sum
    // reproduces the vanilla gradient exactly
    double closs = 0.0;
    auto critic_term = [&](const Matrix& s, const Matrix& g, const Vec& target, double w,
                           MlpGrads& out) {
        BatchTape tape = b.critic->forward_batch(hstack(s, g, mb.actions));
        const Matrix& q = Mlp::features(tape);
        Matrix cot(n, 1);
        for (int i = 0; i < n; ++i) {
            const double diff = q(i, 0) - target[i];
            closs += w * diff * diff / n;
            cot(i, 0) = 2.0 * diff / n;
        }
        b.critic->backward_batch(tape, cot, &out, nullptr);
    };
    MlpGrads cgrads = b.critic->zero_grads();
    if (wc != 0.0) {
        MlpGrads clean = b.critic->zero_grads();
        critic_term(mb.states, mb.goals, target_clean, wc, clean);
        cgrads.add_scaled(clean, wc);
    }
    if (wa != 0.0) {
        MlpGrads adv_grads = b.critic->zero_grads();
        critic_term(adv.states, adv.goals, target_adv, wa, adv_grads);
        cgrads.add_scaled(adv_grads, wa);
    }
    check_finite_loss(closs, "scaa critic loss");
    opt.critic.step(*b.critic, cgrads);

    double aloss = 0.0;
    auto actor_term = [&](const Matrix& obs_in, double w, MlpGrads& out) {
        BatchTape ptape = b.policy.forward_batch(obs_in);
        Matrix a = Mlp::features(ptape);
        tanh_inplace(a);
        BatchTape qtape = b.critic->forward_batch(hstack(obs_in, a));
        const Matrix& q = Mlp::features(qtape);
        Matrix cot(n, 1);
        for (int i = 0; i < n; ++i) {
            aloss -= w * q(i, 0) / n;
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
                    aloss += w * pen * aij * aij;
                    da += 2.0 * pen * aij;
                }
                du(i, j) = da * (1.0 - aij * aij);
            }
        b.policy.backward_batch(ptape, du, &out, nullptr);
    };
    MlpGrads pgrads = b.policy.zero_grads();
    if (wc != 0.0) {
        MlpGrads clean = b.policy.zero_grads();
        actor_term(hstack(mb.states, mb.goals), wc, clean);
        pgrads.add_scaled(clean, wc);
    }
    if (wa != 0.0) {
        MlpGrads adv_grads = b.policy.zero_grads();
        actor_term(hstack(adv.states, adv.goals), wa, adv_grads);
        pgrads.add_scaled(adv_grads, wa);
    }
    check_finite_loss(aloss, "scaa actor loss");
    opt.policy.step(b.policy, pgrads);
}

/// Behaviour-cloning update (GCSL, and GoFar's weighted variant) over clean
/// and attacked observations. Weights w_i default to 1.
inline void scaa_bc_update(AgentBundle& b, const Minibatch& mb, const Matrix& adv_states,
                           const Matrix& adv_goals, const Vec* sample_weights, double wc,
                           double wa, Optimizers& opt) {
    const int n = mb.size();
    double loss = 0.0;
    const double scale = 1.0 / (static_cast<double>(n) * b.action_dim);
    auto term = [&](const Matrix& s, const Matrix& g, double w, MlpGrads& out) {
        BatchTape ptape = b.policy.forward_batch(hstack(s, g));
        Matrix a = Mlp::features(ptape);
        tanh_inplace(a);
        Matrix du(n, b.action_dim);
        for (int i = 0; i < n; ++i) {
            const double sw = sample_weights ? (*sample_weights)[i] : 1.0;
            for (int j = 0; j < b.action_dim; ++j) {
                const double diff = a(i, j) - mb.actions(i, j);
                loss += w * sw * diff * diff * scale;
                du(i, j) = sw * 2.0 * diff * scale * (1.0 - a(i, j) * a(i, j));
            }
        }
        b.policy.backward_batch(ptape, du, &out, nullptr);
    };
    MlpGrads pgrads = b.policy.zero_grads();
    if (wc != 0.0) {
        MlpGrads clean = b.policy.zero_grads();
        term(mb.states, mb.goals, wc, clean);
        pgrads.add_scaled(clean, wc);
    }
    if (wa != 0.0) {
        MlpGrads adv = b.policy.zero_grads();
        term(adv_states, adv_goals, wa, adv);
        pgrads.add_scaled(adv, wa);
    }
    check_finite_loss(loss, "scaa policy loss");
    opt.policy.step(b.policy, pgrads);
}

}  // namespace detail

/// One adversarially-augmented minibatch update. Attack failure on the batch
/// falls back to the plain base update, counted in `counters`.
inline void scaa_update(AgentBundle& b, const HindsightSampler& sampler, const Minibatch& mb,
                        const DefenseConfig& defense, Optimizers& opt, Rng& rng,
                        TrainCounters& counters, double action_l2 = 0.0,
                        bool clip_targets = false) {
    AttackStats stats;
    BatchAttackResult adv = scr_pgd_batch(b.policy, mb.states, mb.goals, defense.augmentation, &stats);
    BatchAttackResult adv_next;
    if (!adv.fell_back && b.algo == Algo::ddpg)
        adv_next = scr_pgd_batch(b.policy, mb.next_states, mb.goals, defense.augmentation, &stats);
    if (adv.fell_back || adv_next.fell_back) {
        ++counters.attack_fallbacks;
        base_update(b, sampler, mb, opt, rng, counters, action_l2, clip_targets);
        return;
    }
    const double wc = defense.adversarial_only ? 0.0 : 0.5;
    const double wa = defense.adversarial_only ? 1.0 : 0.5;
    switch (b.algo) {
        case Algo::ddpg:
            detail::scaa_ddpg_update(b, mb, adv, adv_next, wc, wa, opt, action_l2, clip_targets);
            break;
        case Algo::gcsl:
            detail::scaa_bc_update(b, mb, adv.states, adv.goals, nullptr, wc, wa, opt);
            break;
        case Algo::gofar: {
            // discriminator and value train on clean data; the policy loss is augmented
            const Environment& env = sampler.env();
            Matrix positives(mb.size(), env.goal_dim());
            for (int i = 0; i < mb.size(); ++i) positives.set_row(i, env.sample_goal(rng));
            LossResult d = gofar_discriminator_loss(b, env, mb, positives, &counters.disc_clamps);
            detail::check_finite_loss(d.loss, "gofar discriminator loss");
            opt.discriminator.step(b.aux->discriminator, d.grads);
            Minibatch initial = sampler.sample_initial(rng, mb.size());
            LossResult v = gofar_value_loss(b, env, mb, initial, &counters.disc_clamps);
            detail::check_finite_loss(v.loss, "gofar value loss");
            opt.value.step(b.aux->value, v.grads);

            GoFarRewards rew = gofar_reward_estimate(b, env, mb.states, mb.goals);
            counters.disc_clamps += rew.clamp_count;
            const Matrix vc = Mlp::features(b.aux->value.forward_batch(hstack(mb.states, mb.goals)));
            const Matrix vn =
                Mlp::features(b.aux->value.forward_batch(hstack(mb.next_states, mb.goals)));
            Vec w(mb.size());
            for (int i = 0; i < mb.size(); ++i)
                w[i] = gofar_f_star_prime(rew.r[i] + b.gamma * vn(i, 0) - vc(i, 0));
            detail::scaa_bc_update(b, mb, adv.states, adv.goals, &w, wc, wa, opt);
            break;
        }
    }
}

struct EncoderStepResult {
    double simsr_loss = 0.0;
    double sar_value = 0.0;
};

/// Encoder-only update: gradient of simsr_loss + sar_coeff * mean SAR over the
/// same pairing, applied through a dedicated Adam state. Actor head and critic
/// are untouched (the gradients live entirely in layer 1).
inline EncoderStepResult sar_simsr_encoder_step(AgentBundle& b, const Minibatch& mb,
                                                const DefenseConfig& defense, Optimizers& opt,
                                                Rng& rng) {
    const int n = mb.size();
    std::vector<size_t> pairing = rng.permutation(static_cast<size_t>(n));
    SimsrLossResult sl = simsr_loss(b.policy, b.policy_target, mb, pairing, b.gamma);
    EncoderStepResult out;
    out.simsr_loss = sl.loss;
    if (defense.sar) {
        const double w = defense.sar_coeff / n;
        for (int k = 0; k < n; ++k) {
            StateGoalTuple ti{mb.states.row_vec(k), mb.goals.row_vec(k)};
            StateGoalTuple tj{mb.states.row_vec(static_cast<int>(pairing[k])),
                              mb.goals.row_vec(static_cast<int>(pairing[k]))};
            SarDeltas deltas = sample_sar_deltas(rng, ti.state.size(), ti.goal.size(), defense.sar_config);
            SarResult sr = sar_regularizer(b.policy, ti, tj, defense.sar_config, deltas);
            out.sar_value += sr.value / n;
            sl.grads.add_scaled(sr.grads, w);
        }
    }
    detail::check_finite_loss(out.simsr_loss + out.sar_value, "encoder representation loss");
    opt.encoder.step(b.policy, sl.grads);
    return out;
}

/// One epoch of adversarially-augmented training.
inline TrainResult scaa_epoch(AgentBundle& bundle, const OfflineDataset& data,
                              const Environment& env, const TrainSchedule& sched,
                              const DefenseConfig& defense, uint64_t seed);

/// Train a composed pipeline. SimSR (and SAR on top of it) updates the encoder
/// once per cycle on a fresh minibatch; SCAA replaces the per-minibatch base
/// update. With every defense switched off this runs the vanilla trainer's
/// exact update path.
inline TrainResult train_pipeline(AgentBundle& bundle, const OfflineDataset& data,
                                  const Environment& env, const TrainSchedule& sched,
                                  const DefenseConfig& defense, uint64_t seed) {
    defense.validate(bundle.algo);
    bundle.pipeline = Pipeline{bundle.algo, defense}.name();
    auto hook = [&defense, &sched](AgentBundle& b, const HindsightSampler& s, Optimizers& o,
                                   Rng& r, TrainCounters&) {
        if (!defense.simsr) return;
        Minibatch mb = s.sample(r, sched.batch_size);
        sar_simsr_encoder_step(b, mb, defense, o, r);
    };
    const double al2 = sched.action_l2;
    const bool clip = sched.clip_targets;
    return train_loop(bundle, data, env, sched, seed, hook,
                      [&defense, al2, clip](AgentBundle& b, const HindsightSampler& s,
                                            const Minibatch& mb, Optimizers& o, Rng& r,
                                            TrainCounters& c) {
                          if (defense.scaa)
                              scaa_update(b, s, mb, defense, o, r, c, al2, clip);
                          else
                              base_update(b, s, mb, o, r, c, al2, clip);
                      });
}

inline TrainResult scaa_epoch(AgentBundle& bundle, const OfflineDataset& data,
                              const Environment& env, const TrainSchedule& sched,
                              const DefenseConfig& defense, uint64_t seed) {
    DefenseConfig d = defense;
    d.scaa = true;
    TrainSchedule one = sched;
    one.epochs = 1;
    return train_pipeline(bundle, data, env, one, d, seed);
}

}  // namespace gcrl
