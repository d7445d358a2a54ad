#include <doctest.h>

#include <sstream>

#include "gcrl/agents.hpp"
#include "test_helpers.hpp"

using namespace gcrl;
using testutil::fd_grad_params;
using testutil::flatten;
using testutil::random_minibatch;
using testutil::rel_error;

namespace {

void zero_net(Mlp& net) {
    for (int l = 0; l < net.depth(); ++l) {
        net.mutable_weights(l).set_zero();
        std::fill(net.mutable_biases(l).begin(), net.mutable_biases(l).end(), 0.0);
    }
    net.refresh_transposes();
}

bool batch_margins_ok(const Mlp& net, const Matrix& inputs, double margin = 1e-3) {
    BatchTape t = net.forward_batch(inputs);
    for (int l = 0; l + 1 < net.depth(); ++l)
        for (double p : t.pre[l].a)
            if (std::abs(p) < margin) return false;
    return true;
}

std::string serialized(const AgentBundle& b) {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    b.save(ss);
    return ss.str();
}

}  // namespace

TEST_CASE("act: zero-weight bundle emits the zero action") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 1, 8);
    zero_net(b.policy);
    Vec a = b.act({{0.3, -0.2, 0.1, 0.4}, {0.5, -0.5}});
    CHECK(a == Vec{0.0, 0.0});
}

TEST_CASE("act: deterministic and within bounds, matches straight-line evaluation") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 7, 16);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        StateGoalTuple t{rng.uniform_vec(4, -1.0, 1.0), rng.uniform_vec(2, -1.0, 1.0)};
        Vec a1 = b.act(t);
        Vec a2 = b.act(t);
        CHECK(a1 == a2);
        Vec want = testutil::straight_line_eval(b.policy, concat(t.state, t.goal));
        for (size_t k = 0; k < a1.size(); ++k) {
            CHECK(a1[k] == doctest::Approx(std::tanh(want[k])).epsilon(1e-13));
            CHECK(std::abs(a1[k]) < 1.0);
        }
    }
}

TEST_CASE("ddpg_critic_loss: zero nets and zero rewards give zero loss") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 3, 2, 2, 0.98, 11, 8);
    zero_net(*b.critic);
    zero_net(*b.critic_target);
    Minibatch mb = random_minibatch(8, 3, 2, 2, 5);
    for (auto& r : mb.rewards) r = 0.0;
    CHECK(ddpg_critic_loss(b, mb).loss == 0.0);
}

TEST_CASE("ddpg_critic_loss: single transition hand value (1 + 0 - 0)^2") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 3, 2, 2, 0.98, 13, 8);
    zero_net(*b.critic);
    zero_net(*b.critic_target);
    Minibatch mb = random_minibatch(1, 3, 2, 2, 6);
    mb.rewards[0] = 1.0;
    CHECK(ddpg_critic_loss(b, mb).loss == doctest::Approx(1.0));
}

TEST_CASE("ddpg_critic_loss: target clipping is inert inside the feasible range") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 3, 2, 2, 0.98, 17, 8);
    zero_net(*b.critic_target);  // targets are exactly the 0/1 rewards
    Minibatch mb = testutil::random_minibatch(8, 3, 2, 2, 7);
    LossResult off = ddpg_critic_loss(b, mb, false);
    LossResult on = ddpg_critic_loss(b, mb, true);
    CHECK(off.loss == on.loss);
    CHECK(testutil::flatten(off.grads) == testutil::flatten(on.grads));
}

TEST_CASE("losses are invariant under minibatch permutation") {
    uint64_t seed = 21;
    AgentBundle b = AgentBundle::make(Algo::ddpg, 3, 2, 2, 0.98, seed, 8);
    Minibatch mb = random_minibatch(16, 3, 2, 2, 9);
    Minibatch perm = mb;
    Rng rng(4);
    std::vector<size_t> p = rng.permutation(16);
    for (int i = 0; i < 16; ++i) {
        perm.states.set_row(i, mb.states.row_vec(p[i]));
        perm.actions.set_row(i, mb.actions.row_vec(p[i]));
        perm.next_states.set_row(i, mb.next_states.row_vec(p[i]));
        perm.goals.set_row(i, mb.goals.row_vec(p[i]));
        perm.rewards[i] = mb.rewards[p[i]];
    }
    CHECK(ddpg_critic_loss(b, mb).loss == doctest::Approx(ddpg_critic_loss(b, perm).loss).epsilon(1e-12));
    CHECK(ddpg_actor_loss(b, mb).loss == doctest::Approx(ddpg_actor_loss(b, perm).loss).epsilon(1e-12));
    CHECK(gcsl_loss(b, mb).loss == doctest::Approx(gcsl_loss(b, perm).loss).epsilon(1e-12));
}

TEST_CASE("ddpg_actor_loss: constant critic gives loss -c and zero actor gradient") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 3, 2, 2, 0.98, 23, 8);
    zero_net(*b.critic);
    b.critic->mutable_biases(b.critic->depth() - 1)[0] = 2.5;
    b.critic->refresh_transposes();
    Minibatch mb = random_minibatch(8, 3, 2, 2, 10);
    LossResult r = ddpg_actor_loss(b, mb);
    CHECK(r.loss == doctest::Approx(-2.5));
    CHECK(testutil::max_abs(flatten(r.grads)) == 0.0);
}

TEST_CASE("ddpg gradients match finite differences through the composed chains") {
    uint64_t seed = 100;
    int done = 0;
    while (done < 5) {
        AgentBundle b = AgentBundle::make(Algo::ddpg, 3, 2, 2, 0.98, seed++, 8);
        Minibatch mb = random_minibatch(4, 3, 2, 2, derive_seed(seed, 1));
        if (!batch_margins_ok(*b.critic, hstack(mb.states, mb.goals, mb.actions)) ||
            !batch_margins_ok(b.policy, hstack(mb.states, mb.goals)))
            continue;

        LossResult cr = ddpg_critic_loss(b, mb);
        Vec want_c = fd_grad_params(*b.critic, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.critic = net;
            return ddpg_critic_loss(tmp, mb).loss;
        });
        CHECK(rel_error(flatten(cr.grads), want_c) < 1e-4);

        LossResult ar = ddpg_actor_loss(b, mb);
        Vec want_a = fd_grad_params(b.policy, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.policy = net;
            return ddpg_actor_loss(tmp, mb).loss;
        });
        CHECK(rel_error(flatten(ar.grads), want_a) < 1e-4);

        // regularized variant used during training
        LossResult ar2 = ddpg_actor_loss(b, mb, 1.0);
        Vec want_a2 = fd_grad_params(b.policy, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.policy = net;
            return ddpg_actor_loss(tmp, mb, 1.0).loss;
        });
        CHECK(rel_error(flatten(ar2.grads), want_a2) < 1e-4);
        CHECK(ar2.loss > ar.loss);  // penalty is nonnegative
        ++done;
    }
}

TEST_CASE("gcsl_loss: exact imitation gives zero, hand value for one record") {
    AgentBundle b = AgentBundle::make(Algo::gcsl, 3, 2, 2, 0.98, 31, 8);
    Minibatch mb = random_minibatch(6, 3, 2, 2, 11);
    Matrix acts = b.act_batch(hstack(mb.states, mb.goals));
    mb.actions = acts;
    CHECK(gcsl_loss(b, mb).loss == doctest::Approx(0.0));

    zero_net(b.policy);
    Minibatch one = random_minibatch(1, 3, 2, 2, 12);
    one.actions(0, 0) = 1.0;
    one.actions(0, 1) = 0.0;
    // act = 0, squared error averaged over the two coordinates: 1 / D_a
    CHECK(gcsl_loss(b, one).loss == doctest::Approx(0.5));
}

TEST_CASE("gcsl_loss: nonnegative, gradient matches finite differences") {
    uint64_t seed = 200;
    int done = 0;
    while (done < 5) {
        AgentBundle b = AgentBundle::make(Algo::gcsl, 3, 2, 2, 0.98, seed++, 8);
        Minibatch mb = random_minibatch(4, 3, 2, 2, derive_seed(seed, 2));
        if (!batch_margins_ok(b.policy, hstack(mb.states, mb.goals))) continue;
        LossResult r = gcsl_loss(b, mb);
        CHECK(r.loss >= 0.0);
        Vec want = fd_grad_params(b.policy, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.policy = net;
            return gcsl_loss(tmp, mb).loss;
        });
        CHECK(rel_error(flatten(r.grads), want) < 1e-4);
        ++done;
    }
}

TEST_CASE("gofar: zero value net and neutral discriminator give L_V = 0") {
    PointReach env;
    AgentBundle b = AgentBundle::make(Algo::gofar, 4, 2, 2, 0.98, 41, 8);
    zero_net(b.aux->discriminator);  // sigmoid(0) = 0.5 -> R = 0
    zero_net(b.aux->value);
    Minibatch mb = random_minibatch(8, 4, 2, 2, 13);
    Minibatch init = random_minibatch(4, 4, 2, 2, 14);
    LossResult r = gofar_value_loss(b, env, mb, init);
    CHECK(r.loss == doctest::Approx(0.0));
    GoFarRewards rew = gofar_reward_estimate(b, env, mb.states, mb.goals);
    for (double x : rew.r) CHECK(x == doctest::Approx(0.0));
}

TEST_CASE("gofar: unit advantage weights reduce the policy loss to behaviour cloning") {
    PointReach env;
    AgentBundle b = AgentBundle::make(Algo::gofar, 4, 2, 2, 0.98, 43, 8);
    zero_net(b.aux->discriminator);
    zero_net(b.aux->value);  // y = 0 -> w = f*'(0) = 1
    Minibatch mb = random_minibatch(8, 4, 2, 2, 15);
    LossResult gofar_pi = gofar_policy_loss(b, env, mb);
    LossResult bc = gcsl_loss(b, mb);
    CHECK(gofar_pi.loss == doctest::Approx(bc.loss).epsilon(1e-12));
    CHECK(rel_error(flatten(gofar_pi.grads), flatten(bc.grads)) < 1e-12);
}

TEST_CASE("gofar: a separating discriminator drives L_c toward zero") {
    PointReach env;
    AgentBundle b = AgentBundle::make(Algo::gofar, 4, 2, 2, 0.98, 47, 8);
    // hand-built discriminator: logit = 30 - 600 * sum |ag - g|
    Mlp disc = Mlp::make({4, 8, 1}, 1);
    zero_net(disc);
    const int pairs[4][2] = {{0, 2}, {2, 0}, {1, 3}, {3, 1}};
    for (int r = 0; r < 4; ++r) {
        disc.mutable_weights(0)(r, pairs[r][0]) = 1.0;
        disc.mutable_weights(0)(r, pairs[r][1]) = -1.0;
    }
    for (int r = 0; r < 4; ++r) disc.mutable_weights(1)(0, r) = -600.0;
    disc.mutable_biases(1)[0] = 30.0;
    disc.refresh_transposes();
    b.aux->discriminator = disc;

    Minibatch mb = random_minibatch(8, 4, 2, 2, 16);
    for (int i = 0; i < 8; ++i) {  // negatives at achieved-goal distance >= 0.3
        mb.states(i, 0) = mb.goals(i, 0) + 0.3 + 0.1 * i;
        mb.states(i, 1) = mb.goals(i, 1);
    }
    Matrix positives(6, 2);
    Rng rng(9);
    for (auto& x : positives.a) x = rng.uniform(-0.5, 0.5);
    LossResult r = gofar_discriminator_loss(b, env, mb, positives);
    CHECK(r.loss < 1e-4);
    CHECK(r.loss > 0.0);
}

TEST_CASE("gofar gradients match finite differences for all three losses") {
    PointReach env;
    uint64_t seed = 300;
    int done = 0;
    while (done < 4) {
        AgentBundle b = AgentBundle::make(Algo::gofar, 4, 2, 2, 0.98, seed++, 8);
        Minibatch mb = random_minibatch(4, 4, 2, 2, derive_seed(seed, 3));
        Minibatch init = random_minibatch(3, 4, 2, 2, derive_seed(seed, 4));
        Matrix positives(4, 2);
        Rng rng(derive_seed(seed, 5));
        for (auto& x : positives.a) x = rng.uniform(-0.5, 0.5);

        Matrix disc_neg = hstack(achieved_batch(env, mb.states), mb.goals);
        Matrix disc_pos = hstack(positives, positives);
        if (!batch_margins_ok(b.aux->discriminator, disc_neg) ||
            !batch_margins_ok(b.aux->discriminator, disc_pos) ||
            !batch_margins_ok(b.aux->value, hstack(mb.states, mb.goals)) ||
            !batch_margins_ok(b.aux->value, hstack(mb.next_states, mb.goals)) ||
            !batch_margins_ok(b.aux->value, hstack(init.states, init.goals)) ||
            !batch_margins_ok(b.policy, hstack(mb.states, mb.goals)))
            continue;

        GoFarLosses all = gofar_losses(b, env, mb, init, positives);

        Vec want_d = fd_grad_params(b.aux->discriminator, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.aux->discriminator = net;
            return gofar_discriminator_loss(tmp, env, mb, positives).loss;
        });
        CHECK(rel_error(flatten(all.discriminator.grads), want_d) < 1e-4);

        Vec want_v = fd_grad_params(b.aux->value, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.aux->value = net;
            return gofar_value_loss(tmp, env, mb, init).loss;
        });
        CHECK(rel_error(flatten(all.value.grads), want_v) < 1e-4);

        Vec want_p = fd_grad_params(b.policy, [&](const Mlp& net) {
            AgentBundle tmp = b;
            tmp.policy = net;
            return gofar_policy_loss(tmp, env, mb).loss;
        });
        CHECK(rel_error(flatten(all.policy.grads), want_p) < 1e-4);
        ++done;
    }
}

TEST_CASE("bundle checkpoints round-trip bit exactly") {
    AgentBundle b = AgentBundle::make(Algo::gofar, 4, 2, 2, 0.98, 51, 8);
    b.pipeline = "gofar+simsr+sar";
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    b.save(ss);
    AgentBundle back = AgentBundle::load(ss);
    CHECK(serialized(back) == serialized(b));
    CHECK(back.pipeline == "gofar+simsr+sar");
    CHECK(back.algo == Algo::gofar);
    CHECK(back.aux.has_value());
}

TEST_CASE("train: zero learning rate leaves online parameters unchanged") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {1.0, 0.0}, 8, 61);
    AgentBundle b = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 62, 8);
    const std::string before_policy = [&] {
        std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
        b.policy.save(ss);
        return ss.str();
    }();
    TrainSchedule sched;
    sched.epochs = 1;
    sched.cycles = 2;
    sched.batches_per_cycle = 3;
    sched.batch_size = 16;
    sched.lr = 0.0;
    sched.eval_episodes = 2;
    TrainResult res = train(b, data, env, sched, 63);
    CHECK(!res.aborted);
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    b.policy.save(ss);
    CHECK(ss.str() == before_policy);
}

TEST_CASE("train: identical seeds give bit-identical checkpoints") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {0.9, 0.1}, 10, 71);
    TrainSchedule sched;
    sched.epochs = 2;
    sched.cycles = 2;
    sched.batches_per_cycle = 3;
    sched.batch_size = 16;
    sched.eval_episodes = 2;
    for (Algo algo : {Algo::ddpg, Algo::gcsl, Algo::gofar}) {
        AgentBundle a = AgentBundle::make(algo, 4, 2, 2, 0.98, 72, 8);
        AgentBundle b = AgentBundle::make(algo, 4, 2, 2, 0.98, 72, 8);
        TrainResult ra = train(a, data, env, sched, 73);
        TrainResult rb = train(b, data, env, sched, 73);
        CHECK(!ra.aborted);
        CHECK(serialized(a) == serialized(b));
        CHECK(ra.nature_curve == rb.nature_curve);
    }
}

TEST_CASE("train: exploding loss aborts with the last finite state restored") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {1.0, 0.0}, 8, 81);
    AgentBundle b = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 82, 8);
    TrainSchedule sched;
    sched.epochs = 2;
    sched.cycles = 3;
    sched.batches_per_cycle = 4;
    sched.batch_size = 16;
    sched.lr = 1e155;  // one step overflows the Q targets
    sched.eval_episodes = 1;
    TrainResult res = train(b, data, env, sched, 83);
    CHECK(res.aborted);
    CHECK(!res.message.empty());
    // the restored bundle is finite and usable
    Vec a = b.act({{0.1, 0.1, 0.0, 0.0}, {0.2, 0.2}});
    CHECK(all_finite(a));
}

TEST_CASE("train: per-epoch snapshots are recorded when asked") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {1.0, 0.0}, 6, 91);
    AgentBundle b = AgentBundle::make(Algo::gcsl, 4, 2, 2, 0.98, 92, 8);
    TrainSchedule sched;
    sched.epochs = 3;
    sched.cycles = 1;
    sched.batches_per_cycle = 2;
    sched.batch_size = 8;
    sched.eval_episodes = 1;
    sched.record_snapshots = true;
    TrainResult res = train(b, data, env, sched, 93);
    CHECK(res.snapshots.size() == 3);
    CHECK(res.nature_curve.size() == 3);
    CHECK(serialized(res.snapshots.back()) == serialized(b));
}
