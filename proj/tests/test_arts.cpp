#include <doctest.h>

#include <sstream>

#include "gcrl/arts.hpp"
#include "test_helpers.hpp"

using namespace gcrl;

namespace {
std::string serialized(const AgentBundle& b) {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    b.save(ss);
    return ss.str();
}

TrainSchedule tiny_schedule() {
    TrainSchedule s;
    s.epochs = 1;
    s.cycles = 3;
    s.batches_per_cycle = 10;
    s.batch_size = 16;
    s.eval_episodes = 2;
    return s;
}
}  // namespace

TEST_CASE("defense config: SA augmentation and SAR-without-SimSR are rejected") {
    DefenseConfig d;
    d.scaa = true;
    d.augmentation.kind = AttackKind::sa_pgd;
    CHECK_THROWS_AS(d.validate(Algo::gcsl), Error);
    CHECK_THROWS_AS(d.validate(Algo::ddpg), Error);

    DefenseConfig s;
    s.sar = true;
    s.simsr = false;
    CHECK_THROWS_AS(s.validate(Algo::ddpg), Error);
}

TEST_CASE("pipeline names compose from the base tag and defenses") {
    DefenseConfig none;
    CHECK(compose_defense(Algo::ddpg, none).name() == "ddpg");
    DefenseConfig scaa;
    scaa.scaa = true;
    CHECK(compose_defense(Algo::ddpg, scaa).name() == "ddpg+scaa");
    DefenseConfig ss;
    ss.simsr = true;
    ss.sar = true;
    CHECK(compose_defense(Algo::gofar, ss).name() == "gofar+simsr+sar");
}

TEST_CASE("scaa with eps = 0 reproduces vanilla training bit for bit") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {0.9, 0.1}, 10, 301);
    TrainSchedule sched = tiny_schedule();

    for (Algo algo : {Algo::ddpg, Algo::gcsl, Algo::gofar}) {
        AgentBundle vanilla = AgentBundle::make(algo, 4, 2, 2, 0.98, 302, 16);
        AgentBundle defended = vanilla;
        TrainResult rv = train(vanilla, data, env, sched, 303);

        DefenseConfig defense;
        defense.scaa = true;
        defense.augmentation.eps_state = 0.0;
        defense.augmentation.eps_goal = 0.0;
        TrainResult rd = train_pipeline(defended, data, env, sched, defense, 303);

        CHECK(!rv.aborted);
        CHECK(!rd.aborted);
        defended.pipeline = vanilla.pipeline;  // provenance string differs by design
        CHECK(serialized(vanilla) == serialized(defended));
        CHECK(rv.nature_curve == rd.nature_curve);
    }
}

TEST_CASE("scaa training is reproducible under matched seeds") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {1.0, 0.0}, 8, 311);
    TrainSchedule sched = tiny_schedule();
    DefenseConfig defense;
    defense.scaa = true;

    AgentBundle a = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 312, 16);
    AgentBundle b = a;
    TrainResult ra = train_pipeline(a, data, env, sched, defense, 313);
    TrainResult rb = train_pipeline(b, data, env, sched, defense, 313);
    CHECK(!ra.aborted);
    CHECK(serialized(a) == serialized(b));
    CHECK(ra.nature_curve == rb.nature_curve);
}

TEST_CASE("scaa updates differ from vanilla once eps > 0") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {1.0, 0.0}, 8, 321);
    TrainSchedule sched = tiny_schedule();
    AgentBundle vanilla = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 322, 16);
    AgentBundle defended = vanilla;
    train(vanilla, data, env, sched, 323);
    DefenseConfig defense;
    defense.scaa = true;  // default radius 0.1
    train_pipeline(defended, data, env, sched, defense, 323);
    defended.pipeline = vanilla.pipeline;
    CHECK(serialized(vanilla) != serialized(defended));
}

TEST_CASE("encoder step with sar disabled equals a plain simsr adam step") {
    AgentBundle a = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 331, 16);
    AgentBundle b = a;
    Minibatch mb = testutil::random_minibatch(12, 4, 2, 2, 332);

    DefenseConfig defense;
    defense.simsr = true;
    Optimizers oa = Optimizers::make(a, {1e-3, 0.9, 0.999, 1e-8});
    Rng ra(333);
    EncoderStepResult res = sar_simsr_encoder_step(a, mb, defense, oa, ra);
    CHECK(res.sar_value == 0.0);

    // hand-rolled equivalent
    Optimizers ob = Optimizers::make(b, {1e-3, 0.9, 0.999, 1e-8});
    Rng rb(333);
    std::vector<size_t> pairing = rb.permutation(12);
    SimsrLossResult sl = simsr_loss(b.policy, b.policy_target, mb, pairing, b.gamma);
    CHECK(sl.loss == res.simsr_loss);
    ob.encoder.step(b.policy, sl.grads);
    CHECK(serialized(a) == serialized(b));
}

TEST_CASE("encoder step leaves actor head and critic untouched") {
    AgentBundle b = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 341, 16);
    AgentBundle before = b;
    Minibatch mb = testutil::random_minibatch(12, 4, 2, 2, 342);
    DefenseConfig defense;
    defense.simsr = true;
    defense.sar = true;
    Optimizers opt = Optimizers::make(b, {1e-3, 0.9, 0.999, 1e-8});
    Rng rng(343);
    sar_simsr_encoder_step(b, mb, defense, opt, rng);
    // layer 1 moved, everything above didn't
    CHECK(b.policy.weights(0).a != before.policy.weights(0).a);
    for (int l = 1; l < b.policy.depth(); ++l) {
        CHECK(b.policy.weights(l).a == before.policy.weights(l).a);
        CHECK(b.policy.biases(l) == before.policy.biases(l));
    }
    for (int l = 0; l < b.critic->depth(); ++l)
        CHECK(b.critic->weights(l).a == before.critic->weights(l).a);
}

TEST_CASE("simsr + sar loss decreases under full-batch descent on a fixed batch") {
    AgentBundle b = AgentBundle::make(Algo::gcsl, 4, 2, 2, 0.98, 351, 8);
    Minibatch mb = testutil::random_minibatch(24, 4, 2, 2, 352);
    Rng rng(353);
    std::vector<size_t> pairing = rng.permutation(24);
    SarConfig sar_cfg;
    SarDeltas deltas = sample_sar_deltas(rng, 4, 2, sar_cfg);  // frozen perturbations

    AdamState adam(b.policy, {1e-3, 0.9, 0.999, 1e-8});
    auto total_loss = [&]() {
        SimsrLossResult sl = simsr_loss(b.policy, b.policy_target, mb, pairing, b.gamma);
        double total = sl.loss;
        for (int k = 0; k < mb.size(); ++k) {
            StateGoalTuple ti{mb.states.row_vec(k), mb.goals.row_vec(k)};
            StateGoalTuple tj{mb.states.row_vec(static_cast<int>(pairing[k])),
                              mb.goals.row_vec(static_cast<int>(pairing[k]))};
            total += sar_regularizer(b.policy, ti, tj, sar_cfg, deltas).value / mb.size();
        }
        return total;
    };
    const double initial = total_loss();
    for (int step = 0; step < 100; ++step) {
        SimsrLossResult sl = simsr_loss(b.policy, b.policy_target, mb, pairing, b.gamma);
        for (int k = 0; k < mb.size(); ++k) {
            StateGoalTuple ti{mb.states.row_vec(k), mb.goals.row_vec(k)};
            StateGoalTuple tj{mb.states.row_vec(static_cast<int>(pairing[k])),
                              mb.goals.row_vec(static_cast<int>(pairing[k]))};
            SarResult sr = sar_regularizer(b.policy, ti, tj, sar_cfg, deltas);
            sl.grads.add_scaled(sr.grads, 1.0 / mb.size());
        }
        adam.step(b.policy, sl.grads);
    }
    const double final = total_loss();
    CHECK(final < initial);
}

TEST_CASE("simsr pipeline trains deterministically and changes the encoder") {
    PointReach env;
    OfflineDataset data = collect_dataset(env, {0.9, 0.1}, 8, 361);
    TrainSchedule sched = tiny_schedule();
    DefenseConfig defense;
    defense.simsr = true;
    defense.sar = true;

    AgentBundle a = AgentBundle::make(Algo::ddpg, 4, 2, 2, 0.98, 362, 16);
    AgentBundle b = a;
    TrainResult ra = train_pipeline(a, data, env, sched, defense, 363);
    TrainResult rb = train_pipeline(b, data, env, sched, defense, 363);
    CHECK(!ra.aborted);
    CHECK(a.pipeline == "ddpg+simsr+sar");
    CHECK(serialized(a) == serialized(b));
}
