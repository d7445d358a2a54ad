#include <doctest.h>

#include "gcrl/attacks.hpp"
#include "test_helpers.hpp"

using namespace gcrl;
using testutil::fd_grad_input;
using testutil::rel_error;
using testutil::safe_case;

namespace {
AttackSpec make_spec(AttackKind kind, PerturbTarget target = PerturbTarget::both,
                     NegativeMode neg = NegativeMode::state_goal) {
    AttackSpec s;
    s.kind = kind;
    s.negative_mode = neg;
    s.target = target;
    return s;
}

// Single-layer zero-bias encoder: features are linear in the input.
Mlp linear_encoder(int in, int out, uint64_t seed) {
    Mlp net = Mlp::make({in, out}, seed);
    for (auto& b : net.mutable_biases(0)) b = 0.0;
    net.refresh_transposes();
    return net;
}
}  // namespace

TEST_CASE("negative_tuple: sign conventions per mode") {
    StateGoalTuple t{{1.0, -2.0}, {3.0}};
    StateGoalTuple n = negative_tuple(t, NegativeMode::state);
    CHECK(n.state == Vec{-1.0, 2.0});
    CHECK(n.goal == Vec{3.0});
    n = negative_tuple(t, NegativeMode::goal);
    CHECK(n.state == Vec{1.0, -2.0});
    CHECK(n.goal == Vec{-3.0});
    n = negative_tuple(t, NegativeMode::state_goal);
    CHECK(n.state == Vec{-1.0, 2.0});
    CHECK(n.goal == Vec{-3.0});
}

TEST_CASE("negative_tuple: applying state+goal twice is the identity") {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        StateGoalTuple t{rng.uniform_vec(4, -2.0, 2.0), rng.uniform_vec(2, -2.0, 2.0)};
        StateGoalTuple twice = negative_tuple(negative_tuple(t, NegativeMode::state_goal),
                                              NegativeMode::state_goal);
        CHECK(twice.state == t.state);
        CHECK(twice.goal == t.goal);
    }
    StateGoalTuple zero{{0.0, 0.0}, {0.0}};
    for (auto mode : {NegativeMode::state, NegativeMode::goal, NegativeMode::state_goal}) {
        StateGoalTuple n = negative_tuple(zero, mode);
        for (double x : n.state) CHECK(x == 0.0);
        for (double x : n.goal) CHECK(x == 0.0);
    }
}

TEST_CASE("project_linf: clamp, no-op inside, idempotent") {
    Vec anchor{0.5, -0.5};
    CHECK(project_linf({0.55, -0.45}, anchor, 0.1) == Vec{0.55, -0.45});
    CHECK(project_linf({0.7, -0.5}, anchor, 0.1) == Vec{0.6, -0.5});
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        Vec cand = rng.uniform_vec(2, -3.0, 3.0);
        Vec once = project_linf(cand, anchor, 0.1);
        CHECK(project_linf(once, anchor, 0.1) == once);
        CHECK(linf_dist(once, anchor) <= 0.1);
    }
}

TEST_CASE("logistic_loss: value, limits, convexity midpoint inequality") {
    CHECK(logistic_loss(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(logistic_loss(50.0) < 1e-20);
    CHECK(logistic_loss(50.0) > 0.0);
    CHECK(logistic_loss(-100.0) == doctest::Approx(100.0).epsilon(1e-10));
    Rng rng(12);
    for (int i = 0; i < 500; ++i) {
        const double v1 = rng.uniform(-30.0, 30.0);
        const double v2 = rng.uniform(-30.0, 30.0);
        CHECK((logistic_loss(v1) + logistic_loss(v2)) / 2.0 >=
              logistic_loss((v1 + v2) / 2.0) - 1e-12);
        CHECK(logistic_loss(v1) >= 0.0);
    }
    // monotone non-increasing
    double prev = logistic_loss(-5.0);
    for (double v = -4.5; v < 5.0; v += 0.5) {
        CHECK(logistic_loss(v) <= prev);
        prev = logistic_loss(v);
    }
}

TEST_CASE("scr_similarity_loss: orthogonal features give zero loss") {
    Mlp net = linear_encoder(4, 2, 2);
    net.mutable_weights(0).set_zero();
    net.mutable_weights(0)(0, 0) = 1.0;  // f = (x0, x1)
    net.mutable_weights(0)(1, 1) = 1.0;
    net.refresh_transposes();
    // adv -> (1, 0), negative <-s,-g> of (0, y) -> (0, -y): orthogonal
    StateGoalTuple adv{{1.0, 0.0, 0.0}, {0.0}};
    StateGoalTuple neg{{0.0, -2.0, 0.0}, {0.0}};
    ScrLossResult r = scr_similarity_loss(net, adv, neg, 1);
    CHECK(r.loss == 0.0);
}

TEST_CASE("scr_similarity_loss: bilinear in each feature argument") {
    Mlp net = linear_encoder(5, 3, 6);
    StateGoalTuple adv{{0.3, -0.4, 0.2}, {0.5, -0.1}};
    StateGoalTuple neg{{-0.2, 0.6, 0.1}, {0.4, 0.3}};
    const double base = scr_similarity_loss(net, adv, neg, 1).loss;
    // doubling the negative input doubles f(neg) only (linear, zero bias)
    StateGoalTuple neg2 = neg;
    for (auto& x : neg2.state) x *= 2.0;
    for (auto& x : neg2.goal) x *= 2.0;
    CHECK(scr_similarity_loss(net, adv, neg2, 1).loss == doctest::Approx(2.0 * base).epsilon(1e-12));
    // doubling the encoder scale doubles both sides
    Mlp net2 = net;
    for (auto& x : net2.mutable_weights(0).a) x *= 2.0;
    net2.refresh_transposes();
    CHECK(scr_similarity_loss(net2, adv, neg, 1).loss == doctest::Approx(4.0 * base).epsilon(1e-12));
}

TEST_CASE("scr_similarity_loss: input gradient matches finite differences") {
    uint64_t cursor = 5000;
    int done = 0;
    while (done < 25) {
        auto c = safe_case({6, 8, 8, 2}, cursor);  // policy-like net, attack layer 1 and 2
        for (int layer : {1, 2}) {
            StateGoalTuple adv{{c.input[0], c.input[1], c.input[2], c.input[3]},
                               {c.input[4], c.input[5]}};
            StateGoalTuple neg = negative_tuple(adv, NegativeMode::state_goal);
            ScrLossResult r = scr_similarity_loss(c.net, adv, neg, layer);
            Vec got = concat(r.grad_state, r.grad_goal);
            Vec want = fd_grad_input(
                [&](const Vec& x) {
                    StateGoalTuple a{{x[0], x[1], x[2], x[3]}, {x[4], x[5]}};
                    return scr_similarity_loss(c.net, a, neg, layer).loss;
                },
                c.input);
            CHECK(rel_error(got, want) < 1e-5);
        }
        ++done;
    }
}

TEST_CASE("scr_pgd: dead encoder (zero gradient) returns the clean tuple") {
    Mlp net = Mlp::make({4, 8, 2}, 3);
    for (auto& b : net.mutable_biases(0)) b = -100.0;  // every ReLU dead nearby
    net.refresh_transposes();
    StateGoalTuple t{{0.1, -0.2, 0.3}, {0.05}};
    StateGoalTuple v = scr_pgd(net, t, make_spec(AttackKind::scr_pgd));
    CHECK(v.state == t.state);
    CHECK(v.goal == t.goal);
}

TEST_CASE("scr attacks: ball containment and target masking over random tuples") {
    uint64_t cursor = 900;
    auto c = safe_case({6, 12, 12, 2}, cursor);
    Rng rng(31);
    for (int i = 0; i < 300; ++i) {
        StateGoalTuple t{rng.uniform_vec(4, -1.0, 1.0), rng.uniform_vec(2, -1.0, 1.0)};
        for (auto kind : {AttackKind::scr_fgsm, AttackKind::scr_pgd})
            for (auto target : {PerturbTarget::state, PerturbTarget::goal, PerturbTarget::both}) {
                AttackSpec spec = make_spec(kind, target);
                StateGoalTuple v = kind == AttackKind::scr_fgsm ? scr_fgsm(c.net, t, spec)
                                                                : scr_pgd(c.net, t, spec);
                CHECK(linf_dist(v.state, t.state) <= spec.eps_state);
                CHECK(linf_dist(v.goal, t.goal) <= spec.eps_goal);
                if (target == PerturbTarget::state) CHECK(v.goal == t.goal);
                if (target == PerturbTarget::goal) CHECK(v.state == t.state);
            }
    }
}

TEST_CASE("scr_fgsm equals one-step scr_pgd at alpha = eps with final projection") {
    uint64_t cursor = 1200;
    auto c = safe_case({6, 10, 10, 2}, cursor);
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        StateGoalTuple t{rng.uniform_vec(4, -1.0, 1.0), rng.uniform_vec(2, -1.0, 1.0)};
        AttackSpec fgsm = make_spec(AttackKind::scr_fgsm);
        AttackSpec pgd1 = make_spec(AttackKind::scr_pgd);
        pgd1.steps = 1;
        pgd1.step_size = pgd1.eps_state;  // matched settings
        StateGoalTuple a = scr_fgsm(c.net, t, fgsm);
        StateGoalTuple b = scr_pgd(c.net, t, pgd1);
        CHECK(linf_dist(a.state, b.state) <= 1e-12);
        CHECK(linf_dist(a.goal, b.goal) <= 1e-12);
    }
}

TEST_CASE("attacks are stationary: same inputs give identical outputs") {
    uint64_t cursor = 60;
    auto c = safe_case({6, 9, 7, 2}, cursor);
    StateGoalTuple t{{0.2, -0.3, 0.4, 0.0}, {-0.6, 0.1}};
    AttackSpec spec = make_spec(AttackKind::scr_pgd);
    StateGoalTuple a = scr_pgd(c.net, t, spec);
    StateGoalTuple b = scr_pgd(c.net, t, spec);
    CHECK(a.state == b.state);
    CHECK(a.goal == b.goal);
}

TEST_CASE("scr_pgd: non-finite gradients abort to the clean tuple, counted") {
    Mlp net = Mlp::make({4, 6, 2}, 5);
    // infinity on a goal column with negative mode `state`: the infinite unit
    // fires on both the adversarial and the negative tuple, so the cotangent
    // is infinite and survives the ReLU mask
    net.mutable_weights(0)(0, 3) = std::numeric_limits<double>::infinity();
    net.refresh_transposes();
    StateGoalTuple t{{0.5, 0.1, -0.3}, {0.2}};
    AttackStats stats;
    StateGoalTuple v =
        scr_pgd(net, t, make_spec(AttackKind::scr_pgd, PerturbTarget::both, NegativeMode::state),
                &stats);
    CHECK(v.state == t.state);
    CHECK(v.goal == t.goal);
    CHECK(stats.aborted == 1);
}

TEST_CASE("sa_attack: constant critic leaves the tuple clean") {
    Mlp policy = Mlp::make({6, 8, 2}, 9);
    Mlp critic = Mlp::make({8, 8, 1}, 10);
    for (auto& x : critic.mutable_weights(0).a) x = 0.0;
    critic.refresh_transposes();
    CriticView cv{&policy, &critic, true};
    StateGoalTuple t{{0.1, 0.2, 0.3, -0.1}, {0.4, 0.5}};
    StateGoalTuple v = sa_attack(cv, t, make_spec(AttackKind::sa_pgd));
    CHECK(v.state == t.state);
    CHECK(v.goal == t.goal);
}

TEST_CASE("sa_attack: ball containment and fgsm/pgd reduction") {
    uint64_t cursor = 2500;
    auto pc = safe_case({6, 8, 8, 2}, cursor);
    auto cc = safe_case({8, 8, 8, 1}, cursor);
    CriticView cv{&pc.net, &cc.net, true};
    Rng rng(41);
    for (int i = 0; i < 200; ++i) {
        StateGoalTuple t{rng.uniform_vec(4, -1.0, 1.0), rng.uniform_vec(2, -1.0, 1.0)};
        AttackSpec pgd = make_spec(AttackKind::sa_pgd);
        StateGoalTuple v = sa_attack(cv, t, pgd);
        CHECK(linf_dist(v.state, t.state) <= pgd.eps_state);
        CHECK(linf_dist(v.goal, t.goal) <= pgd.eps_goal);

        AttackSpec fgsm = make_spec(AttackKind::sa_fgsm);
        AttackSpec pgd1 = pgd;
        pgd1.steps = 1;
        pgd1.step_size = pgd1.eps_state;
        StateGoalTuple a = sa_attack(cv, t, fgsm);
        StateGoalTuple b = sa_attack(cv, t, pgd1);
        CHECK(linf_dist(a.state, b.state) <= 1e-12);
        CHECK(linf_dist(a.goal, b.goal) <= 1e-12);
    }
}

TEST_CASE("sa_attack: value-only critics work without a policy") {
    uint64_t cursor = 3000;
    auto vc = safe_case({6, 8, 1}, cursor);
    CriticView cv{nullptr, &vc.net, false};
    StateGoalTuple t{{0.1, -0.4, 0.2, 0.3}, {0.5, -0.2}};
    StateGoalTuple v = sa_attack(cv, t, make_spec(AttackKind::sa_pgd, PerturbTarget::state));
    CHECK(linf_dist(v.state, t.state) <= 0.1);
    CHECK(v.goal == t.goal);
}

TEST_CASE("uniform_attack: zero radius is a no-op, seeded draws repeat") {
    StateGoalTuple t{{0.4, -0.2}, {0.1}};
    AttackSpec spec = make_spec(AttackKind::uniform);
    spec.eps_state = spec.eps_goal = 0.0;
    Rng rng(1);
    StateGoalTuple v = uniform_attack(t, spec, rng);
    CHECK(v.state == t.state);
    CHECK(v.goal == t.goal);

    spec.eps_state = spec.eps_goal = 0.1;
    Rng r1(33), r2(33);
    StateGoalTuple a = uniform_attack(t, spec, r1);
    StateGoalTuple b = uniform_attack(t, spec, r2);
    CHECK(a.state == b.state);
    CHECK(a.goal == b.goal);
    CHECK(a.state != t.state);
}

TEST_CASE("uniform_attack: per-coordinate noise fills the radius") {
    StateGoalTuple t{{0.0, 0.0}, {0.0}};
    AttackSpec spec = make_spec(AttackKind::uniform);
    Rng rng(7);
    double max_seen = 0.0;
    for (int i = 0; i < 100000; ++i) {
        StateGoalTuple v = uniform_attack(t, spec, rng);
        for (double x : v.state) {
            CHECK(std::abs(x) <= 0.1);
            max_seen = std::max(max_seen, std::abs(x));
        }
    }
    CHECK(max_seen > 0.0995);
}

TEST_CASE("scr_pgd_batch matches the per-tuple attack") {
    uint64_t cursor = 4000;
    auto c = safe_case({6, 10, 10, 2}, cursor);
    Rng rng(19);
    const int n = 16;
    Matrix S(n, 4), G(n, 2);
    for (auto& x : S.a) x = rng.uniform(-1.0, 1.0);
    for (auto& x : G.a) x = rng.uniform(-1.0, 1.0);
    for (auto spec : {make_spec(AttackKind::scr_pgd, PerturbTarget::state, NegativeMode::state),
                      make_spec(AttackKind::scr_pgd, PerturbTarget::both, NegativeMode::state_goal),
                      make_spec(AttackKind::scr_fgsm, PerturbTarget::both, NegativeMode::goal)}) {
        BatchAttackResult out = scr_pgd_batch(c.net, S, G, spec);
        CHECK(!out.fell_back);
        for (int i = 0; i < n; ++i) {
            StateGoalTuple t{S.row_vec(i), G.row_vec(i)};
            StateGoalTuple v = spec.kind == AttackKind::scr_fgsm ? scr_fgsm(c.net, t, spec)
                                                                 : scr_pgd(c.net, t, spec);
            CHECK(linf_dist(out.states.row_vec(i), v.state) <= 1e-12);
            CHECK(linf_dist(out.goals.row_vec(i), v.goal) <= 1e-12);
        }
    }
}
