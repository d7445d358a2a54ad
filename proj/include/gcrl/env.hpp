#pragma once

/// Desk-scale goal-reaching environments with analytic dynamics, the sparse
/// indicator reward, and episode rollout. Dynamics are pure functions of
/// (state, action): observation adversaries can only influence a trajectory
/// through the actions a policy picks.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gcrl/core.hpp"

namespace gcrl {

struct StateGoalTuple {
    Vec state;
    Vec goal;
};

/// Indicator reward: 1 iff ||achieved - goal||_inf <= eta (boundary inclusive).
inline double reward(const Vec& achieved, const Vec& goal, double eta) {
    require(achieved.size() == goal.size(), "reward: achieved dim ", achieved.size(),
            " vs goal dim ", goal.size());
    require(eta > 0.0, "reward: eta must be positive");
    return linf_dist(achieved, goal) <= eta ? 1.0 : 0.0;
}

struct Transition {
    Vec state;
    Vec action;  // stored post-clip
    Vec next_state;
    Vec goal;
    double reward = 0.0;
};

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string id() const = 0;
    virtual int state_dim() const = 0;
    virtual int goal_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual double eta() const { return 0.05; }
    virtual int horizon() const { return 50; }

    /// Deterministic transition rule; `action` arrives already clipped.
    virtual Vec dynamics(const Vec& state, const Vec& action) const = 0;

    /// Projection of a state onto the goal coordinates.
    virtual Vec achieved_goal(const Vec& state) const = 0;

    virtual Vec sample_initial_state(Rng& rng) const = 0;
    virtual Vec sample_goal(Rng& rng) const = 0;

    /// Scripted expert used for the expert share of offline datasets.
    virtual Vec expert_action(const Vec& state, const Vec& goal) const = 0;

    Vec clip_action(const Vec& action) const {
        require(static_cast<int>(action.size()) == action_dim(), "clip_action: action dim ",
                action.size(), ", expected ", action_dim());
        Vec a = action;
        for (auto& x : a) x = std::clamp(x, -1.0, 1.0);
        return a;
    }

    /// One step: next state by the pure dynamics, reward of the next achieved
    /// goal against the episode goal.
    std::pair<Vec, double> step(const Vec& state, const Vec& action, const Vec& goal) const {
        require(static_cast<int>(state.size()) == state_dim(), "step: state dim ", state.size(),
                ", expected ", state_dim());
        require(static_cast<int>(goal.size()) == goal_dim(), "step: goal dim ", goal.size(),
                ", expected ", goal_dim());
        Vec next = dynamics(state, clip_action(action));
        double r = reward(achieved_goal(next), goal, eta());
        return {std::move(next), r};
    }
};

using Policy = std::function<Vec(const StateGoalTuple&)>;

/// Observation map applied to the policy's input only (never to dynamics).
using Adversary = std::function<StateGoalTuple(const StateGoalTuple&)>;

struct RolloutResult {
    std::vector<Transition> episode;
    double discounted_return = 0.0;
};

inline RolloutResult rollout(const Environment& env, const Policy& policy, Vec state,
                             const Vec& goal, int horizon = -1, double gamma = 0.98,
                             const Adversary* adversary = nullptr) {
    const int T = horizon < 0 ? env.horizon() : horizon;
    RolloutResult out;
    out.episode.reserve(T);
    double discount = 1.0;
    for (int t = 0; t < T; ++t) {
        StateGoalTuple obs{state, goal};
        if (adversary) obs = (*adversary)(obs);
        Vec action = policy(obs);
        if (!all_finite(action))
            throw NumericalError(cat("rollout: policy emitted non-finite action at step ", t,
                                     " in ", env.id()));
        action = env.clip_action(action);
        auto [next, r] = env.step(state, action, goal);
        out.episode.push_back({state, action, next, goal, r});
        out.discounted_return += discount * r;
        discount *= gamma;
        state = std::move(next);
    }
    return out;
}

namespace detail {
inline Vec sub(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}
inline Vec scaled(const Vec& a, double c) {
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
    return r;
}
inline Vec clipped(Vec a, double lim) {
    for (auto& x : a) x = std::clamp(x, -lim, lim);
    return a;
}
}  // namespace detail

/// Velocity-integrator point mass; the goal is a target position.
/// v' = clip(v + 0.1 a, +-0.5), p' = p + 0.1 v'.
class PointReach final : public Environment {
public:
    explicit PointReach(int dim = 2) : dim_(dim) {}

    std::string id() const override { return dim_ == 2 ? "point_reach" : cat("point_reach", dim_, "d"); }
    int state_dim() const override { return 2 * dim_; }
    int goal_dim() const override { return dim_; }
    int action_dim() const override { return dim_; }

    Vec dynamics(const Vec& s, const Vec& a) const override {
        Vec next(s.size());
        for (int i = 0; i < dim_; ++i) {
            double v = std::clamp(s[dim_ + i] + 0.1 * a[i], -0.5, 0.5);
            next[dim_ + i] = v;
            next[i] = s[i] + 0.1 * v;
        }
        return next;
    }

    Vec achieved_goal(const Vec& s) const override { return Vec(s.begin(), s.begin() + dim_); }

    Vec sample_initial_state(Rng& rng) const override {
        Vec s(2 * dim_, 0.0);
        for (int i = 0; i < dim_; ++i) s[i] = rng.uniform(-0.25, 0.25);
        return s;  // starts at rest
    }

    Vec sample_goal(Rng& rng) const override { return rng.uniform_vec(dim_, -0.45, 0.45); }

    Vec expert_action(const Vec& s, const Vec& g) const override {
        return detail::clipped(detail::scaled(detail::sub(g, achieved_goal(s)), 5.0), 1.0);
    }

private:
    int dim_;
};

/// Gripper drags an object that moves with it while within contact radius 0.1
/// (contact checked on the pre-move gripper position). The goal is a target
/// object position.
class PointPush final : public Environment {
public:
    std::string id() const override { return "point_push"; }
    int state_dim() const override { return 4; }  // gripper xy, object xy
    int goal_dim() const override { return 2; }
    int action_dim() const override { return 2; }

    Vec dynamics(const Vec& s, const Vec& a) const override {
        Vec next(4);
        const double gx = s[0], gy = s[1], ox = s[2], oy = s[3];
        double nx = std::clamp(gx + 0.1 * a[0], -1.0, 1.0);
        double ny = std::clamp(gy + 0.1 * a[1], -1.0, 1.0);
        next[0] = nx;
        next[1] = ny;
        const bool contact = std::hypot(gx - ox, gy - oy) <= kContactRadius;
        next[2] = contact ? ox + (nx - gx) : ox;
        next[3] = contact ? oy + (ny - gy) : oy;
        return next;
    }

    Vec achieved_goal(const Vec& s) const override { return {s[2], s[3]}; }

    Vec sample_initial_state(Rng& rng) const override {
        Vec s(4);
        s[0] = rng.uniform(-0.5, -0.3);
        s[1] = rng.uniform(-0.1, 0.1);
        s[2] = rng.uniform(-0.15, 0.15);
        s[3] = rng.uniform(-0.15, 0.15);
        return s;
    }

    Vec sample_goal(Rng& rng) const override { return rng.uniform_vec(2, -0.6, 0.6); }

    Vec expert_action(const Vec& s, const Vec& g) const override {
        const Vec gr{s[0], s[1]}, ob{s[2], s[3]};
        if (norm2(detail::sub(gr, ob)) > kContactRadius)
            return detail::clipped(detail::scaled(detail::sub(ob, gr), 5.0), 1.0);
        return detail::clipped(detail::scaled(detail::sub(g, ob), 5.0), 1.0);
    }

    static constexpr double kContactRadius = 0.1;
};

/// Sliding task: the goal zone lies beyond the gripper's reach box, so the
/// object must be launched. Contact with an at-rest object converts the
/// gripper's motion into an object velocity impulse; the velocity then decays
/// by friction 0.95 per step. Because goals live outside the reach box, an
/// object inside the goal zone can never be re-contacted.
class PointSlide final : public Environment {
public:
    std::string id() const override { return "point_slide"; }
    int state_dim() const override { return 6; }  // gripper xy, object xy, object vxy
    int goal_dim() const override { return 2; }
    int action_dim() const override { return 2; }

    Vec dynamics(const Vec& s, const Vec& a) const override {
        Vec next(6);
        const double gx = s[0], gy = s[1], ox = s[2], oy = s[3], vx = s[4], vy = s[5];
        double nx = std::clamp(gx + 0.1 * a[0], kReachMin, kReachMax);
        double ny = std::clamp(gy + 0.1 * a[1], -1.2, 1.2);
        next[0] = nx;
        next[1] = ny;
        const bool contact = std::hypot(gx - ox, gy - oy) <= kContactRadius;
        const bool at_rest = std::hypot(vx, vy) <= kRestSpeed;
        double nvx, nvy;
        if (contact && at_rest) {
            nvx = (nx - gx) / 0.1;  // impulse equals the clipped action
            nvy = (ny - gy) / 0.1;
        } else {
            nvx = kFriction * vx;
            nvy = kFriction * vy;
        }
        next[4] = nvx;
        next[5] = nvy;
        next[2] = ox + 0.1 * nvx;
        next[3] = oy + 0.1 * nvy;
        return next;
    }

    Vec achieved_goal(const Vec& s) const override { return {s[2], s[3]}; }

    Vec sample_initial_state(Rng& rng) const override {
        Vec s(6, 0.0);
        s[0] = rng.uniform(-0.7, -0.5);
        s[1] = rng.uniform(-0.1, 0.1);
        s[2] = rng.uniform(-0.1, 0.1);
        s[3] = rng.uniform(-0.1, 0.1);
        return s;
    }

    Vec sample_goal(Rng& rng) const override {
        Vec g(2);
        g[0] = rng.uniform(0.5, 1.0);
        g[1] = rng.uniform(-0.4, 0.4);
        return g;
    }

    Vec expert_action(const Vec& s, const Vec& g) const override {
        const Vec gr{s[0], s[1]}, ob{s[2], s[3]};
        const double speed = std::hypot(s[4], s[5]);
        if (speed > kRestSpeed) return {0.0, 0.0};  // wait out the slide
        Vec dir = detail::sub(g, ob);
        const double n = norm2(dir);
        if (n < 1e-12) return {0.0, 0.0};
        // push gain tuned to the friction sum: an impulse v covers ~2v before resting
        Vec push = detail::clipped(detail::scaled(dir, 0.57), 1.0);
        if (norm2(detail::sub(gr, ob)) <= kContactRadius) return push;
        Vec behind{ob[0] - 0.12 * dir[0] / n, ob[1] - 0.12 * dir[1] / n};
        if (norm2(detail::sub(behind, gr)) <= 0.04) return push;  // step into contact
        return detail::clipped(detail::scaled(detail::sub(behind, gr), 5.0), 1.0);
    }

    static constexpr double kContactRadius = 0.1;
    static constexpr double kRestSpeed = 0.05;
    static constexpr double kFriction = 0.95;
    static constexpr double kReachMin = -1.2;
    static constexpr double kReachMax = 0.2;
};

inline std::shared_ptr<Environment> make_env(const std::string& id) {
    if (id == "point_reach") return std::make_shared<PointReach>();
    if (id == "point_push") return std::make_shared<PointPush>();
    if (id == "point_slide") return std::make_shared<PointSlide>();
    throw ConfigError(cat("unknown environment id '", id, "'"));
}

}  // namespace gcrl
