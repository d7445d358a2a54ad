#pragma once

/// Offline dataset collection, persistence, and hindsight-relabeled minibatch
/// sampling. The binary container is canonical; CSV export is for inspection.

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "gcrl/core.hpp"
#include "gcrl/env.hpp"

namespace gcrl {

struct DatasetMeta {
    std::string env_id;
    int state_dim = 0;
    int goal_dim = 0;
    int action_dim = 0;
    double eta = 0.05;
    int horizon = 50;
    uint64_t seed = 0;
    double random_fraction = 1.0;
    double expert_fraction = 0.0;
    uint64_t episode_count = 0;
    uint64_t transition_count = 0;
};

struct OfflineDataset {
    DatasetMeta meta;
    std::vector<std::vector<Transition>> episodes;

    size_t size() const {
        size_t n = 0;
        for (const auto& e : episodes) n += e.size();
        return n;
    }

    const Transition& at(size_t episode, size_t t) const { return episodes[episode][t]; }

    void save(std::ostream& os) const {
        BinWriter w(os);
        w.u32(kMagic);
        w.u32(1);
        w.str(meta.env_id);
        w.u32(static_cast<uint32_t>(meta.state_dim));
        w.u32(static_cast<uint32_t>(meta.goal_dim));
        w.u32(static_cast<uint32_t>(meta.action_dim));
        w.f64(meta.eta);
        w.u32(static_cast<uint32_t>(meta.horizon));
        w.u64(meta.seed);
        w.f64(meta.random_fraction);
        w.f64(meta.expert_fraction);
        w.u64(meta.episode_count);
        w.u64(meta.transition_count);
        for (const auto& ep : episodes) {
            w.u32(static_cast<uint32_t>(ep.size()));
            for (const auto& t : ep) {
                w.vec(t.state);
                w.vec(t.action);
                w.vec(t.next_state);
                w.vec(t.goal);
                w.f64(t.reward);
            }
        }
    }

    static OfflineDataset load(std::istream& is) {
        BinReader r(is);
        require(r.u32() == kMagic, "OfflineDataset::load: bad magic");
        require(r.u32() == 1, "OfflineDataset::load: unsupported version");
        OfflineDataset d;
        d.meta.env_id = r.str();
        d.meta.state_dim = static_cast<int>(r.u32());
        d.meta.goal_dim = static_cast<int>(r.u32());
        d.meta.action_dim = static_cast<int>(r.u32());
        d.meta.eta = r.f64();
        d.meta.horizon = static_cast<int>(r.u32());
        d.meta.seed = r.u64();
        d.meta.random_fraction = r.f64();
        d.meta.expert_fraction = r.f64();
        d.meta.episode_count = r.u64();
        d.meta.transition_count = r.u64();
        d.episodes.resize(d.meta.episode_count);
        for (auto& ep : d.episodes) {
            const uint32_t len = r.u32();
            ep.resize(len);
            for (auto& t : ep) {
                t.state = r.vec(d.meta.state_dim);
                t.action = r.vec(d.meta.action_dim);
                t.next_state = r.vec(d.meta.state_dim);
                t.goal = r.vec(d.meta.goal_dim);
                t.reward = r.f64();
            }
        }
        require(d.size() == d.meta.transition_count, "OfflineDataset::load: size mismatch");
        return d;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        require(os.good(), "cannot open '", path, "' for writing");
        save(os);
        require(os.good(), "write failed for '", path, "'");
    }

    static OfflineDataset load_file(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        require(is.good(), "cannot open dataset file '", path, "'");
        return load(is);
    }

    /// Columns: episode,t,s[...],a[...],sn[...],g[...],r
    void export_csv(std::ostream& os) const {
        os << "episode,t";
        for (int i = 0; i < meta.state_dim; ++i) os << ",s" << i;
        for (int i = 0; i < meta.action_dim; ++i) os << ",a" << i;
        for (int i = 0; i < meta.state_dim; ++i) os << ",sn" << i;
        for (int i = 0; i < meta.goal_dim; ++i) os << ",g" << i;
        os << ",r\n";
        char buf[32];
        auto emit = [&](double x) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            os << ',' << buf;
        };
        for (size_t e = 0; e < episodes.size(); ++e)
            for (size_t t = 0; t < episodes[e].size(); ++t) {
                const Transition& tr = episodes[e][t];
                os << e << ',' << t;
                for (double x : tr.state) emit(x);
                for (double x : tr.action) emit(x);
                for (double x : tr.next_state) emit(x);
                for (double x : tr.goal) emit(x);
                emit(tr.reward);
                os << '\n';
            }
    }

    static constexpr uint32_t kMagic = 0x53444347;  // "GCDS"
};

struct PolicyMix {
    double random_fraction = 1.0;
    double expert_fraction = 0.0;
};

/// Deterministic expert-episode allocation: episode i runs the expert iff the
/// running quota floor((i+1)*f) advances at i. Gives an exact split, not a
/// Bernoulli draw.
inline bool expert_slot(size_t episode, double expert_fraction) {
    auto quota = [&](size_t n) { return static_cast<uint64_t>(std::floor(static_cast<double>(n) * expert_fraction + 1e-12)); };
    return quota(episode + 1) > quota(episode);
}

inline OfflineDataset collect_dataset(const Environment& env, PolicyMix mix, int episodes,
                                      uint64_t seed) {
    require(episodes > 0, "collect_dataset: episodes must be positive");
    require(std::abs(mix.random_fraction + mix.expert_fraction - 1.0) < 1e-9,
            "collect_dataset: mix fractions must sum to 1");
    OfflineDataset d;
    d.meta.env_id = env.id();
    d.meta.state_dim = env.state_dim();
    d.meta.goal_dim = env.goal_dim();
    d.meta.action_dim = env.action_dim();
    d.meta.eta = env.eta();
    d.meta.horizon = env.horizon();
    d.meta.seed = seed;
    d.meta.random_fraction = mix.random_fraction;
    d.meta.expert_fraction = mix.expert_fraction;
    d.episodes.reserve(episodes);
    for (int i = 0; i < episodes; ++i) {
        Rng rng(derive_seed(seed, 0xC0011Ec7, static_cast<uint64_t>(i)));
        const bool expert = expert_slot(static_cast<size_t>(i), mix.expert_fraction);
        Vec state = env.sample_initial_state(rng);
        Vec goal = env.sample_goal(rng);
        Policy policy;
        if (expert) {
            policy = [&env](const StateGoalTuple& o) { return env.expert_action(o.state, o.goal); };
        } else {
            policy = [&env, &rng](const StateGoalTuple&) {
                return rng.uniform_vec(env.action_dim(), -1.0, 1.0);
            };
        }
        d.episodes.push_back(rollout(env, policy, std::move(state), goal).episode);
    }
    d.meta.episode_count = d.episodes.size();
    d.meta.transition_count = d.size();
    return d;
}

/// One sampled training batch, stored one sample per row.
struct Minibatch {
    Matrix states;
    Matrix actions;
    Matrix next_states;
    Matrix goals;
    Vec rewards;

    int size() const { return states.rows; }
};

/// Uniform transition sampler with hindsight goal relabeling: with probability
/// future_ratio the goal is replaced by the achieved goal of a uniformly
/// chosen step from the same episode at or after the sampled one, and the
/// reward is recomputed.
class HindsightSampler {
public:
    HindsightSampler(const OfflineDataset& dataset, const Environment& env, double future_ratio)
        : data_(&dataset), env_(&env), future_ratio_(future_ratio) {
        require(future_ratio >= 0.0 && future_ratio <= 1.0,
                "HindsightSampler: future_ratio must lie in [0, 1]");
        for (size_t e = 0; e < dataset.episodes.size(); ++e)
            for (size_t t = 0; t < dataset.episodes[e].size(); ++t) flat_.push_back({e, t});
        require(!flat_.empty(), "HindsightSampler: empty dataset");
    }

    Minibatch sample(Rng& rng, int n) const {
        require(n > 0, "HindsightSampler::sample: empty minibatch");
        Minibatch b;
        b.states = Matrix(n, data_->meta.state_dim);
        b.actions = Matrix(n, data_->meta.action_dim);
        b.next_states = Matrix(n, data_->meta.state_dim);
        b.goals = Matrix(n, data_->meta.goal_dim);
        b.rewards.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto [e, t] = flat_[rng.index(flat_.size())];
            const auto& ep = data_->episodes[e];
            const Transition& tr = ep[t];
            Vec goal = tr.goal;
            double r = tr.reward;
            if (future_ratio_ > 0.0 && rng.uniform() < future_ratio_) {
                const size_t k = t + rng.index(ep.size() - t);
                goal = env_->achieved_goal(ep[k].next_state);
                r = reward(env_->achieved_goal(tr.next_state), goal, data_->meta.eta);
            }
            b.states.set_row(i, tr.state);
            b.actions.set_row(i, tr.action);
            b.next_states.set_row(i, tr.next_state);
            b.goals.set_row(i, goal);
            b.rewards[i] = r;
        }
        return b;
    }

    /// Episode-start states with their stored goals (GoFar's initial-state term).
    Minibatch sample_initial(Rng& rng, int n) const {
        require(n > 0, "HindsightSampler::sample_initial: empty minibatch");
        Minibatch b;
        b.states = Matrix(n, data_->meta.state_dim);
        b.actions = Matrix(n, data_->meta.action_dim);
        b.next_states = Matrix(n, data_->meta.state_dim);
        b.goals = Matrix(n, data_->meta.goal_dim);
        b.rewards.assign(n, 0.0);
        for (int i = 0; i < n; ++i) {
            const auto& ep = data_->episodes[rng.index(data_->episodes.size())];
            const Transition& tr = ep.front();
            b.states.set_row(i, tr.state);
            b.actions.set_row(i, tr.action);
            b.next_states.set_row(i, tr.next_state);
            b.goals.set_row(i, tr.goal);
        }
        return b;
    }

    double future_ratio() const { return future_ratio_; }
    const Environment& env() const { return *env_; }
    const OfflineDataset& dataset() const { return *data_; }

private:
    const OfflineDataset* data_;
    const Environment* env_;
    double future_ratio_;
    std::vector<std::pair<size_t, size_t>> flat_;
};

}  // namespace gcrl
