#pragma once

/// Experiment harness: attacked evaluation, attack grids, layer sweeps,
/// epoch-wise robustness curves, and report emission (JSON canonical, CSV and
/// plain-text table alongside). Fan-out across grid cells uses per-cell RNG
/// streams derived from (master seed, cell, seed), so parallel and serial runs
/// aggregate identically.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gcrl/agents.hpp"
#include "gcrl/arts.hpp"
#include "gcrl/attacks.hpp"
#include "gcrl/core.hpp"
#include "gcrl/dataset.hpp"
#include "gcrl/env.hpp"

namespace gcrl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Strict config helpers: unknown keys are errors.
// ---------------------------------------------------------------------------

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& context) {
    require(obj.is_object(), "config: '", context, "' must be an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw ConfigError(cat("config: unknown key '", key, "' in ", context));
}

inline json attack_spec_to_json(const AttackSpec& s) {
    return json{{"kind", to_string(s.kind)},
                {"eps_state", s.eps_state},
                {"eps_goal", s.eps_goal},
                {"steps", s.steps},
                {"step_size", s.step_size},
                {"negative_mode", to_string(s.negative_mode)},
                {"target", to_string(s.target)},
                {"layer", s.layer},
                {"projection", to_string(s.projection)},
                {"sign_grad", s.sign_grad}};
}

inline AttackSpec attack_spec_from_json(const json& j, const std::string& context = "attack") {
    check_keys(j,
               {"kind", "eps_state", "eps_goal", "steps", "step_size", "negative_mode", "target",
                "layer", "projection", "sign_grad"},
               context);
    AttackSpec s;
    if (j.contains("kind")) s.kind = attack_kind_from(j.at("kind").get<std::string>());
    if (j.contains("eps_state")) s.eps_state = j.at("eps_state").get<double>();
    if (j.contains("eps_goal")) s.eps_goal = j.at("eps_goal").get<double>();
    if (j.contains("steps")) s.steps = j.at("steps").get<int>();
    if (j.contains("step_size")) s.step_size = j.at("step_size").get<double>();
    if (j.contains("negative_mode"))
        s.negative_mode = negative_mode_from(j.at("negative_mode").get<std::string>());
    if (j.contains("target")) s.target = perturb_target_from(j.at("target").get<std::string>());
    if (j.contains("layer")) s.layer = j.at("layer").get<int>();
    if (j.contains("projection")) s.projection = projection_from(j.at("projection").get<std::string>());
    if (j.contains("sign_grad")) s.sign_grad = j.at("sign_grad").get<bool>();
    try {
        s.validate();
    } catch (const Error& e) {
        throw ConfigError(cat("config: invalid ", context, ": ", e.what()));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Adversaries over bundles
// ---------------------------------------------------------------------------

using AdversaryFactory = std::function<Adversary(uint64_t episode_seed)>;

/// Build the observation adversary for a spec against a bundle. SCR needs only
/// the policy; SA uses the Q critic (DDPG) or the value surface (GoFar) and is
/// unavailable for critic-free GCSL.
inline AdversaryFactory make_adversary_factory(const AgentBundle& bundle, AttackSpec spec) {
    spec.validate();
    switch (spec.kind) {
        case AttackKind::uniform:
            return [&bundle, spec](uint64_t seed) -> Adversary {
                auto rng = std::make_shared<Rng>(seed);
                return [spec, rng](const StateGoalTuple& t) { return uniform_attack(t, spec, *rng); };
            };
        case AttackKind::scr_fgsm:
            return [&bundle, spec](uint64_t) -> Adversary {
                return [&bundle, spec](const StateGoalTuple& t) {
                    return scr_fgsm(bundle.policy, t, spec);
                };
            };
        case AttackKind::scr_pgd:
            return [&bundle, spec](uint64_t) -> Adversary {
                return [&bundle, spec](const StateGoalTuple& t) {
                    return scr_pgd(bundle.policy, t, spec);
                };
            };
        case AttackKind::sa_fgsm:
        case AttackKind::sa_pgd: {
            CriticView cv;
            if (bundle.critic) {
                cv = CriticView{&bundle.policy, &*bundle.critic, true};
            } else if (bundle.aux) {
                cv = CriticView{nullptr, &bundle.aux->value, false};
            } else {
                throw ConfigError(cat("SA attack requires a critic; ", to_string(bundle.algo),
                                      " has none"));
            }
            return [cv, spec](uint64_t) -> Adversary {
                return [cv, spec](const StateGoalTuple& t) { return sa_attack(cv, t, spec); };
            };
        }
    }
    throw ConfigError("unknown attack kind");
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalStats {
    double mean = 0.0;
    double stddev = 0.0;
    Vec returns;
};

inline EvalStats summarize(Vec returns) {
    EvalStats s;
    s.returns = std::move(returns);
    const size_t n = s.returns.size();
    for (double r : s.returns) s.mean += r;
    if (n) s.mean /= static_cast<double>(n);
    if (n > 1) {
        double acc = 0.0;
        for (double r : s.returns) acc += (r - s.mean) * (r - s.mean);
        s.stddev = std::sqrt(acc / static_cast<double>(n - 1));
    }
    return s;
}

/// Mean/std discounted return over freshly sampled episodes; the adversary,
/// when present, perturbs the observation before the policy acts while
/// dynamics always see the true state. By default the attack runs at every
/// timestep; attack_first_k >= 0 restricts it to the first k steps of each
/// episode.
inline EvalStats evaluate(const Environment& env, const Policy& policy, double gamma,
                          int episodes, uint64_t seed,
                          const AdversaryFactory* adversary = nullptr, int attack_first_k = -1) {
    require(episodes > 0, "evaluate: episodes must be positive");
    Vec returns(episodes);
    for (int e = 0; e < episodes; ++e) {
        const uint64_t ep_seed = derive_seed(seed, static_cast<uint64_t>(e));
        Rng rng(ep_seed);
        Vec s0 = env.sample_initial_state(rng);
        Vec goal = env.sample_goal(rng);
        std::optional<Adversary> adv;
        if (adversary) {
            Adversary inner = (*adversary)(derive_seed(ep_seed, 0xA77ACULL));
            if (attack_first_k < 0) {
                adv = std::move(inner);
            } else {
                auto step = std::make_shared<int>(0);
                adv = [inner = std::move(inner), step, attack_first_k](const StateGoalTuple& t) {
                    return (*step)++ < attack_first_k ? inner(t) : t;
                };
            }
        }
        returns[e] = rollout(env, policy, std::move(s0), goal, env.horizon(), gamma,
                             adv ? &*adv : nullptr)
                         .discounted_return;
    }
    return summarize(std::move(returns));
}

inline EvalStats evaluate_bundle(const AgentBundle& bundle, const Environment& env,
                                 const std::optional<AttackSpec>& attack, int episodes,
                                 uint64_t seed, int attack_first_k = -1) {
    if (!attack) return evaluate(env, bundle.as_policy(), bundle.gamma, episodes, seed);
    AdversaryFactory f = make_adversary_factory(bundle, *attack);
    return evaluate(env, bundle.as_policy(), bundle.gamma, episodes, seed, &f, attack_first_k);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalCell {
    std::string attack;  // "nature" for the unattacked baseline
    std::optional<AttackSpec> spec;
    int seed = 0;
    double mean = 0.0;
    double stddev = 0.0;
    std::optional<double> degradation_pct;  // vs the same seed's nature return
    Vec returns;
};

struct EvalReport {
    std::string env_id;
    std::string pipeline;
    int episodes = 0;
    uint64_t master_seed = 0;
    std::vector<EvalCell> cells;
    std::string best_attack;  // most damaging attack by cross-seed mean

    double cross_seed_mean(const std::string& attack) const {
        double s = 0.0;
        int n = 0;
        for (const auto& c : cells)
            if (c.attack == attack) {
                s += c.mean;
                ++n;
            }
        return n ? s / n : 0.0;
    }

    std::vector<std::string> attack_names() const {
        std::vector<std::string> names;
        for (const auto& c : cells)
            if (c.attack != "nature" &&
                std::find(names.begin(), names.end(), c.attack) == names.end())
                names.push_back(c.attack);
        return names;
    }

    void flag_best_attack() {
        best_attack.clear();
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& name : attack_names()) {
            const double m = cross_seed_mean(name);
            if (m < worst) {
                worst = m;
                best_attack = name;
            }
        }
    }
};

inline json report_to_json(const EvalReport& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json jc{{"attack", c.attack}, {"seed", c.seed}, {"mean", c.mean}, {"std", c.stddev},
                {"returns", c.returns}};
        jc["degradation_pct"] = c.degradation_pct ? json(*c.degradation_pct) : json(nullptr);
        if (c.spec) jc["spec"] = attack_spec_to_json(*c.spec);
        cells.push_back(std::move(jc));
    }
    return json{{"env", r.env_id},       {"pipeline", r.pipeline}, {"episodes", r.episodes},
                {"master_seed", r.master_seed}, {"best_attack", r.best_attack}, {"cells", cells}};
}

inline EvalReport report_from_json(const json& j) {
    EvalReport r;
    r.env_id = j.at("env").get<std::string>();
    r.pipeline = j.at("pipeline").get<std::string>();
    r.episodes = j.at("episodes").get<int>();
    r.master_seed = j.at("master_seed").get<uint64_t>();
    r.best_attack = j.value("best_attack", "");
    for (const auto& jc : j.at("cells")) {
        EvalCell c;
        c.attack = jc.at("attack").get<std::string>();
        c.seed = jc.at("seed").get<int>();
        c.mean = jc.at("mean").get<double>();
        c.stddev = jc.at("std").get<double>();
        if (jc.contains("degradation_pct") && !jc.at("degradation_pct").is_null())
            c.degradation_pct = jc.at("degradation_pct").get<double>();
        c.returns = jc.at("returns").get<Vec>();
        if (jc.contains("spec")) c.spec = attack_spec_from_json(jc.at("spec"), "report spec");
        r.cells.push_back(std::move(c));
    }
    return r;
}

namespace detail {
inline std::string full_precision(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}
}  // namespace detail

inline void report_to_csv(const EvalReport& r, std::ostream& os) {
    os << "env,pipeline,attack,seed,mean,std,degradation_pct,returns\n";
    for (const auto& c : r.cells) {
        os << r.env_id << ',' << r.pipeline << ',' << c.attack << ',' << c.seed << ','
           << detail::full_precision(c.mean) << ',' << detail::full_precision(c.stddev) << ',';
        if (c.degradation_pct) os << detail::full_precision(*c.degradation_pct);
        os << ',';
        for (size_t i = 0; i < c.returns.size(); ++i) {
            if (i) os << '|';
            os << detail::full_precision(c.returns[i]);
        }
        os << '\n';
    }
}

/// Inverse of report_to_csv for the numeric payload (attack specs are carried
/// only by the JSON form).
inline EvalReport report_from_csv(std::istream& is) {
    EvalReport r;
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "report_from_csv: empty input");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        fields.push_back(cur);
        require(fields.size() == 8, "report_from_csv: bad row '", line, "'");
        r.env_id = fields[0];
        r.pipeline = fields[1];
        EvalCell c;
        c.attack = fields[2];
        c.seed = std::stoi(fields[3]);
        c.mean = std::stod(fields[4]);
        c.stddev = std::stod(fields[5]);
        if (!fields[6].empty()) c.degradation_pct = std::stod(fields[6]);
        std::string item;
        for (char ch : fields[7] + "|") {
            if (ch == '|') {
                if (!item.empty()) c.returns.push_back(std::stod(item));
                item.clear();
            } else {
                item += ch;
            }
        }
        r.cells.push_back(std::move(c));
    }
    r.flag_best_attack();
    return r;
}

/// Plain-text table: one block per perturbation target, rows = attack kind,
/// columns = negative mode, entries mean +- std across seeds.
inline std::string report_text_table(const EvalReport& r) {
    std::ostringstream os;
    os << "# " << r.env_id << " / " << r.pipeline << " (episodes per cell: " << r.episodes << ")\n";
    const double nature = r.cross_seed_mean("nature");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", nature);
    os << "nature return: " << buf << "\n";

    struct Agg {
        double sum = 0.0, sq = 0.0;
        int n = 0;
    };
    std::map<std::string, std::map<std::string, std::map<std::string, Agg>>> table;
    for (const auto& c : r.cells) {
        if (!c.spec) continue;
        Agg& a = table[to_string(c.spec->target)][to_string(c.spec->kind)]
                      [to_string(c.spec->negative_mode)];
        a.sum += c.mean;
        a.sq += c.mean * c.mean;
        ++a.n;
    }
    const std::vector<std::string> modes{"state", "goal", "state+goal"};
    for (const auto& [target, rows] : table) {
        os << "\n[perturbation target: " << target << "]\n";
        os << cat(std::string(10, ' '));
        for (const auto& m : modes) os << cat("  ", m, std::string(m.size() < 14 ? 14 - m.size() : 1, ' '));
        os << '\n';
        for (const auto& [kind, cols] : rows) {
            std::snprintf(buf, sizeof buf, "%-10s", kind.c_str());
            os << buf;
            for (const auto& m : modes) {
                auto it = cols.find(m);
                if (it == cols.end()) {
                    os << "  --            ";
                    continue;
                }
                const Agg& a = it->second;
                const double mean = a.sum / a.n;
                const double var = a.n > 1 ? std::max(0.0, (a.sq - a.n * mean * mean) / (a.n - 1)) : 0.0;
                std::snprintf(buf, sizeof buf, "  %6.2f+-%-5.2f ", mean, std::sqrt(var));
                os << buf;
            }
            os << '\n';
        }
    }
    if (!r.best_attack.empty()) os << "\nbest attack: " << r.best_attack << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Grid / sweep / curve drivers
// ---------------------------------------------------------------------------

/// The paper-shaped default: 5 attack kinds x 3 negative modes x 3 targets at
/// radius 0.1, 10-step PGD with step size 0.01, layer 1.
inline std::vector<AttackSpec> default_attack_grid() {
    std::vector<AttackSpec> grid;
    for (AttackKind kind : {AttackKind::uniform, AttackKind::sa_fgsm, AttackKind::sa_pgd,
                            AttackKind::scr_fgsm, AttackKind::scr_pgd})
        for (NegativeMode neg : {NegativeMode::state, NegativeMode::goal, NegativeMode::state_goal})
            for (PerturbTarget target : {PerturbTarget::state, PerturbTarget::goal, PerturbTarget::both}) {
                AttackSpec s;
                s.kind = kind;
                s.negative_mode = neg;
                s.target = target;
                grid.push_back(s);
            }
    return grid;
}

/// Full (attack x seed) cross-product over per-seed bundles, plus a nature
/// column; cells own derived RNG streams so results are independent of
/// execution order and worker count.
inline EvalReport attack_grid(const std::vector<AgentBundle>& bundles, const Environment& env,
                              const std::vector<AttackSpec>& grid, int episodes,
                              uint64_t master_seed, int workers = 1, int attack_first_k = -1) {
    require(!bundles.empty(), "attack_grid: no bundles");
    EvalReport report;
    report.env_id = env.id();
    report.pipeline = bundles.front().pipeline;
    report.episodes = episodes;
    report.master_seed = master_seed;
    const size_t seeds = bundles.size();
    const size_t total = (grid.size() + 1) * seeds;
    report.cells.resize(total);

    std::atomic<size_t> next{0};
    auto work = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= total) return;
            const size_t cell_idx = i / seeds;   // 0 = nature, then grid order
            const int seed_idx = static_cast<int>(i % seeds);
            const uint64_t stream = derive_seed(master_seed, cell_idx, seed_idx);
            EvalCell& c = report.cells[i];
            c.seed = seed_idx;
            if (cell_idx == 0) {
                c.attack = "nature";
                EvalStats s = evaluate_bundle(bundles[seed_idx], env, std::nullopt, episodes, stream);
                c.mean = s.mean;
                c.stddev = s.stddev;
                c.returns = std::move(s.returns);
            } else {
                const AttackSpec& spec = grid[cell_idx - 1];
                c.attack = spec.name();
                c.spec = spec;
                EvalStats s =
                    evaluate_bundle(bundles[seed_idx], env, spec, episodes, stream, attack_first_k);
                c.mean = s.mean;
                c.stddev = s.stddev;
                c.returns = std::move(s.returns);
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    // degradation vs the same seed's nature return
    for (size_t s = 0; s < seeds; ++s) {
        const double nature = report.cells[s].mean;
        for (size_t i = seeds; i < total; ++i)
            if (report.cells[i].seed == static_cast<int>(s) && nature > 0.0)
                report.cells[i].degradation_pct = 100.0 * (nature - report.cells[i].mean) / nature;
    }
    report.flag_best_attack();
    return report;
}

struct LayerSweepResult {
    std::vector<int> layers;
    std::vector<std::vector<double>> mean_returns;  // [layer][seed]
};

/// Same attack at different representation layers (Fig. 3-style comparison).
inline LayerSweepResult layer_sweep(const std::vector<AgentBundle>& bundles,
                                    const Environment& env, AttackSpec base,
                                    const std::vector<int>& layers, int episodes,
                                    uint64_t master_seed) {
    LayerSweepResult out;
    out.layers = layers;
    for (size_t li = 0; li < layers.size(); ++li) {
        AttackSpec spec = base;
        spec.layer = layers[li];
        std::vector<double> row;
        for (size_t s = 0; s < bundles.size(); ++s) {
            const uint64_t stream = derive_seed(master_seed, 0x5EEB + li, s);
            row.push_back(evaluate_bundle(bundles[s], env, spec, episodes, stream).mean);
        }
        out.mean_returns.push_back(std::move(row));
    }
    return out;
}

/// Frozen attack evaluated against the per-epoch snapshots of one training run.
inline std::vector<double> robustness_curve(const std::vector<AgentBundle>& snapshots,
                                            const Environment& env,
                                            const std::optional<AttackSpec>& attack, int episodes,
                                            uint64_t master_seed) {
    std::vector<double> curve;
    curve.reserve(snapshots.size());
    for (size_t e = 0; e < snapshots.size(); ++e)
        curve.push_back(
            evaluate_bundle(snapshots[e], env, attack, episodes, derive_seed(master_seed, 0xC04E, e))
                .mean);
    return curve;
}

// ---------------------------------------------------------------------------
// File emission
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '", path, "' for writing");
    os << content;
    require(os.good(), "write failed for '", path, "'");
}

/// Minimal SVG line plot for curve outputs.
inline std::string curve_to_svg(const std::vector<double>& values, const std::string& title) {
    const int w = 640, h = 360, margin = 40;
    double lo = 0.0, hi = 1.0;
    for (double v : values) hi = std::max(hi, v);
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
       << "</text>\n";
    os << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin << "' y2='"
       << h - margin << "' stroke='black'/>\n";
    os << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
       << h - margin << "' stroke='black'/>\n";
    if (values.size() > 1) {
        os << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
        for (size_t i = 0; i < values.size(); ++i) {
            const double x = margin + (w - 2.0 * margin) * i / (values.size() - 1);
            const double y = h - margin - (h - 2.0 * margin) * (values[i] - lo) / (hi - lo);
            os << x << ',' << y << ' ';
        }
        os << "'/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Writes report.json, report.csv, table.txt and a manifest enumerating them.
inline std::vector<std::string> emit_report(const EvalReport& report, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> files;
    const std::string base = dir + "/report";
    write_text_file(base + ".json", report_to_json(report).dump(2) + "\n");
    files.push_back(base + ".json");
    std::ostringstream csv;
    report_to_csv(report, csv);
    write_text_file(base + ".csv", csv.str());
    files.push_back(base + ".csv");
    write_text_file(dir + "/table.txt", report_text_table(report));
    files.push_back(dir + "/table.txt");
    json manifest{{"files", files}};
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
    files.push_back(dir + "/manifest.json");
    return files;
}

/// FNV-1a over the serialized bundle; used to verify evaluation never mutates
/// checkpoints.
inline uint64_t bundle_checksum(const AgentBundle& b) {
    std::ostringstream os(std::ios::binary);
    b.save(os);
    const std::string s = os.str();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace gcrl
