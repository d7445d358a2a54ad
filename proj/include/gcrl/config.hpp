#pragma once

/// Declarative experiment configuration: one JSON document with env / dataset /
/// agent / defense / schedule / train / attack / sweep / curve / report blocks.
/// Unknown keys anywhere are errors. The GCRL_MASTER_SEED environment variable
/// overrides the configured master seed.

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcrl/bench.hpp"

namespace gcrl {

struct ExperimentConfig {
    uint64_t master_seed = 1;
    std::string env_id = "point_reach";

    // dataset block
    std::string dataset_path = "dataset.bin";
    int dataset_episodes = 1000;
    PolicyMix mix{0.9, 0.1};
    bool dataset_export_csv = false;

    // agent block
    Algo algo = Algo::ddpg;
    double gamma = 0.98;
    int width = 256;
    bool freeze_biases = false;

    DefenseConfig defense;
    TrainSchedule schedule;

    // train block
    int seeds = 5;
    std::string checkpoint_dir = "checkpoints";

    // attack block
    bool use_default_grid = true;
    std::vector<AttackSpec> grid;
    int attack_episodes = 10;
    int workers = 1;
    int attack_first_k = -1;  // attack only the first k steps; -1 = every step

    // sweep block
    std::vector<int> sweep_layers{1, 2, 3};
    AttackSpec sweep_attack;
    int sweep_episodes = 10;

    // curve block
    std::optional<AttackSpec> curve_attack;
    int curve_episodes = 10;

    std::string out_dir = "out";

    std::vector<AttackSpec> attack_grid_specs() const {
        return use_default_grid ? default_attack_grid() : grid;
    }
    Pipeline pipeline() const { return compose_defense(algo, defense); }
};

/// Defense manifest in the config-file schema (round-trips through
/// parse_experiment_config's defense block).
inline json defense_config_to_json(const DefenseConfig& d) {
    return json{{"scaa", d.scaa},
                {"augmentation", attack_spec_to_json(d.augmentation)},
                {"adversarial_only", d.adversarial_only},
                {"simsr", d.simsr},
                {"sar", d.sar},
                {"sar_coeff", d.sar_coeff},
                {"sar_radius", d.sar_config.radius},
                {"sar_beta", d.sar_config.beta}};
}

inline ExperimentConfig parse_experiment_config(const json& j) {
    check_keys(j,
               {"master_seed", "env", "dataset", "agent", "defense", "schedule", "train", "attack",
                "sweep", "curve", "report"},
               "top level");
    ExperimentConfig c;
    if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<uint64_t>();
    if (const char* env_seed = std::getenv("GCRL_MASTER_SEED"))
        c.master_seed = std::strtoull(env_seed, nullptr, 10);

    if (j.contains("env")) {
        const json& e = j.at("env");
        check_keys(e, {"id"}, "env");
        if (e.contains("id")) c.env_id = e.at("id").get<std::string>();
    }
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, {"path", "episodes", "random_fraction", "expert_fraction", "export_csv"},
                   "dataset");
        if (d.contains("path")) c.dataset_path = d.at("path").get<std::string>();
        if (d.contains("episodes")) c.dataset_episodes = d.at("episodes").get<int>();
        if (d.contains("random_fraction")) c.mix.random_fraction = d.at("random_fraction").get<double>();
        if (d.contains("expert_fraction")) c.mix.expert_fraction = d.at("expert_fraction").get<double>();
        if (d.contains("export_csv")) c.dataset_export_csv = d.at("export_csv").get<bool>();
    }
    if (j.contains("agent")) {
        const json& a = j.at("agent");
        check_keys(a, {"algorithm", "gamma", "width", "freeze_biases"}, "agent");
        if (a.contains("algorithm")) c.algo = algo_from(a.at("algorithm").get<std::string>());
        if (a.contains("gamma")) c.gamma = a.at("gamma").get<double>();
        if (a.contains("width")) c.width = a.at("width").get<int>();
        if (a.contains("freeze_biases")) c.freeze_biases = a.at("freeze_biases").get<bool>();
    }
    if (j.contains("defense")) {
        const json& d = j.at("defense");
        check_keys(d,
                   {"scaa", "simsr", "sar", "sar_coeff", "sar_radius", "sar_beta",
                    "adversarial_only", "augmentation"},
                   "defense");
        if (d.contains("scaa")) c.defense.scaa = d.at("scaa").get<bool>();
        if (d.contains("simsr")) c.defense.simsr = d.at("simsr").get<bool>();
        if (d.contains("sar")) c.defense.sar = d.at("sar").get<bool>();
        if (d.contains("sar_coeff")) c.defense.sar_coeff = d.at("sar_coeff").get<double>();
        if (d.contains("sar_radius")) c.defense.sar_config.radius = d.at("sar_radius").get<double>();
        if (d.contains("sar_beta")) c.defense.sar_config.beta = d.at("sar_beta").get<double>();
        if (d.contains("adversarial_only"))
            c.defense.adversarial_only = d.at("adversarial_only").get<bool>();
        if (d.contains("augmentation"))
            c.defense.augmentation = attack_spec_from_json(d.at("augmentation"), "defense.augmentation");
        try {
            c.defense.validate(c.algo);
        } catch (const Error& e) {
            throw ConfigError(cat("config: ", e.what()));
        }
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s,
                   {"epochs", "cycles", "batches_per_cycle", "batch_size", "lr", "tau",
                    "future_ratio", "action_l2", "clip_targets", "eval_episodes", "record_snapshots"},
                   "schedule");
        if (s.contains("epochs")) c.schedule.epochs = s.at("epochs").get<int>();
        if (s.contains("cycles")) c.schedule.cycles = s.at("cycles").get<int>();
        if (s.contains("batches_per_cycle"))
            c.schedule.batches_per_cycle = s.at("batches_per_cycle").get<int>();
        if (s.contains("batch_size")) c.schedule.batch_size = s.at("batch_size").get<int>();
        if (s.contains("lr")) c.schedule.lr = s.at("lr").get<double>();
        if (s.contains("tau")) c.schedule.tau = s.at("tau").get<double>();
        if (s.contains("future_ratio")) c.schedule.future_ratio = s.at("future_ratio").get<double>();
        if (s.contains("action_l2")) c.schedule.action_l2 = s.at("action_l2").get<double>();
        if (s.contains("clip_targets")) c.schedule.clip_targets = s.at("clip_targets").get<bool>();
        if (s.contains("eval_episodes")) c.schedule.eval_episodes = s.at("eval_episodes").get<int>();
        if (s.contains("record_snapshots"))
            c.schedule.record_snapshots = s.at("record_snapshots").get<bool>();
        try {
            c.schedule.validate();
        } catch (const Error& e) {
            throw ConfigError(cat("config: ", e.what()));
        }
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, {"seeds", "checkpoint_dir"}, "train");
        if (t.contains("seeds")) c.seeds = t.at("seeds").get<int>();
        if (t.contains("checkpoint_dir")) c.checkpoint_dir = t.at("checkpoint_dir").get<std::string>();
        require(c.seeds >= 1, "config: train.seeds must be >= 1");
    }
    if (j.contains("attack")) {
        const json& a = j.at("attack");
        check_keys(a, {"grid", "episodes", "workers", "first_k_steps"}, "attack");
        if (a.contains("grid")) {
            if (a.at("grid").is_string()) {
                const std::string g = a.at("grid").get<std::string>();
                if (g != "default") throw ConfigError(cat("config: unknown grid preset '", g, "'"));
                c.use_default_grid = true;
            } else {
                c.use_default_grid = false;
                for (const auto& js : a.at("grid"))
                    c.grid.push_back(attack_spec_from_json(js, "attack.grid entry"));
                if (c.grid.empty()) throw ConfigError("config: attack.grid is empty");
            }
        }
        if (a.contains("episodes")) c.attack_episodes = a.at("episodes").get<int>();
        if (a.contains("workers")) c.workers = a.at("workers").get<int>();
        if (a.contains("first_k_steps")) c.attack_first_k = a.at("first_k_steps").get<int>();
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        check_keys(s, {"layers", "attack", "episodes"}, "sweep");
        if (s.contains("layers")) c.sweep_layers = s.at("layers").get<std::vector<int>>();
        if (s.contains("attack")) c.sweep_attack = attack_spec_from_json(s.at("attack"), "sweep.attack");
        if (s.contains("episodes")) c.sweep_episodes = s.at("episodes").get<int>();
    }
    if (j.contains("curve")) {
        const json& s = j.at("curve");
        check_keys(s, {"attack", "episodes"}, "curve");
        if (s.contains("attack")) c.curve_attack = attack_spec_from_json(s.at("attack"), "curve.attack");
        if (s.contains("episodes")) c.curve_episodes = s.at("episodes").get<int>();
    }
    if (j.contains("report")) {
        const json& rpt = j.at("report");
        check_keys(rpt, {"out_dir"}, "report");
        if (rpt.contains("out_dir")) c.out_dir = rpt.at("out_dir").get<std::string>();
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw ConfigError(cat("cannot open config file '", path, "'"));
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(cat("config parse error in '", path, "': ", e.what()));
    }
    try {
        return parse_experiment_config(j);
    } catch (const json::exception& e) {
        throw ConfigError(cat("config error in '", path, "': ", e.what()));
    }
}

}  // namespace gcrl
