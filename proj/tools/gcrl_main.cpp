// Command-line front end: dataset collection, pipeline training, attack grids,
// layer sweeps, robustness curves, and report re-emission, all driven by one
// declarative JSON config.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "gcrl/gcrl.hpp"

namespace fs = std::filesystem;
using namespace gcrl;

namespace {

uint64_t collect_seed(const ExperimentConfig& c) { return derive_seed(c.master_seed, 0xD5C0); }
uint64_t bundle_seed(const ExperimentConfig& c, int i) { return derive_seed(c.master_seed, 0xB0D1, i); }
uint64_t train_seed(const ExperimentConfig& c, int i) { return derive_seed(c.master_seed, 0x74A1, i); }
uint64_t attack_seed(const ExperimentConfig& c) { return derive_seed(c.master_seed, 0xA77A); }

std::string checkpoint_path(const ExperimentConfig& c, const std::string& pipeline, int seed) {
    return cat(c.checkpoint_dir, "/", pipeline, "_seed", seed, ".ckpt");
}

OfflineDataset load_dataset_checked(const ExperimentConfig& c, const Environment& env) {
    if (!fs::exists(c.dataset_path))
        throw ConfigError(cat("dataset file '", c.dataset_path, "' does not exist; run collect first"));
    OfflineDataset data = OfflineDataset::load_file(c.dataset_path);
    if (data.meta.env_id != env.id())
        throw ConfigError(cat("dataset env '", data.meta.env_id, "' does not match configured env '",
                              env.id(), "'"));
    return data;
}

std::vector<AgentBundle> load_bundles(const ExperimentConfig& c, const Environment& env) {
    const std::string pipeline = c.pipeline().name();
    std::vector<AgentBundle> bundles;
    for (int i = 0; i < c.seeds; ++i) {
        const std::string path = checkpoint_path(c, pipeline, i);
        if (!fs::exists(path))
            throw ConfigError(cat("checkpoint '", path, "' does not exist; run train first"));
        AgentBundle b = AgentBundle::load_file(path);
        if (b.state_dim != env.state_dim() || b.goal_dim != env.goal_dim() ||
            b.action_dim != env.action_dim())
            throw ConfigError(cat("checkpoint '", path, "' dims do not match env '", env.id(), "'"));
        bundles.push_back(std::move(b));
    }
    return bundles;
}

int cmd_collect(const ExperimentConfig& c) {
    auto env = make_env(c.env_id);
    OfflineDataset data = collect_dataset(*env, c.mix, c.dataset_episodes, collect_seed(c));
    if (const auto dir = fs::path(c.dataset_path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    data.save_file(c.dataset_path);
    if (c.dataset_export_csv) {
        std::ofstream os(c.dataset_path + ".csv");
        data.export_csv(os);
    }
    std::printf("collected %llu transitions (%llu episodes) from %s -> %s\n",
                static_cast<unsigned long long>(data.meta.transition_count),
                static_cast<unsigned long long>(data.meta.episode_count), env->id().c_str(),
                c.dataset_path.c_str());
    return 0;
}

int cmd_train(const ExperimentConfig& c) {
    auto env = make_env(c.env_id);
    OfflineDataset data = load_dataset_checked(c, *env);
    fs::create_directories(c.checkpoint_dir);
    const std::string pipeline = c.pipeline().name();
    for (int i = 0; i < c.seeds; ++i) {
        AgentBundle bundle = AgentBundle::make(c.algo, env->state_dim(), env->goal_dim(),
                                               env->action_dim(), c.gamma, bundle_seed(c, i),
                                               c.width, c.freeze_biases);
        TrainResult res = train_pipeline(bundle, data, *env, c.schedule, c.defense, train_seed(c, i));
        const std::string path = checkpoint_path(c, pipeline, i);
        bundle.save_file(path);
        {
            std::ofstream os(path + "_curve.csv");
            os << "epoch,nature_return\n";
            for (size_t e = 0; e < res.nature_curve.size(); ++e)
                os << e << ',' << res.nature_curve[e] << '\n';
        }
        for (size_t e = 0; e < res.snapshots.size(); ++e)
            res.snapshots[e].save_file(cat(c.checkpoint_dir, "/", pipeline, "_seed", i, "_epoch", e, ".ckpt"));
        if (res.aborted)
            throw NumericalError(cat("training seed ", i, " ", res.message,
                                     "; checkpoint of last finite state written to ", path));
        std::printf("trained %s seed %d: nature return %.3f -> %s\n", pipeline.c_str(), i,
                    res.nature_curve.empty() ? 0.0 : res.nature_curve.back(), path.c_str());
    }
    return 0;
}

int cmd_attack(const ExperimentConfig& c) {
    auto env = make_env(c.env_id);
    std::vector<AgentBundle> bundles = load_bundles(c, *env);
    std::vector<uint64_t> sums;
    for (const auto& b : bundles) sums.push_back(bundle_checksum(b));
    EvalReport report = attack_grid(bundles, *env, c.attack_grid_specs(), c.attack_episodes,
                                    attack_seed(c), c.workers, c.attack_first_k);
    for (size_t i = 0; i < bundles.size(); ++i)
        require(bundle_checksum(bundles[i]) == sums[i],
                "attack evaluation mutated checkpoint for seed ", i);
    auto files = emit_report(report, c.out_dir);
    std::printf("%s", report_text_table(report).c_str());
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return 0;
}

int cmd_sweep(const ExperimentConfig& c) {
    auto env = make_env(c.env_id);
    std::vector<AgentBundle> bundles = load_bundles(c, *env);
    LayerSweepResult res = layer_sweep(bundles, *env, c.sweep_attack, c.sweep_layers,
                                       c.sweep_episodes, derive_seed(c.master_seed, 0x5EE9));
    fs::create_directories(c.out_dir);
    std::ofstream os(c.out_dir + "/sweep.csv");
    os << "layer,seed,mean_return\n";
    for (size_t li = 0; li < res.layers.size(); ++li)
        for (size_t s = 0; s < res.mean_returns[li].size(); ++s)
            os << res.layers[li] << ',' << s << ',' << res.mean_returns[li][s] << '\n';
    std::printf("layer sweep over %zu layers x %d seeds -> %s/sweep.csv\n", res.layers.size(),
                c.seeds, c.out_dir.c_str());
    return 0;
}

int cmd_curve(const ExperimentConfig& c) {
    auto env = make_env(c.env_id);
    OfflineDataset data = load_dataset_checked(c, *env);
    AgentBundle bundle = AgentBundle::make(c.algo, env->state_dim(), env->goal_dim(),
                                           env->action_dim(), c.gamma, bundle_seed(c, 0), c.width,
                                           c.freeze_biases);
    TrainSchedule sched = c.schedule;
    sched.record_snapshots = true;
    TrainResult res = train_pipeline(bundle, data, *env, sched, c.defense, train_seed(c, 0));
    if (res.aborted) throw NumericalError(res.message);
    std::vector<double> attacked = robustness_curve(res.snapshots, *env, c.curve_attack,
                                                    c.curve_episodes, derive_seed(c.master_seed, 0xC4E));
    fs::create_directories(c.out_dir);
    {
        std::ofstream os(c.out_dir + "/curve.csv");
        os << "epoch,attacked_return,nature_return\n";
        for (size_t e = 0; e < attacked.size(); ++e)
            os << e << ',' << attacked[e] << ',' << res.nature_curve[e] << '\n';
    }
    const std::string title = c.pipeline().name() + (c.curve_attack ? " under " + c.curve_attack->name() : " nature");
    write_text_file(c.out_dir + "/curve.svg", curve_to_svg(attacked, title));
    std::printf("robustness curve over %zu epochs -> %s/curve.csv\n", attacked.size(),
                c.out_dir.c_str());
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_dir) {
    std::ifstream is(in_path);
    if (!is.good()) throw ConfigError(cat("cannot open report '", in_path, "'"));
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(cat("report parse error: ", e.what()));
    }
    EvalReport report = report_from_json(j);
    auto files = emit_report(report, out_dir);
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gcrl: goal-conditioned RL robustness lab"};
    app.require_subcommand(1);

    std::string config_path, report_in, report_out = "out";
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    };
    CLI::App* collect = app.add_subcommand("collect", "generate an offline dataset");
    add_config(collect);
    CLI::App* train = app.add_subcommand("train", "train a pipeline across seeds");
    add_config(train);
    CLI::App* attack = app.add_subcommand("attack", "evaluate an attack grid against checkpoints");
    add_config(attack);
    CLI::App* sweep = app.add_subcommand("sweep-layers", "attack the same agents at different layers");
    add_config(sweep);
    CLI::App* curve = app.add_subcommand("curve", "epoch-wise attacked-return curve");
    add_config(curve);
    CLI::App* report = app.add_subcommand("report", "re-emit CSV/table from a report JSON");
    report->add_option("--in", report_in, "report.json path")->required();
    report->add_option("--out-dir", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (report->parsed()) return cmd_report(report_in, report_out);
        const ExperimentConfig cfg = load_experiment_config(config_path);
        if (collect->parsed()) return cmd_collect(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (attack->parsed()) return cmd_attack(cfg);
        if (sweep->parsed()) return cmd_sweep(cfg);
        if (curve->parsed()) return cmd_curve(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
