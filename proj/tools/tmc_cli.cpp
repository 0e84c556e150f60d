// Command-line front end: pre-training, per-task training, composition,
// unlearning, evaluation, experiment matrices, and inference benchmarks.
//
// Progress and resolved configs go to stderr; machine-readable output goes to
// stdout or files. Exit codes: 0 success, 2 config error, 3 data error,
// 4 numeric divergence, 5 I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <random>

#include "tmc/checkpoint.hpp"
#include "tmc/errors.hpp"
#include "tmc/experiment.hpp"
#include "tmc/harness.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

std::optional<std::uint64_t> env_seed() {
    if (const char* s = std::getenv("TMC_SEED")) {
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            throw tmc::ConfigError("TMC_SEED: not an integer");
        }
    }
    return std::nullopt;
}

// flag wins over env, env wins over the config file's seed list
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_default) {
    if (flag) return *flag;
    if (auto env = env_seed()) return *env;
    return config_default;
}

void print_resolved(const std::string& command, const json& fields) {
    json j = fields;
    j["command"] = command;
    std::cerr << "resolved config: " << j.dump() << "\n";
}

std::shared_ptr<const tmc::BaseModel> load_base(const std::filesystem::path& path) {
    return std::make_shared<const tmc::BaseModel>(tmc::to_base_model(tmc::load_checkpoint(path)));
}

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

tmc::ExperimentConfig load_config(const CommonArgs& args) {
    tmc::ExperimentConfig cfg = tmc::load_experiment_config(args.config_path);
    tmc::apply_env_overrides(cfg);
    if (args.seed) cfg.seeds = {*args.seed};
    return cfg;
}

int cmd_pretrain(const CommonArgs& args, const std::string& out_path) {
    tmc::ExperimentConfig cfg = load_config(args);
    const std::uint64_t seed = resolve_seed(args.seed, cfg.seeds.front());
    print_resolved("pretrain", {{"config", args.config_path}, {"seed", seed}, {"out", out_path}});

    const tmc::ExperimentData data = tmc::prepare_data(cfg, seed);
    const auto anchor = tmc::prepare_anchor(cfg, data, seed);
    tmc::CheckpointMeta meta;
    meta.seed = seed;
    meta.train_digest = "pretrain:" + data.dataset_name;
    tmc::save_checkpoint(tmc::make_base_checkpoint(*anchor, meta), out_path);
    std::cerr << "wrote base checkpoint " << out_path << " (" << anchor->weights().dim()
              << " parameters)\n";
    return kExitOk;
}

int cmd_train_task(const CommonArgs& args, const std::string& base_path, int task_index,
                   const std::string& init_path, bool with_log, const std::string& out_path) {
    tmc::ExperimentConfig cfg = load_config(args);
    const std::uint64_t seed = resolve_seed(args.seed, cfg.seeds.front());
    print_resolved("train-task", {{"config", args.config_path},
                                  {"seed", seed},
                                  {"base", base_path},
                                  {"task", task_index},
                                  {"log", with_log},
                                  {"out", out_path}});

    const auto base = load_base(base_path);
    const tmc::ExperimentData data = tmc::prepare_data(cfg, seed);
    const tmc::TaskSequence tasks = tmc::prepare_tasks(cfg, data, seed);
    if (task_index < 1 || task_index > static_cast<int>(tasks.tasks.size()))
        throw tmc::ConfigError("train-task: task index out of range 1.." +
                               std::to_string(tasks.tasks.size()));

    tmc::TrainConfig train_cfg = tmc::resolve_train_config(cfg, "tmc", seed);
    train_cfg.seed = tmc::mix_seed(train_cfg.seed, static_cast<std::uint64_t>(task_index - 1));
    train_cfg.log_components = with_log || cfg.component_log;

    std::optional<tmc::ParamVector> init;
    if (!init_path.empty()) {
        const tmc::TangentModel prev =
            tmc::to_tangent_model(tmc::load_checkpoint(init_path), base);
        init = prev.delta();
    }

    tmc::TrainReport report;
    const tmc::TangentModel component =
        tmc::train_tangent(base, tasks.tasks[task_index - 1].train, train_cfg,
                           init ? &*init : nullptr, task_index, &report);
    for (const auto& e : report.epochs)
        std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.lr << "\n";

    tmc::CheckpointMeta meta;
    meta.seed = seed;
    meta.train_digest = "train-task:" + std::to_string(task_index);
    tmc::save_checkpoint(tmc::make_tangent_checkpoint(component, meta), out_path);
    std::cerr << "wrote component checkpoint " << out_path << "\n";
    return kExitOk;
}

int cmd_compose(const std::string& base_path, const std::vector<std::string>& component_paths,
                std::vector<double> weights, const std::string& out_path) {
    print_resolved("compose", {{"base", base_path},
                               {"components", component_paths},
                               {"weights", weights},
                               {"out", out_path}});
    if (component_paths.empty()) throw tmc::ConfigError("compose: no components given");
    const auto base = load_base(base_path);
    std::vector<tmc::TangentModel> components;
    for (const auto& p : component_paths)
        components.push_back(tmc::to_tangent_model(tmc::load_checkpoint(p), base));
    if (weights.empty())
        weights.assign(components.size(), 1.0 / static_cast<double>(components.size()));
    if (weights.size() != components.size())
        throw tmc::ConfigError("compose: weight count does not match component count");

    const tmc::TangentModel composed = tmc::compose_many(components, weights);
    tmc::CheckpointMeta meta;
    meta.train_digest = "compose:" + std::to_string(components.size());
    tmc::save_checkpoint(tmc::make_tangent_checkpoint(composed, meta), out_path);
    std::cerr << "wrote composed checkpoint " << out_path << " (" << composed.task_count()
              << " tasks)\n";
    return kExitOk;
}

int cmd_unlearn(const std::string& base_path, const std::string& model_path, int task_id,
                bool rescale, const std::string& out_path) {
    print_resolved("unlearn", {{"base", base_path},
                               {"model", model_path},
                               {"task", task_id},
                               {"rescale", rescale},
                               {"out", out_path}});
    const auto base = load_base(base_path);
    const tmc::TangentModel composed = tmc::to_tangent_model(tmc::load_checkpoint(model_path), base);
    const tmc::TangentModel result = tmc::unlearn(composed, task_id, rescale);
    tmc::CheckpointMeta meta;
    meta.train_digest = "unlearn:" + std::to_string(task_id);
    tmc::save_checkpoint(tmc::make_tangent_checkpoint(result, meta), out_path);
    std::cerr << "wrote unlearned checkpoint " << out_path << " (" << result.task_count()
              << " tasks remain)\n";
    return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& base_path, const std::string& model_path,
             const std::vector<int>& restrict_classes, const std::string& split) {
    tmc::ExperimentConfig cfg = load_config(args);
    const std::uint64_t seed = resolve_seed(args.seed, cfg.seeds.front());
    print_resolved("eval", {{"config", args.config_path},
                            {"seed", seed},
                            {"model", model_path},
                            {"split", split},
                            {"restrict", restrict_classes}});

    const tmc::ExperimentData data = tmc::prepare_data(cfg, seed);
    const tmc::Dataset& pool = split == "train" ? data.train_pool : data.test_pool;

    const tmc::Checkpoint ckpt = tmc::load_checkpoint(model_path);
    tmc::Predictor predictor;
    if (ckpt.kind == tmc::Checkpoint::Kind::tangent) {
        if (base_path.empty()) throw tmc::ConfigError("eval: tangent checkpoints need --base");
        predictor = tmc::predictor_of(tmc::to_tangent_model(ckpt, load_base(base_path)));
    } else {
        predictor = tmc::predictor_of(tmc::to_base_model(ckpt));
    }

    std::optional<std::span<const int>> restriction;
    if (!restrict_classes.empty()) restriction = std::span<const int>(restrict_classes);
    const double acc = tmc::evaluate(predictor, pool, restriction);
    std::cout << acc << "\n";
    return kExitOk;
}

int cmd_run_experiment(const CommonArgs& args, int jobs_flag, const std::string& out_dir) {
    tmc::ExperimentConfig cfg = load_config(args);
    if (jobs_flag > 0) cfg.jobs = jobs_flag;
    if (!out_dir.empty()) {
        cfg.output.results_csv = std::filesystem::path(out_dir) / cfg.output.results_csv.filename();
        if (!cfg.output.epoch_log_csv.empty())
            cfg.output.epoch_log_csv =
                std::filesystem::path(out_dir) / cfg.output.epoch_log_csv.filename();
    }
    json seeds = json::array();
    for (auto s : cfg.seeds) seeds.push_back(s);
    print_resolved("run-experiment", {{"config", args.config_path},
                                      {"seeds", seeds},
                                      {"methods", cfg.methods},
                                      {"protocol", tmc::to_string(cfg.protocol)},
                                      {"num_tasks", cfg.num_tasks},
                                      {"jobs", cfg.jobs},
                                      {"results_csv", cfg.output.results_csv.string()}});

    const tmc::ExperimentResults results = tmc::run_experiment(cfg);
    tmc::write_results(results.rows, cfg.output.results_csv);
    std::cerr << "wrote " << results.rows.size() << " result rows to " << cfg.output.results_csv
              << "\n";
    if (!cfg.output.epoch_log_csv.empty()) {
        tmc::write_epoch_log(results.epoch_rows, cfg.output.epoch_log_csv);
        std::cerr << "wrote epoch log to " << cfg.output.epoch_log_csv << "\n";
    }
    return kExitOk;
}

int cmd_bench_inference(const std::string& base_path, const std::vector<std::string>& component_paths,
                        int repetitions, int samples, std::uint64_t seed) {
    print_resolved("bench-inference", {{"base", base_path},
                                       {"components", component_paths},
                                       {"repetitions", repetitions},
                                       {"samples", samples},
                                       {"seed", seed}});
    if (repetitions < 1) throw tmc::ConfigError("bench-inference: repetitions must be >= 1");
    if (component_paths.empty()) throw tmc::ConfigError("bench-inference: no components given");
    const auto base = load_base(base_path);
    std::vector<tmc::TangentModel> components;
    for (const auto& p : component_paths)
        components.push_back(tmc::to_tangent_model(tmc::load_checkpoint(p), base));

    // synthetic probe inputs of the right dimensionality
    const int dim = base->spec().input_dim();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> feats(static_cast<std::size_t>(samples) * dim);
    for (double& v : feats) v = normal(rng);
    const tmc::Dataset probe(std::move(feats), dim, std::vector<int>(samples, 0),
                             base->spec().output_dim());

    const std::vector<double> uniform(components.size(), 1.0 / components.size());
    const tmc::TangentModel composed = tmc::compose_many(components, uniform);
    const tmc::ModelCollection ensemble = tmc::ModelCollection::of_tangent(components);

    const double composed_us =
        tmc::measure_inference_us(tmc::predictor_of(composed), probe, repetitions);
    const double single_us =
        tmc::measure_inference_us(tmc::predictor_of(components.front()), probe, repetitions);
    const double ensemble_us =
        tmc::measure_inference_us(tmc::logit_ensemble_predictor(ensemble), probe, repetitions);

    json report;
    report["members"] = components.size();
    report["composed_us_per_sample"] = composed_us;
    report["single_member_us_per_sample"] = single_us;
    report["logit_ensemble_us_per_sample"] = ensemble_us;
    report["composed_vs_single_ratio"] = composed_us / single_us;
    report["ensemble_vs_single_ratio"] = ensemble_us / single_us;
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tangent model composition toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string base_path, model_path, init_path, out_path, out_dir, split = "test";
    std::vector<std::string> component_paths;
    std::vector<double> weights;
    std::vector<int> restrict_classes;
    int task_index = 1, task_id = 1, jobs = 0, repetitions = 100, samples = 256;
    std::uint64_t bench_seed = 1;
    bool with_log = false, rescale = true;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "experiment config (json)")->required();
        cmd->add_option("--seed", common.seed, "run seed (overrides TMC_SEED and the config)");
    };

    CLI::App* pretrain = app.add_subcommand("pretrain", "train the shared anchor model");
    add_config(pretrain);
    pretrain->add_option("--out", out_path, "output base checkpoint")->required();

    CLI::App* train_task = app.add_subcommand("train-task", "train one tangent component");
    add_config(train_task);
    train_task->add_option("--base", base_path, "anchor checkpoint")->required();
    train_task->add_option("--task", task_index, "1-based task index")->required();
    train_task->add_option("--init", init_path, "composed checkpoint used as initialization");
    train_task->add_flag("--log", with_log, "retain the component log in the checkpoint");
    train_task->add_option("--out", out_path, "output component checkpoint")->required();

    CLI::App* compose = app.add_subcommand("compose", "compose component checkpoints");
    compose->add_option("--base", base_path, "anchor checkpoint")->required();
    compose->add_option("--components", component_paths, "component checkpoints")->required();
    compose->add_option("--weights", weights, "composition weights (default uniform)");
    compose->add_option("--out", out_path, "output composed checkpoint")->required();

    CLI::App* unlearn_cmd = app.add_subcommand("unlearn", "remove one task from a composition");
    unlearn_cmd->add_option("--base", base_path, "anchor checkpoint")->required();
    unlearn_cmd->add_option("--model", model_path, "composed checkpoint with component log")->required();
    unlearn_cmd->add_option("--task", task_id, "task id to unlearn")->required();
    unlearn_cmd->add_flag("--rescale,!--no-rescale", rescale,
                          "renormalize to the remaining components (default on)");
    unlearn_cmd->add_option("--out", out_path, "output checkpoint")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the config's data");
    add_config(eval_cmd);
    eval_cmd->add_option("--base", base_path, "anchor checkpoint (required for tangent models)");
    eval_cmd->add_option("--model", model_path, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--restrict", restrict_classes, "restrict argmax to these classes");
    eval_cmd->add_option("--split", split, "test or train")->check(CLI::IsMember({"test", "train"}));

    CLI::App* run_exp = app.add_subcommand("run-experiment", "run the full method/seed matrix");
    add_config(run_exp);
    run_exp->add_option("--jobs", jobs, "parallel training jobs (overrides TMC_JOBS)");
    run_exp->add_option("--out", out_dir, "output directory (overrides TMC_OUT)");

    CLI::App* bench = app.add_subcommand("bench-inference", "composed vs ensemble latency");
    bench->add_option("--base", base_path, "anchor checkpoint")->required();
    bench->add_option("--components", component_paths, "component checkpoints")->required();
    bench->add_option("--repetitions", repetitions, "timing repetitions (median reported)");
    bench->add_option("--samples", samples, "probe samples per repetition");
    bench->add_option("--seed", bench_seed, "probe generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (pretrain->parsed()) return cmd_pretrain(common, out_path);
        if (train_task->parsed())
            return cmd_train_task(common, base_path, task_index, init_path, with_log, out_path);
        if (compose->parsed()) return cmd_compose(base_path, component_paths, weights, out_path);
        if (unlearn_cmd->parsed()) return cmd_unlearn(base_path, model_path, task_id, rescale, out_path);
        if (eval_cmd->parsed())
            return cmd_eval(common, base_path, model_path, restrict_classes, split);
        if (run_exp->parsed()) return cmd_run_experiment(common, jobs, out_dir);
        if (bench->parsed())
            return cmd_bench_inference(base_path, component_paths, repetitions, samples, bench_seed);
    } catch (const tmc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tmc::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const tmc::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const tmc::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitConfig;
}
