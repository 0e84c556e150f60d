#include "tmc/experiment.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "tmc/errors.hpp"

namespace tmc {

namespace {

using json = nlohmann::json;

// .at() with a config-field path in the error message
const json& field(const json& j, const std::string& path, const char* key) {
    if (!j.contains(key)) throw ConfigError("config: missing field '" + path + key + "'");
    return j.at(key);
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + path + key + "'");
    }
}

LossSpec parse_loss(const json& j, const std::string& path, bool& beta_explicit) {
    LossSpec spec;
    const std::string kind = get_or<std::string>(j, path, "kind", "rsl");
    if (kind == "cross_entropy") {
        spec = LossSpec::cross_entropy();
    } else if (kind == "mse") {
        spec = LossSpec::mse();
    } else if (kind == "rsl") {
        spec = LossSpec::rsl(get_or<double>(j, path, "alpha", 1.0), get_or<double>(j, path, "beta", 25.0));
    } else {
        throw ConfigError("config: unknown loss kind '" + kind + "' at '" + path + "kind'");
    }
    beta_explicit = j.contains("beta");
    validate(spec);
    return spec;
}

TrainConfig parse_train(const json& j, const std::string& path, TrainConfig cfg, bool& beta_explicit) {
    cfg.epochs = get_or<int>(j, path, "epochs", cfg.epochs);
    cfg.batch_size = get_or<int>(j, path, "batch_size", cfg.batch_size);
    if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"), path + "loss.", beta_explicit);
    const std::string opt = get_or<std::string>(j, path, "optimizer",
                                                cfg.optimizer.kind == OptimizerSpec::Kind::adam
                                                    ? std::string("adam")
                                                    : std::string("sgd"));
    const double lr = get_or<double>(j, path, "learning_rate", cfg.optimizer.learning_rate);
    if (opt == "adam") {
        cfg.optimizer = OptimizerSpec::adam(lr);
        cfg.optimizer.beta1 = get_or<double>(j, path, "beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = get_or<double>(j, path, "beta2", cfg.optimizer.beta2);
        cfg.optimizer.epsilon = get_or<double>(j, path, "epsilon", cfg.optimizer.epsilon);
    } else if (opt == "sgd") {
        cfg.optimizer = OptimizerSpec::sgd(lr, get_or<double>(j, path, "momentum", 0.9));
    } else {
        throw ConfigError("config: unknown optimizer '" + opt + "' at '" + path + "optimizer'");
    }
    if (j.contains("schedule")) {
        cfg.optimizer.schedule.clear();
        for (const auto& entry : j.at("schedule")) {
            if (!entry.is_array() || entry.size() != 2)
                throw ConfigError("config: '" + path + "schedule' entries must be [epoch, factor]");
            cfg.optimizer.schedule.push_back({entry.at(0).get<int>(), entry.at(1).get<double>()});
        }
    }
    validate(cfg);
    return cfg;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }

    ExperimentConfig cfg;

    const json& ds = field(j, "", "dataset");
    if (ds.contains("csv")) {
        cfg.dataset.is_csv = true;
        const json& csv = ds.at("csv");
        cfg.dataset.csv_path = field(csv, "dataset.csv.", "path").get<std::string>();
        cfg.dataset.csv_schema.label_column =
            get_or<std::string>(csv, "dataset.csv.", "label_column", "label");
        cfg.dataset.csv_schema.normalize = get_or<bool>(csv, "dataset.csv.", "normalize", false);
        cfg.dataset.name = get_or<std::string>(ds, "dataset.", "name",
                                               cfg.dataset.csv_path.stem().string());
    } else {
        const std::string gen = get_or<std::string>(ds, "dataset.", "generator", "gaussian_mixture");
        if (gen == "gaussian_mixture") {
            cfg.dataset.synthetic.kind = GeneratorKind::gaussian_mixture;
        } else if (gen == "two_spirals") {
            cfg.dataset.synthetic.kind = GeneratorKind::two_spirals;
        } else {
            throw ConfigError("config: unknown generator '" + gen + "' at 'dataset.generator'");
        }
        cfg.dataset.synthetic.classes = get_or<int>(ds, "dataset.", "classes", 10);
        cfg.dataset.synthetic.dim = get_or<int>(ds, "dataset.", "dim", 32);
        cfg.dataset.synthetic.samples_per_class = get_or<int>(ds, "dataset.", "samples_per_class", 100);
        cfg.dataset.synthetic.noise = get_or<double>(ds, "dataset.", "noise", 0.5);
        cfg.dataset.synthetic.separation = get_or<double>(ds, "dataset.", "separation", 3.0);
        cfg.dataset.synthetic.mean_offset = get_or<double>(ds, "dataset.", "mean_offset", 0.0);
        cfg.dataset.name = get_or<std::string>(ds, "dataset.", "name", gen);
    }
    cfg.dataset.test_fraction = get_or<double>(ds, "dataset.", "test_fraction", 0.25);

    if (j.contains("pretrain")) {
        const json& pt = j.at("pretrain");
        const std::string mode = get_or<std::string>(pt, "pretrain.", "mode", "disjoint_classes");
        if (mode == "disjoint_classes") {
            cfg.pretrain.mode = PretrainConfig::Mode::disjoint_classes;
        } else if (mode == "disjoint_samples") {
            cfg.pretrain.mode = PretrainConfig::Mode::disjoint_samples;
        } else {
            throw ConfigError("config: unknown pretrain mode '" + mode + "'");
        }
        cfg.pretrain.classes = get_or<int>(pt, "pretrain.", "classes", cfg.pretrain.classes);
        cfg.pretrain.fraction = get_or<double>(pt, "pretrain.", "fraction", cfg.pretrain.fraction);
        cfg.pretrain.hidden = get_or<std::vector<int>>(pt, "pretrain.", "hidden", cfg.pretrain.hidden);
        bool ignored = false;
        cfg.pretrain.train = parse_train(pt, "pretrain.", cfg.pretrain.train, ignored);
    }
    if (cfg.dataset.is_csv && cfg.pretrain.mode == PretrainConfig::Mode::disjoint_classes)
        throw ConfigError("config: csv datasets require pretrain.mode = disjoint_samples");

    cfg.protocol = protocol_from_string(get_or<std::string>(j, "", "protocol", "class_incremental"));
    cfg.num_tasks = get_or<int>(j, "", "num_tasks", 5);
    if (cfg.num_tasks < 1) throw ConfigError("config: 'num_tasks' must be >= 1");
    cfg.methods = get_or<std::vector<std::string>>(j, "", "methods", {"tmc"});
    if (cfg.methods.empty()) throw ConfigError("config: 'methods' must not be empty");
    for (const auto& m : cfg.methods) {
        if (m != "tmc" && m != "tmc_seq") baseline_from_string(m);  // throws on unknown
    }

    if (j.contains("train"))
        cfg.train = parse_train(j.at("train"), "train.", cfg.train, cfg.train_beta_explicit);
    if (j.contains("nonlinear_train")) {
        bool ignored = false;
        cfg.nonlinear_train =
            parse_train(j.at("nonlinear_train"), "nonlinear_train.", cfg.nonlinear_train, ignored);
    }

    cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "", "seeds", {1});
    if (cfg.seeds.empty()) throw ConfigError("config: 'seeds' must not be empty");
    cfg.component_log = get_or<bool>(j, "", "component_log", false);
    cfg.parallel = get_or<bool>(j, "", "parallel", false);
    cfg.measure_timing = get_or<bool>(j, "", "measure_timing", false);
    cfg.timing_repetitions = get_or<int>(j, "", "timing_repetitions", 100);
    cfg.jobs = get_or<int>(j, "", "jobs", 0);

    if (j.contains("output")) {
        const json& out = j.at("output");
        cfg.output.results_csv =
            get_or<std::string>(out, "output.", "results_csv", cfg.output.results_csv.string());
        cfg.output.epoch_log_csv = get_or<std::string>(out, "output.", "epoch_log_csv", "");
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_experiment_config(text);
}

void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* seed = std::getenv("TMC_SEED")) {
        try {
            cfg.seeds = {static_cast<std::uint64_t>(std::stoull(seed))};
        } catch (const std::exception&) {
            throw ConfigError("TMC_SEED: not an integer");
        }
    }
    if (const char* jobs = std::getenv("TMC_JOBS")) {
        try {
            cfg.jobs = std::stoi(jobs);
        } catch (const std::exception&) {
            throw ConfigError("TMC_JOBS: not an integer");
        }
    }
    if (const char* out = std::getenv("TMC_OUT")) {
        const std::filesystem::path dir(out);
        cfg.output.results_csv = dir / cfg.output.results_csv.filename();
        if (!cfg.output.epoch_log_csv.empty())
            cfg.output.epoch_log_csv = dir / cfg.output.epoch_log_csv.filename();
    }
}

ExperimentData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    ExperimentData data;
    data.dataset_name = cfg.dataset.name;
    if (cfg.dataset.is_csv) {
        Dataset full = load_csv_dataset(cfg.dataset.csv_path, cfg.dataset.csv_schema);
        auto [pool, test] = stratified_split(full, cfg.dataset.test_fraction, mix_seed(seed, 2));
        auto [train, pre] = stratified_split(pool, cfg.pretrain.fraction, mix_seed(seed, 3));
        data.train_pool = std::move(train);
        data.test_pool = std::move(test);
        data.pretrain = std::move(pre);
        return data;
    }

    SyntheticSpec gen = cfg.dataset.synthetic;
    const int downstream = gen.classes;
    if (cfg.pretrain.mode == PretrainConfig::Mode::disjoint_classes) {
        if (gen.kind == GeneratorKind::two_spirals)
            throw ConfigError("config: two_spirals supports pretrain.mode = disjoint_samples only");
        gen.classes += cfg.pretrain.classes;
    }
    const Dataset full = generate_synthetic(gen, mix_seed(seed, 1));

    std::vector<int> down_classes(downstream);
    std::iota(down_classes.begin(), down_classes.end(), 0);
    const Dataset down = full.remap_classes(down_classes);
    auto [pool, test] = stratified_split(down, cfg.dataset.test_fraction, mix_seed(seed, 2));
    data.test_pool = std::move(test);

    if (cfg.pretrain.mode == PretrainConfig::Mode::disjoint_classes) {
        std::vector<int> pre_classes(cfg.pretrain.classes);
        std::iota(pre_classes.begin(), pre_classes.end(), downstream);
        data.pretrain = full.remap_classes(pre_classes);
        data.train_pool = std::move(pool);
    } else {
        auto [train, pre] = stratified_split(pool, cfg.pretrain.fraction, mix_seed(seed, 3));
        data.train_pool = std::move(train);
        data.pretrain = std::move(pre);
    }
    return data;
}

std::shared_ptr<const BaseModel> prepare_anchor(const ExperimentConfig& cfg,
                                                const ExperimentData& data, std::uint64_t seed) {
    TrainConfig pre_cfg = cfg.pretrain.train;
    pre_cfg.seed = mix_seed(seed, 4);
    return pretrain_anchor(data.pretrain, data.train_pool.num_classes(), cfg.pretrain.hidden, pre_cfg,
                           mix_seed(seed, 5), mix_seed(seed, 6));
}

TaskSequence prepare_tasks(const ExperimentConfig& cfg, const ExperimentData& data,
                           std::uint64_t seed) {
    return make_task_sequence(cfg.protocol, data.train_pool, cfg.num_tasks, mix_seed(seed, 7));
}

TrainConfig resolve_train_config(const ExperimentConfig& cfg, const std::string& method,
                                 std::uint64_t seed) {
    const bool tangent_method =
        method == "tmc" || method == "tmc_seq" || method == "tme" || method == "tmc_fc";
    TrainConfig t = tangent_method ? cfg.train : cfg.nonlinear_train;
    t.seed = mix_seed(seed, 8);
    if (tangent_method && t.loss.kind == LossKind::rsl && !cfg.train_beta_explicit) {
        // protocol defaults: 25 for class-/task-incremental, 5 for
        // data-incremental; TME components always use 5
        if (method == "tme") {
            t.loss.beta = 5.0;
        } else {
            t.loss.beta = cfg.protocol == Protocol::data_incremental ? 5.0 : 25.0;
        }
    }
    if (method == "tmc_fc") t.head_only = true;
    return t;
}

ExperimentResults run_experiment(const ExperimentConfig& cfg) {
    ExperimentResults results;
    for (std::uint64_t seed : cfg.seeds) {
        const ExperimentData data = prepare_data(cfg, seed);
        const auto anchor = prepare_anchor(cfg, data, seed);
        const TaskSequence tasks = prepare_tasks(cfg, data, seed);

        HarnessOptions options;
        options.parallel = cfg.parallel;
        options.jobs = cfg.jobs;
        options.component_log = cfg.component_log;
        options.measure_timing = cfg.measure_timing;
        options.timing_repetitions = cfg.timing_repetitions;

        for (const std::string& method : cfg.methods) {
            const TrainConfig train_cfg = resolve_train_config(cfg, method, seed);
            RunResult run;
            if (method == "tmc") {
                run = run_tmc(tasks, data.test_pool, anchor, train_cfg, options);
            } else if (method == "tmc_seq") {
                run = run_tmc_seq(tasks, data.test_pool, anchor, train_cfg, options);
            } else {
                run = run_baseline(tasks, data.test_pool, anchor, train_cfg,
                                   baseline_from_string(method), options);
            }
            for (const MethodRow& row : run.rows) {
                ResultRow r;
                r.dataset = data.dataset_name;
                r.protocol = to_string(cfg.protocol);
                r.tasks = cfg.num_tasks;
                r.method = row.method;
                r.accuracy = row.final_accuracy;
                r.inference_us_per_sample = cfg.measure_timing ? row.inference_us_per_sample : 0.0;
                r.train_seconds = cfg.measure_timing ? row.train_seconds : 0.0;
                r.seed = seed;
                results.rows.push_back(std::move(r));
                for (std::size_t t = 0; t < row.task_reports.size(); ++t) {
                    for (const EpochRecord& e : row.task_reports[t].epochs) {
                        results.epoch_rows.push_back({row.method, seed, static_cast<int>(t + 1),
                                                      e.epoch, e.mean_loss, e.lr});
                    }
                }
            }
        }
    }
    return results;
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_results: cannot open " + path.string());
    out << "dataset,protocol,tasks,method,accuracy,inference_us_per_sample,train_seconds,seed\n";
    for (const auto& r : rows) {
        out << r.dataset << ',' << r.protocol << ',' << r.tasks << ',' << r.method << ','
            << fmt_double(r.accuracy) << ',' << fmt_double(r.inference_us_per_sample) << ','
            << fmt_double(r.train_seconds) << ',' << r.seed << '\n';
    }
    if (!out) throw IoError("write_results: write failed for " + path.string());
}

void write_epoch_log(const std::vector<EpochLogRow>& rows, const std::filesystem::path& path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_epoch_log: cannot open " + path.string());
    out << "method,seed,task,epoch,mean_loss,lr\n";
    for (const auto& r : rows) {
        out << r.method << ',' << r.seed << ',' << r.task << ',' << r.epoch << ','
            << fmt_double(r.mean_loss) << ',' << fmt_double(r.lr) << '\n';
    }
    if (!out) throw IoError("write_epoch_log: write failed for " + path.string());
}

}  // namespace tmc
