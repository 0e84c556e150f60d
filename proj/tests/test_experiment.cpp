#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "tmc/errors.hpp"
#include "tmc/experiment.hpp"

using tmc::ExperimentConfig;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "tmc_experiment_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

// tiny end-to-end config: 4+2 classes, dim 4, 2 tasks, 2 epochs
std::string tiny_config_json(const std::string& methods = "[\"tmc\", \"naive_seq\"]",
                             const std::string& seeds = "[1, 2]") {
    return std::string(R"({
      "dataset": {"generator": "gaussian_mixture", "classes": 4, "dim": 4,
                  "samples_per_class": 24, "noise": 0.5, "test_fraction": 0.25},
      "pretrain": {"mode": "disjoint_classes", "classes": 2, "hidden": [8],
                   "epochs": 3, "optimizer": "sgd", "learning_rate": 0.05, "schedule": []},
      "protocol": "class_incremental",
      "num_tasks": 2,
      "methods": )") +
           methods + R"(,
      "train": {"epochs": 2, "batch_size": 16, "optimizer": "adam",
                "learning_rate": 0.002, "schedule": []},
      "nonlinear_train": {"epochs": 2, "batch_size": 16, "optimizer": "sgd",
                          "learning_rate": 0.05, "schedule": []},
      "seeds": )" +
           seeds + R"(
    })";
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config parsing and validation") {
    SUBCASE("defaults are filled in") {
        const ExperimentConfig cfg = tmc::parse_experiment_config(tiny_config_json());
        CHECK(cfg.num_tasks == 2);
        CHECK(cfg.methods.size() == 2);
        CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
        CHECK(cfg.train.loss.kind == tmc::LossKind::rsl);
        CHECK_FALSE(cfg.train_beta_explicit);
    }
    SUBCASE("invalid json") {
        CHECK_THROWS_AS(tmc::parse_experiment_config("{not json"), tmc::ConfigError);
    }
    SUBCASE("nonpositive beta is rejected before any training") {
        const std::string bad = R"({
          "dataset": {"generator": "gaussian_mixture"},
          "train": {"loss": {"kind": "rsl", "alpha": 1.0, "beta": -1.0}}
        })";
        CHECK_THROWS_AS(tmc::parse_experiment_config(bad), std::invalid_argument);
    }
    SUBCASE("unknown method is reported") {
        CHECK_THROWS_AS(tmc::parse_experiment_config(tiny_config_json("[\"frobnicate\"]")),
                        tmc::ConfigError);
    }
    SUBCASE("unknown protocol is reported") {
        std::string text = tiny_config_json();
        const auto pos = text.find("class_incremental");
        text.replace(pos, std::string("class_incremental").size(), "mystery_protocol");
        CHECK_THROWS_AS(tmc::parse_experiment_config(text), tmc::ConfigError);
    }
    SUBCASE("empty seeds are rejected") {
        CHECK_THROWS_AS(tmc::parse_experiment_config(tiny_config_json("[\"tmc\"]", "[]")),
                        tmc::ConfigError);
    }
}

TEST_CASE("beta defaults resolve per protocol and method") {
    ExperimentConfig cfg = tmc::parse_experiment_config(tiny_config_json());

    cfg.protocol = tmc::Protocol::class_incremental;
    CHECK(tmc::resolve_train_config(cfg, "tmc", 1).loss.beta == 25.0);
    cfg.protocol = tmc::Protocol::task_incremental;
    CHECK(tmc::resolve_train_config(cfg, "tmc", 1).loss.beta == 25.0);
    cfg.protocol = tmc::Protocol::data_incremental;
    CHECK(tmc::resolve_train_config(cfg, "tmc", 1).loss.beta == 5.0);
    cfg.protocol = tmc::Protocol::class_incremental;
    CHECK(tmc::resolve_train_config(cfg, "tme", 1).loss.beta == 5.0);
    CHECK(tmc::resolve_train_config(cfg, "tmc_fc", 1).head_only);
    CHECK_FALSE(tmc::resolve_train_config(cfg, "tmc", 1).head_only);

    // an explicit beta wins over the protocol default
    cfg.train_beta_explicit = true;
    cfg.train.loss.beta = 7.5;
    CHECK(tmc::resolve_train_config(cfg, "tmc", 1).loss.beta == 7.5);
    CHECK(tmc::resolve_train_config(cfg, "tme", 1).loss.beta == 7.5);

    // non-tangent methods use the nonlinear config
    CHECK(tmc::resolve_train_config(cfg, "naive_seq", 1).loss.kind == tmc::LossKind::cross_entropy);
}

TEST_CASE("experiment produces one row per method and seed") {
    const ExperimentConfig cfg = tmc::parse_experiment_config(tiny_config_json());
    const tmc::ExperimentResults results = tmc::run_experiment(cfg);
    REQUIRE(results.rows.size() == 4);  // 2 methods x 2 seeds
    CHECK(results.rows[0].method == "tmc");
    CHECK(results.rows[0].seed == 1);
    CHECK(results.rows[1].method == "naive_seq");
    CHECK(results.rows[1].seed == 1);
    CHECK(results.rows[2].method == "tmc");
    CHECK(results.rows[2].seed == 2);
    for (const auto& row : results.rows) {
        CHECK(row.accuracy >= 0.0);
        CHECK(row.accuracy <= 1.0);
        CHECK(row.train_seconds == 0.0);  // timing capture is off by default
    }
    CHECK_FALSE(results.epoch_rows.empty());
}

TEST_CASE("experiment reruns are value-identical") {
    const ExperimentConfig cfg =
        tmc::parse_experiment_config(tiny_config_json("[\"tmc\"]", "[3]"));
    const tmc::ExperimentResults a = tmc::run_experiment(cfg);
    const tmc::ExperimentResults b = tmc::run_experiment(cfg);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
}

TEST_CASE("results csv") {
    SUBCASE("empty results produce a header-only file") {
        const auto path = temp_file("empty.csv");
        tmc::write_results({}, path);
        CHECK(slurp(path) ==
              "dataset,protocol,tasks,method,accuracy,inference_us_per_sample,train_seconds,seed\n");
    }
    SUBCASE("rows are written in order and parse back to full precision") {
        const auto path = temp_file("rows.csv");
        tmc::ResultRow r1{"synth", "class_incremental", 5, "tmc", 0.123456789012345678, 0.0, 0.0, 1};
        tmc::ResultRow r2{"synth", "class_incremental", 5, "tmc", 0.9375, 0.0, 0.0, 2};
        tmc::write_results({r1, r2}, path);
        const std::string text = slurp(path);
        std::istringstream in(text);
        std::string line;
        std::getline(in, line);  // header
        std::getline(in, line);
        const auto acc_start = line.find("tmc,") + 4;
        const double parsed = std::stod(line.substr(acc_start));
        CHECK(parsed == r1.accuracy);
        std::getline(in, line);
        CHECK(line.find(",2") != std::string::npos);
    }
}

TEST_CASE("environment overrides") {
    ExperimentConfig cfg = tmc::parse_experiment_config(tiny_config_json());
    setenv("TMC_SEED", "42", 1);
    setenv("TMC_JOBS", "3", 1);
    setenv("TMC_OUT", "/tmp/tmc_out_dir", 1);
    tmc::apply_env_overrides(cfg);
    unsetenv("TMC_SEED");
    unsetenv("TMC_JOBS");
    unsetenv("TMC_OUT");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{42});
    CHECK(cfg.jobs == 3);
    CHECK(cfg.output.results_csv == std::filesystem::path("/tmp/tmc_out_dir/results.csv"));

    setenv("TMC_SEED", "not-a-number", 1);
    CHECK_THROWS_AS(tmc::apply_env_overrides(cfg), tmc::ConfigError);
    unsetenv("TMC_SEED");
}

TEST_CASE("prepared data respects the pretrain mode") {
    const ExperimentConfig cfg = tmc::parse_experiment_config(tiny_config_json());
    const tmc::ExperimentData data = tmc::prepare_data(cfg, 1);
    CHECK(data.train_pool.num_classes() == 4);
    CHECK(data.pretrain.num_classes() == 2);  // disjoint pre-training classes
    CHECK(data.test_pool.size() > 0);

    const auto anchor = tmc::prepare_anchor(cfg, data, 1);
    CHECK(anchor->spec().output_dim() == 4);  // head re-initialized to downstream K

    const tmc::TaskSequence tasks = tmc::prepare_tasks(cfg, data, 1);
    CHECK(tasks.tasks.size() == 2);
}
