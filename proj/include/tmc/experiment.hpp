#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tmc/data.hpp"
#include "tmc/harness.hpp"
#include "tmc/training.hpp"

namespace tmc {

struct DatasetConfig {
    bool is_csv = false;
    std::string name = "synthetic";
    SyntheticSpec synthetic;
    double test_fraction = 0.25;
    std::filesystem::path csv_path;
    CsvSchema csv_schema;
};

struct PretrainConfig {
    enum class Mode { disjoint_classes, disjoint_samples };

    Mode mode = Mode::disjoint_classes;
    int classes = 4;          // extra generator classes reserved for pre-training
    double fraction = 0.3;    // share of the train pool carved out (disjoint_samples)
    std::vector<int> hidden = {64};
    TrainConfig train = TrainConfig::nonlinear_defaults();
};

struct OutputConfig {
    std::filesystem::path results_csv = "results.csv";
    std::filesystem::path epoch_log_csv;  // empty = no epoch log
};

struct ExperimentConfig {
    DatasetConfig dataset;
    PretrainConfig pretrain;
    Protocol protocol = Protocol::class_incremental;
    int num_tasks = 5;
    std::vector<std::string> methods = {"tmc"};
    TrainConfig train = TrainConfig::tangent_defaults();  // tangent methods
    bool train_beta_explicit = false;
    TrainConfig nonlinear_train = TrainConfig::nonlinear_defaults();
    std::vector<std::uint64_t> seeds = {1};
    bool component_log = false;
    bool parallel = false;
    bool measure_timing = false;
    int timing_repetitions = 100;
    int jobs = 0;
    OutputConfig output;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);

// TMC_SEED / TMC_JOBS / TMC_OUT; command-line flags are applied on top by the CLI.
void apply_env_overrides(ExperimentConfig& cfg);

struct ExperimentData {
    Dataset train_pool;
    Dataset test_pool;
    Dataset pretrain;
    std::string dataset_name;
};

// Deterministic per-seed pipeline pieces, shared by the runner and the CLI
// subcommands so a component trained standalone matches the full run.
ExperimentData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);
std::shared_ptr<const BaseModel> prepare_anchor(const ExperimentConfig& cfg,
                                                const ExperimentData& data, std::uint64_t seed);
TaskSequence prepare_tasks(const ExperimentConfig& cfg, const ExperimentData& data,
                           std::uint64_t seed);
// Per-method loss/optimizer resolution, including the protocol beta defaults
// (25 for class-/task-incremental, 5 for data-incremental and TME).
TrainConfig resolve_train_config(const ExperimentConfig& cfg, const std::string& method,
                                 std::uint64_t seed);

struct ResultRow {
    std::string dataset;
    std::string protocol;
    int tasks = 0;
    std::string method;
    double accuracy = 0.0;
    double inference_us_per_sample = 0.0;
    double train_seconds = 0.0;
    std::uint64_t seed = 0;
};

struct EpochLogRow {
    std::string method;
    std::uint64_t seed = 0;
    int task = 0;
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct ExperimentResults {
    std::vector<ResultRow> rows;
    std::vector<EpochLogRow> epoch_rows;
};

ExperimentResults run_experiment(const ExperimentConfig& cfg);

void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path);
void write_epoch_log(const std::vector<EpochLogRow>& rows, const std::filesystem::path& path);

}  // namespace tmc
