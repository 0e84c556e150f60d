#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tmc/data.hpp"
#include "tmc/ensembles.hpp"
#include "tmc/network.hpp"
#include "tmc/tangent.hpp"
#include "tmc/training.hpp"

namespace tmc {

// Deterministic per-task seed derivation (splitmix64 over seed and salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

struct HarnessOptions {
    bool parallel = false;       // train components concurrently (same result, fixed per-task seeds)
    int jobs = 0;                // 0 = hardware concurrency
    bool component_log = false;  // retain per-task deltas for unlearning
    bool measure_timing = false;
    int timing_repetitions = 100;
};

struct MethodRow {
    std::string method;
    double final_accuracy = 0.0;
    std::vector<double> accuracy_after_task;
    std::vector<double> component_accuracy;  // each component on its own task's test split
    double train_seconds = 0.0;
    double inference_us_per_sample = 0.0;
    // peak number of model-sized deltas held by the driver; 2 in the default
    // sequential non-logging mode
    int peak_live_deltas = 0;
    std::vector<TrainReport> task_reports;
};

struct RunResult {
    std::string dataset_name;
    Protocol protocol = Protocol::class_incremental;
    int num_tasks = 0;
    std::uint64_t seed = 0;
    std::vector<MethodRow> rows;
};

// Protocol-aware evaluation against a held-out test pool: class-/data-
// incremental evaluate on the union of seen tasks' classes, task-incremental
// averages per-task accuracy with the argmax restricted to each task's
// classes.
class ContinualEvaluator {
public:
    ContinualEvaluator(const TaskSequence& seq, const Dataset& test_pool);

    double after_task(const Predictor& p, int tasks_seen) const;
    double on_task(const Predictor& p, int task_index) const;
    const Dataset& pool() const { return test_pool_; }

private:
    Protocol protocol_;
    Dataset test_pool_;
    std::vector<std::vector<int>> class_subsets_;
    std::vector<Dataset> task_test_;   // test samples of each task's classes
    std::vector<Dataset> union_test_;  // test samples of tasks 0..t
};

struct TmcRun {
    TangentModel composed;
    MethodRow row;
};

// One tangent component per task from the anchor, folded autoregressively
// with the 1/t schedule. Components train from zeros independently; with
// `parallel` they train concurrently and fold in task order afterwards,
// producing bit-identical deltas.
TmcRun run_tmc_detailed(const TaskSequence& seq, const Dataset& test_pool,
                        const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                        const HarnessOptions& options = {});

RunResult run_tmc(const TaskSequence& seq, const Dataset& test_pool,
                  const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                  const HarnessOptions& options = {});

// Sequential variant: each component initializes at the previous composed
// delta instead of zeros.
RunResult run_tmc_seq(const TaskSequence& seq, const Dataset& test_pool,
                      const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                      const HarnessOptions& options = {});

enum class BaselineMethod { naive_seq, soup, ens_logit, ens_softmax, tme, tmc_fc };

std::string to_string(BaselineMethod m);
BaselineMethod baseline_from_string(const std::string& s);

RunResult run_baseline(const TaskSequence& seq, const Dataset& test_pool,
                       const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                       BaselineMethod method, const HarnessOptions& options = {});

struct UnlearnReport {
    struct Entry {
        int task_id = 0;
        double acc_on_task_before = 0.0;
        double acc_on_task_after = 0.0;
        double acc_remaining_after = 0.0;
        double acc_remaining_fresh = 0.0;  // fresh recomposition of the survivors
        double max_logit_diff = 0.0;       // unlearned vs fresh, over the pool
        bool argmax_identical = false;
        std::uint64_t data_accesses_during_unlearn = 0;
    };
    std::vector<Entry> entries;
};

// Runs TMC with the component log, then unlearns each task in turn and
// compares against a fresh composition of the remaining components.
UnlearnReport demo_unlearn(const TaskSequence& seq, const Dataset& test_pool,
                           const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg);

// Non-linear pre-training on a held-out split followed by a head
// re-initialization whenever the downstream class count differs. The result
// is the frozen anchor every component shares.
std::shared_ptr<const BaseModel> pretrain_anchor(const Dataset& pretrain_data, int downstream_classes,
                                                 const std::vector<int>& hidden,
                                                 const TrainConfig& cfg, std::uint64_t init_seed,
                                                 std::uint64_t head_seed);

// Median per-sample latency of a predictor over the dataset.
double measure_inference_us(const Predictor& p, const Dataset& dataset, int repetitions);

}  // namespace tmc
