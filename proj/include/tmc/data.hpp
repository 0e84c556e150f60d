#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tmc {

// Fixed-dimension feature vectors with integer class labels. Feature reads go
// through sample(), which bumps a global access counter; the unlearning path
// is required to perform zero data accesses and the counter is how tests
// assert that.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<double> features_flat, int feature_dim, std::vector<int> labels,
            int num_classes, std::vector<std::string> class_names = {});

    std::size_t size() const { return labels_.size(); }
    int feature_dim() const { return feature_dim_; }
    int num_classes() const { return num_classes_; }

    std::span<const double> sample(std::size_t i) const {
        access_counter_.fetch_add(1, std::memory_order_relaxed);
        return {features_.data() + i * static_cast<std::size_t>(feature_dim_),
                static_cast<std::size_t>(feature_dim_)};
    }

    int label(std::size_t i) const { return labels_[i]; }
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<std::string>& class_names() const { return class_names_; }

    Dataset subset(std::span<const std::size_t> indices) const;
    // Samples whose label is in `classes`.
    Dataset filter_classes(std::span<const int> classes) const;
    // Samples of `classes` relabeled 0..classes.size()-1 in the given order.
    Dataset remap_classes(std::span<const int> classes) const;

    static std::uint64_t access_count() { return access_counter_.load(std::memory_order_relaxed); }

private:
    std::vector<double> features_;
    int feature_dim_ = 0;
    std::vector<int> labels_;
    int num_classes_ = 0;
    std::vector<std::string> class_names_;

    static std::atomic<std::uint64_t> access_counter_;
};

enum class GeneratorKind { gaussian_mixture, two_spirals };

struct SyntheticSpec {
    GeneratorKind kind = GeneratorKind::gaussian_mixture;
    int classes = 2;
    int dim = 2;
    int samples_per_class = 100;
    double noise = 0.5;
    // gaussian_mixture: class means sit on a sphere of this radius
    double separation = 3.0;
    // gaussian_mixture: magnitude of a class-independent offset shared by all
    // samples; nonzero values give the inputs a common background component
    double mean_offset = 0.0;
    // two_spirals: angular extent in turns
    double turns = 1.75;
};

Dataset generate_synthetic(const SyntheticSpec& params, std::uint64_t seed);

struct CsvSchema {
    std::string label_column = "label";
    bool normalize = false;  // per-column zero mean / unit variance
    int num_classes = 0;     // 0 = infer from the labels; otherwise labels >= this are errors
};

Dataset load_csv_dataset(const std::filesystem::path& path, const CsvSchema& schema);

// Column statistics computed on a training split, applied to any dataset.
struct Standardization {
    std::vector<double> mean;
    std::vector<double> stddev;
};

Standardization fit_standardization(const Dataset& train);
Dataset apply_standardization(const Dataset& d, const Standardization& s);

// Per-class seeded shuffle; the second part receives ~`second_fraction` of
// each class, so both parts stay balanced.
std::pair<Dataset, Dataset> stratified_split(const Dataset& d, double second_fraction,
                                             std::uint64_t seed);

enum class Protocol { class_incremental, data_incremental, task_incremental };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct Task {
    Dataset train;
    std::vector<int> class_subset;  // classes this task covers
};

// Ordered tasks under one incremental protocol. For class-/task-incremental
// the class subsets are pairwise disjoint; for data-incremental every subset
// is the full label space and the shards partition the sample set.
struct TaskSequence {
    Protocol protocol = Protocol::class_incremental;
    std::vector<Task> tasks;
    int global_class_count = 0;
    std::uint64_t split_seed = 0;
};

TaskSequence split_class_incremental(const Dataset& d, int num_tasks, std::uint64_t seed,
                                     Protocol protocol = Protocol::class_incremental);

TaskSequence split_data_incremental(const Dataset& d, int num_tasks, std::uint64_t seed);

TaskSequence make_task_sequence(Protocol protocol, const Dataset& d, int num_tasks,
                                std::uint64_t seed);

}  // namespace tmc
