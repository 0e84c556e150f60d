#include "tmc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tmc/errors.hpp"

namespace tmc {

std::atomic<std::uint64_t> Dataset::access_counter_{0};

Dataset::Dataset(std::vector<double> features_flat, int feature_dim, std::vector<int> labels,
                 int num_classes, std::vector<std::string> class_names)
    : features_(std::move(features_flat)),
      feature_dim_(feature_dim),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      class_names_(std::move(class_names)) {
    if (feature_dim_ <= 0) throw DataError("Dataset: feature dim must be positive");
    if (num_classes_ <= 0) throw DataError("Dataset: class count must be positive");
    if (features_.size() != labels_.size() * static_cast<std::size_t>(feature_dim_))
        throw DataError("Dataset: feature buffer size does not match label count");
    for (int y : labels_) {
        if (y < 0 || y >= num_classes_)
            throw DataError("Dataset: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes_) + ")");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    std::vector<double> feats;
    feats.reserve(indices.size() * feature_dim_);
    std::vector<int> labs;
    labs.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw DataError("Dataset::subset: index out of range");
        const double* row = features_.data() + i * static_cast<std::size_t>(feature_dim_);
        feats.insert(feats.end(), row, row + feature_dim_);
        labs.push_back(labels_[i]);
    }
    return Dataset(std::move(feats), feature_dim_, std::move(labs), num_classes_, class_names_);
}

Dataset Dataset::filter_classes(std::span<const int> classes) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i) {
        if (std::find(classes.begin(), classes.end(), labels_[i]) != classes.end()) idx.push_back(i);
    }
    return subset(idx);
}

Dataset Dataset::remap_classes(std::span<const int> classes) const {
    std::vector<int> map(num_classes_, -1);
    for (std::size_t k = 0; k < classes.size(); ++k) {
        if (classes[k] < 0 || classes[k] >= num_classes_)
            throw DataError("remap_classes: class out of range");
        map[classes[k]] = static_cast<int>(k);
    }
    std::vector<double> feats;
    std::vector<int> labs;
    for (std::size_t i = 0; i < size(); ++i) {
        if (map[labels_[i]] < 0) continue;
        const double* row = features_.data() + i * static_cast<std::size_t>(feature_dim_);
        feats.insert(feats.end(), row, row + feature_dim_);
        labs.push_back(map[labels_[i]]);
    }
    return Dataset(std::move(feats), feature_dim_, std::move(labs), static_cast<int>(classes.size()));
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& d, double second_fraction,
                                             std::uint64_t seed) {
    if (!(second_fraction >= 0.0 && second_fraction <= 1.0))
        throw ConfigError("stratified_split: fraction must be in [0,1]");
    std::vector<std::vector<std::size_t>> by_class(d.num_classes());
    for (std::size_t i = 0; i < d.size(); ++i) by_class[d.label(i)].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> first, second;
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t take = static_cast<std::size_t>(
            std::llround(second_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < take ? second : first).push_back(idx[i]);
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {d.subset(first), d.subset(second)};
}

Dataset generate_synthetic(const SyntheticSpec& params, std::uint64_t seed) {
    if (params.samples_per_class <= 0) throw DataError("generate_synthetic: samples_per_class must be positive");
    if (params.dim <= 0) throw DataError("generate_synthetic: dim must be positive");
    if (params.noise < 0.0) throw DataError("generate_synthetic: noise must be nonnegative");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    if (params.kind == GeneratorKind::two_spirals) {
        if (params.classes != 2) throw DataError("generate_synthetic: two_spirals requires 2 classes");
        if (params.dim < 2) throw DataError("generate_synthetic: two_spirals requires dim >= 2");
        std::vector<double> feats;
        std::vector<int> labs;
        const int n = params.samples_per_class;
        std::uniform_real_distribution<double> unif(0.05, 1.0);
        for (int c = 0; c < 2; ++c) {
            const double phase = c == 0 ? 0.0 : M_PI;
            for (int i = 0; i < n; ++i) {
                const double r = unif(rng);
                const double angle = r * params.turns * 2.0 * M_PI + phase;
                std::vector<double> x(params.dim, 0.0);
                x[0] = 4.0 * r * std::cos(angle) + params.noise * normal(rng);
                x[1] = 4.0 * r * std::sin(angle) + params.noise * normal(rng);
                for (int d = 2; d < params.dim; ++d) x[d] = params.noise * normal(rng);
                feats.insert(feats.end(), x.begin(), x.end());
                labs.push_back(c);
            }
        }
        return Dataset(std::move(feats), params.dim, std::move(labs), 2);
    }

    if (params.classes < 2) throw DataError("generate_synthetic: need at least 2 classes");
    // shared background direction, then class means on the separation sphere
    std::vector<double> offset(params.dim, 0.0);
    if (params.mean_offset != 0.0) {
        double norm_sq = 0.0;
        for (double& v : offset) {
            v = normal(rng);
            norm_sq += v * v;
        }
        const double inv = params.mean_offset / std::sqrt(std::max(norm_sq, 1e-30));
        for (double& v : offset) v *= inv;
    }
    std::vector<std::vector<double>> means(params.classes);
    for (auto& m : means) {
        m.resize(params.dim);
        double norm_sq = 0.0;
        for (double& v : m) {
            v = normal(rng);
            norm_sq += v * v;
        }
        const double inv = params.separation / std::sqrt(std::max(norm_sq, 1e-30));
        for (std::size_t d = 0; d < m.size(); ++d) m[d] = m[d] * inv + offset[d];
    }
    std::vector<double> feats;
    feats.reserve(static_cast<std::size_t>(params.classes) * params.samples_per_class * params.dim);
    std::vector<int> labs;
    labs.reserve(static_cast<std::size_t>(params.classes) * params.samples_per_class);
    for (int c = 0; c < params.classes; ++c) {
        for (int i = 0; i < params.samples_per_class; ++i) {
            for (int d = 0; d < params.dim; ++d)
                feats.push_back(means[c][d] + params.noise * normal(rng));
            labs.push_back(c);
        }
    }
    return Dataset(std::move(feats), params.dim, std::move(labs), params.classes);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv_dataset: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("load_csv_dataset: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_line(line);
    const auto label_it = std::find(header.begin(), header.end(), schema.label_column);
    if (label_it == header.end())
        throw DataError("load_csv_dataset: label column '" + schema.label_column + "' not found");
    const std::size_t label_idx = static_cast<std::size_t>(label_it - header.begin());
    const int feature_dim = static_cast<int>(header.size()) - 1;
    if (feature_dim <= 0) throw DataError("load_csv_dataset: no feature columns");

    std::vector<double> feats;
    std::vector<int> labs;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size())
            throw DataError("load_csv_dataset: ragged row at line " + std::to_string(line_no));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            std::size_t pos = 0;
            if (i == label_idx) {
                int y = 0;
                try {
                    y = std::stoi(cells[i], &pos);
                } catch (const std::exception&) {
                    throw DataError("load_csv_dataset: non-integer label at line " + std::to_string(line_no));
                }
                if (pos != cells[i].size())
                    throw DataError("load_csv_dataset: non-integer label at line " + std::to_string(line_no));
                labs.push_back(y);
            } else {
                double v = 0.0;
                try {
                    v = std::stod(cells[i], &pos);
                } catch (const std::exception&) {
                    throw DataError("load_csv_dataset: non-numeric cell at line " + std::to_string(line_no));
                }
                if (pos != cells[i].size())
                    throw DataError("load_csv_dataset: non-numeric cell at line " + std::to_string(line_no));
                feats.push_back(v);
            }
        }
    }
    if (labs.empty()) throw DataError("load_csv_dataset: no data rows in " + path.string());
    for (int y : labs) {
        if (y < 0) throw DataError("load_csv_dataset: negative label");
        if (schema.num_classes > 0 && y >= schema.num_classes)
            throw DataError("load_csv_dataset: label " + std::to_string(y) + " outside the declared " +
                            std::to_string(schema.num_classes) + " classes");
    }
    const int num_classes = schema.num_classes > 0
                                ? schema.num_classes
                                : *std::max_element(labs.begin(), labs.end()) + 1;
    Dataset d(std::move(feats), feature_dim, std::move(labs), num_classes);
    if (!schema.normalize) return d;
    return apply_standardization(d, fit_standardization(d));
}

Standardization fit_standardization(const Dataset& train) {
    const int dim = train.feature_dim();
    Standardization s;
    s.mean.assign(dim, 0.0);
    s.stddev.assign(dim, 0.0);
    const double n = static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto row = train.sample(i);
        for (int d = 0; d < dim; ++d) s.mean[d] += row[d];
    }
    for (int d = 0; d < dim; ++d) s.mean[d] /= n;
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto row = train.sample(i);
        for (int d = 0; d < dim; ++d) {
            const double r = row[d] - s.mean[d];
            s.stddev[d] += r * r;
        }
    }
    for (int d = 0; d < dim; ++d) {
        s.stddev[d] = std::sqrt(s.stddev[d] / n);
        if (s.stddev[d] == 0.0) s.stddev[d] = 1.0;  // constant column stays centered
    }
    return s;
}

Dataset apply_standardization(const Dataset& d, const Standardization& s) {
    if (static_cast<int>(s.mean.size()) != d.feature_dim())
        throw DataError("apply_standardization: dim mismatch");
    std::vector<double> feats;
    feats.reserve(d.size() * d.feature_dim());
    for (std::size_t i = 0; i < d.size(); ++i) {
        auto row = d.sample(i);
        for (int k = 0; k < d.feature_dim(); ++k)
            feats.push_back((row[k] - s.mean[k]) / s.stddev[k]);
    }
    return Dataset(std::move(feats), d.feature_dim(), d.labels(), d.num_classes(), d.class_names());
}

std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::class_incremental: return "class_incremental";
        case Protocol::data_incremental: return "data_incremental";
        case Protocol::task_incremental: return "task_incremental";
    }
    return "unknown";
}

Protocol protocol_from_string(const std::string& s) {
    if (s == "class_incremental") return Protocol::class_incremental;
    if (s == "data_incremental") return Protocol::data_incremental;
    if (s == "task_incremental") return Protocol::task_incremental;
    throw ConfigError("unknown protocol '" + s + "'");
}

TaskSequence split_class_incremental(const Dataset& d, int num_tasks, std::uint64_t seed,
                                     Protocol protocol) {
    if (protocol == Protocol::data_incremental)
        throw ConfigError("split_class_incremental: wrong protocol");
    const int k = d.num_classes();
    if (num_tasks < 1) throw ConfigError("split_class_incremental: need at least one task");
    if (num_tasks > k)
        throw ConfigError("split_class_incremental: more tasks (" + std::to_string(num_tasks) +
                          ") than classes (" + std::to_string(k) + ")");

    std::vector<int> classes(k);
    std::iota(classes.begin(), classes.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(classes.begin(), classes.end(), rng);

    TaskSequence seq;
    seq.protocol = protocol;
    seq.global_class_count = k;
    seq.split_seed = seed;
    // chunk sizes differ by at most one
    const int base_size = k / num_tasks;
    const int extra = k % num_tasks;
    std::size_t cursor = 0;
    for (int t = 0; t < num_tasks; ++t) {
        const int take = base_size + (t < extra ? 1 : 0);
        std::vector<int> subset(classes.begin() + cursor, classes.begin() + cursor + take);
        cursor += take;
        std::sort(subset.begin(), subset.end());
        Task task;
        task.train = d.filter_classes(subset);
        if (task.train.size() == 0)
            throw DataError("split_class_incremental: task " + std::to_string(t + 1) + " has no samples");
        task.class_subset = std::move(subset);
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

TaskSequence split_data_incremental(const Dataset& d, int num_tasks, std::uint64_t seed) {
    if (num_tasks < 1) throw ConfigError("split_data_incremental: need at least one task");
    if (d.size() < static_cast<std::size_t>(num_tasks))
        throw DataError("split_data_incremental: fewer samples than tasks");

    std::vector<std::size_t> perm(d.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<int> all_classes(d.num_classes());
    std::iota(all_classes.begin(), all_classes.end(), 0);

    TaskSequence seq;
    seq.protocol = Protocol::data_incremental;
    seq.global_class_count = d.num_classes();
    seq.split_seed = seed;
    const std::size_t base_size = d.size() / num_tasks;
    const std::size_t extra = d.size() % num_tasks;
    std::size_t cursor = 0;
    for (int t = 0; t < num_tasks; ++t) {
        const std::size_t take = base_size + (static_cast<std::size_t>(t) < extra ? 1 : 0);
        std::vector<std::size_t> idx(perm.begin() + cursor, perm.begin() + cursor + take);
        cursor += take;
        Task task;
        task.train = d.subset(idx);
        task.class_subset = all_classes;
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

TaskSequence make_task_sequence(Protocol protocol, const Dataset& d, int num_tasks,
                                std::uint64_t seed) {
    if (protocol == Protocol::data_incremental) return split_data_incremental(d, num_tasks, seed);
    return split_class_incremental(d, num_tasks, seed, protocol);
}

}  // namespace tmc
