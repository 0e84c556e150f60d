#include "tmc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "tmc/errors.hpp"

namespace tmc {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

ContinualEvaluator::ContinualEvaluator(const TaskSequence& seq, const Dataset& test_pool)
    : protocol_(seq.protocol), test_pool_(test_pool) {
    std::vector<int> seen;
    for (const auto& task : seq.tasks) {
        class_subsets_.push_back(task.class_subset);
        task_test_.push_back(test_pool_.filter_classes(task.class_subset));
        if (protocol_ == Protocol::data_incremental) {
            union_test_.push_back(test_pool_);
        } else {
            for (int c : task.class_subset) {
                if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
            }
            std::vector<int> sorted = seen;
            std::sort(sorted.begin(), sorted.end());
            union_test_.push_back(test_pool_.filter_classes(sorted));
        }
    }
}

double ContinualEvaluator::after_task(const Predictor& p, int tasks_seen) const {
    if (tasks_seen < 1 || tasks_seen > static_cast<int>(union_test_.size()))
        throw std::invalid_argument("ContinualEvaluator: tasks_seen out of range");
    if (protocol_ == Protocol::task_incremental) {
        // task id is available at test time; restrict the argmax per task
        double acc = 0.0;
        for (int t = 0; t < tasks_seen; ++t)
            acc += evaluate(p, task_test_[t], std::span<const int>(class_subsets_[t]));
        return acc / tasks_seen;
    }
    return evaluate(p, union_test_[tasks_seen - 1]);
}

double ContinualEvaluator::on_task(const Predictor& p, int task_index) const {
    if (protocol_ == Protocol::task_incremental)
        return evaluate(p, task_test_[task_index], std::span<const int>(class_subsets_[task_index]));
    return evaluate(p, task_test_[task_index]);
}

std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::naive_seq: return "naive_seq";
        case BaselineMethod::soup: return "soup";
        case BaselineMethod::ens_logit: return "ens_logit";
        case BaselineMethod::ens_softmax: return "ens_softmax";
        case BaselineMethod::tme: return "tme";
        case BaselineMethod::tmc_fc: return "tmc_fc";
    }
    return "unknown";
}

BaselineMethod baseline_from_string(const std::string& s) {
    if (s == "naive_seq") return BaselineMethod::naive_seq;
    if (s == "soup") return BaselineMethod::soup;
    if (s == "ens_logit") return BaselineMethod::ens_logit;
    if (s == "ens_softmax") return BaselineMethod::ens_softmax;
    if (s == "tme") return BaselineMethod::tme;
    if (s == "tmc_fc") return BaselineMethod::tmc_fc;
    throw ConfigError("unknown method '" + s + "'");
}

namespace {

TrainConfig task_config(const TrainConfig& cfg, int task_index, bool component_log) {
    TrainConfig c = cfg;
    c.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(task_index));
    c.log_components = component_log;
    return c;
}

// Tracks how many model-sized deltas the driver holds at once.
struct DeltaCounter {
    int live = 0;
    int peak = 0;
    void acquire(int n = 1) {
        live += n;
        peak = std::max(peak, live);
    }
    void release(int n = 1) { live -= n; }
};

// running <- (l1 * component + l2 * running) / (l1 + l2), in place; the same
// arithmetic as compose_pair without a third buffer.
void fold_in_place(std::vector<double>& running, std::span<const double> component, int step) {
    const CompositionWeights w = CompositionWeights::default_schedule(step);
    const double total = w.lambda1 + w.lambda2;
    const double c1 = w.lambda1 / total;
    const double c2 = w.lambda2 / total;
    for (std::size_t i = 0; i < running.size(); ++i)
        running[i] = c1 * component[i] + c2 * running[i];
}

Predictor delta_predictor(const std::shared_ptr<const BaseModel>& base,
                          const std::vector<double>& delta) {
    auto ev = std::make_shared<Evaluator>(base->spec());
    const int k = base->spec().output_dim();
    // captures `delta` by reference; valid only within the driver's scope
    return [ev, base, &delta, k](std::span<const double> x) {
        std::vector<double> primal(k), tangent(k);
        ev->jvp(base->weights().values(), delta, x, primal, tangent);
        for (int j = 0; j < k; ++j) primal[j] += tangent[j];
        return primal;
    };
}

struct TangentDriverResult {
    std::vector<double> composed_delta;
    std::vector<ComponentRecord> records;  // populated when logging
    MethodRow row;
};

// Shared driver for tmc / tmc_seq / tmc_fc.
TangentDriverResult run_tangent_method(const TaskSequence& seq, const Dataset& test_pool,
                                       const std::shared_ptr<const BaseModel>& base,
                                       const TrainConfig& cfg, const HarnessOptions& options,
                                       bool sequential_init, bool head_only,
                                       const std::string& method_name) {
    if (base->spec().output_dim() != seq.global_class_count)
        throw ConfigError("harness: network head width " + std::to_string(base->spec().output_dim()) +
                          " does not match the sequence's " + std::to_string(seq.global_class_count) +
                          " classes");
    const int num_tasks = static_cast<int>(seq.tasks.size());
    const std::size_t dim = base->spec().param_count();
    ContinualEvaluator evaluator(seq, test_pool);

    TangentDriverResult result;
    result.row.method = method_name;
    result.row.task_reports.resize(num_tasks);

    TrainConfig base_cfg = cfg;
    base_cfg.head_only = head_only || cfg.head_only;

    DeltaCounter counter;
    std::vector<double> running(dim, 0.0);
    counter.acquire();  // the running composition

    const auto t0 = std::chrono::steady_clock::now();
    if (options.parallel && !sequential_init) {
        // train every component independently, then fold in task order
        std::vector<TangentModel> components;
        components.reserve(num_tasks);
        {
            std::vector<std::optional<TangentModel>> slots(num_tasks);
            std::vector<TrainReport> reports(num_tasks);
            std::atomic<int> next{0};
            const unsigned jobs = options.jobs > 0
                                      ? static_cast<unsigned>(options.jobs)
                                      : std::max(1u, std::thread::hardware_concurrency());
            auto worker = [&] {
                for (;;) {
                    const int t = next.fetch_add(1);
                    if (t >= num_tasks) return;
                    slots[t] = train_tangent(base, seq.tasks[t].train,
                                             task_config(base_cfg, t, options.component_log), nullptr,
                                             t + 1, &reports[t]);
                }
            };
            std::vector<std::thread> pool;
            for (unsigned j = 0; j < std::min<unsigned>(jobs, num_tasks); ++j) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
            counter.acquire(num_tasks);
            for (int t = 0; t < num_tasks; ++t) {
                components.push_back(std::move(*slots[t]));
                result.row.task_reports[t] = std::move(reports[t]);
            }
        }
        for (int t = 0; t < num_tasks; ++t) {
            const TangentModel& comp = components[t];
            result.row.component_accuracy.push_back(evaluator.on_task(predictor_of(comp), t));
            fold_in_place(running, comp.delta().values(), t + 1);
            if (options.component_log) {
                const double c1 = 1.0 / (t + 1.0);
                const double c2 = 1.0 - c1;
                for (auto& rec : result.records) rec.coeff *= c2;
                result.records.push_back({t + 1, c1, comp.delta()});
            }
            result.row.accuracy_after_task.push_back(
                evaluator.after_task(delta_predictor(base, running), t + 1));
        }
        counter.release(num_tasks);
    } else {
        for (int t = 0; t < num_tasks; ++t) {
            ParamVector init;
            const ParamVector* init_ptr = nullptr;
            if (sequential_init && t > 0) {
                init = ParamVector(running);
                init_ptr = &init;
            }
            TangentModel comp =
                train_tangent(base, seq.tasks[t].train, task_config(base_cfg, t, options.component_log),
                              init_ptr, t + 1, &result.row.task_reports[t]);
            counter.acquire();
            result.row.component_accuracy.push_back(evaluator.on_task(predictor_of(comp), t));
            fold_in_place(running, comp.delta().values(), t + 1);
            if (options.component_log) {
                const double c1 = 1.0 / (t + 1.0);
                const double c2 = 1.0 - c1;
                for (auto& rec : result.records) rec.coeff *= c2;
                result.records.push_back({t + 1, c1, comp.delta()});
                counter.acquire();  // retained component delta
            }
            counter.release();  // current component folded and discarded
            result.row.accuracy_after_task.push_back(
                evaluator.after_task(delta_predictor(base, running), t + 1));
        }
    }
    const auto t1 = std::chrono::steady_clock::now();

    result.row.train_seconds = std::chrono::duration<double>(t1 - t0).count();
    result.row.final_accuracy = result.row.accuracy_after_task.back();
    result.row.peak_live_deltas = counter.peak;
    if (options.measure_timing)
        result.row.inference_us_per_sample =
            measure_inference_us(delta_predictor(base, running), test_pool, options.timing_repetitions);
    result.composed_delta = std::move(running);
    return result;
}

RunResult make_result(const TaskSequence& seq, std::uint64_t seed, MethodRow row) {
    RunResult r;
    r.protocol = seq.protocol;
    r.num_tasks = static_cast<int>(seq.tasks.size());
    r.seed = seed;
    r.rows.push_back(std::move(row));
    return r;
}

}  // namespace

TmcRun run_tmc_detailed(const TaskSequence& seq, const Dataset& test_pool,
                        const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                        const HarnessOptions& options) {
    TangentDriverResult d =
        run_tangent_method(seq, test_pool, base, cfg, options, false, false, "tmc");
    std::optional<std::vector<ComponentRecord>> log;
    if (options.component_log) log = std::move(d.records);
    TangentModel composed(base, ParamVector(std::move(d.composed_delta)),
                          static_cast<int>(seq.tasks.size()), std::move(log));
    return {std::move(composed), std::move(d.row)};
}

RunResult run_tmc(const TaskSequence& seq, const Dataset& test_pool,
                  const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                  const HarnessOptions& options) {
    TmcRun run = run_tmc_detailed(seq, test_pool, base, cfg, options);
    return make_result(seq, cfg.seed, std::move(run.row));
}

RunResult run_tmc_seq(const TaskSequence& seq, const Dataset& test_pool,
                      const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                      const HarnessOptions& options) {
    TangentDriverResult d =
        run_tangent_method(seq, test_pool, base, cfg, options, true, false, "tmc_seq");
    return make_result(seq, cfg.seed, std::move(d.row));
}

RunResult run_baseline(const TaskSequence& seq, const Dataset& test_pool,
                       const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg,
                       BaselineMethod method, const HarnessOptions& options) {
    if (method == BaselineMethod::tmc_fc) {
        TangentDriverResult d =
            run_tangent_method(seq, test_pool, base, cfg, options, false, true, "tmc_fc");
        return make_result(seq, cfg.seed, std::move(d.row));
    }

    const int num_tasks = static_cast<int>(seq.tasks.size());
    ContinualEvaluator evaluator(seq, test_pool);
    MethodRow row;
    row.method = to_string(method);
    row.task_reports.resize(num_tasks);

    const auto t0 = std::chrono::steady_clock::now();
    Predictor final_predictor;

    if (method == BaselineMethod::naive_seq) {
        // one evolving model; the catastrophic-forgetting reference point
        BaseModel current = *base;
        for (int t = 0; t < num_tasks; ++t) {
            current = train_nonlinear(current, seq.tasks[t].train, task_config(cfg, t, false),
                                      &row.task_reports[t]);
            Predictor p = predictor_of(current);
            row.component_accuracy.push_back(evaluator.on_task(p, t));
            row.accuracy_after_task.push_back(evaluator.after_task(p, t + 1));
        }
        final_predictor = predictor_of(current);
    } else if (method == BaselineMethod::tme) {
        std::vector<TangentModel> members;
        for (int t = 0; t < num_tasks; ++t) {
            members.push_back(train_tangent(base, seq.tasks[t].train, task_config(cfg, t, false),
                                            nullptr, t + 1, &row.task_reports[t]));
            row.component_accuracy.push_back(evaluator.on_task(predictor_of(members.back()), t));
            ModelCollection c = ModelCollection::of_tangent(members);
            row.accuracy_after_task.push_back(
                evaluator.after_task(softmax_ensemble_predictor(c), t + 1));
        }
        final_predictor = softmax_ensemble_predictor(ModelCollection::of_tangent(std::move(members)));
    } else {
        // soup / ens_logit / ens_softmax over non-linear fine-tuned members
        std::vector<BaseModel> members;
        for (int t = 0; t < num_tasks; ++t) {
            members.push_back(train_nonlinear(*base, seq.tasks[t].train, task_config(cfg, t, false),
                                              &row.task_reports[t]));
            row.component_accuracy.push_back(evaluator.on_task(predictor_of(members.back()), t));
            Predictor p;
            if (method == BaselineMethod::soup) {
                const std::vector<double> w(members.size(), 1.0 / members.size());
                p = predictor_of(soup(members, w));
            } else if (method == BaselineMethod::ens_logit) {
                p = logit_ensemble_predictor(ModelCollection::of_nonlinear(members));
            } else {
                p = softmax_ensemble_predictor(ModelCollection::of_nonlinear(members));
            }
            row.accuracy_after_task.push_back(evaluator.after_task(p, t + 1));
            if (t == num_tasks - 1) final_predictor = std::move(p);
        }
    }
    const auto t1 = std::chrono::steady_clock::now();

    row.train_seconds = std::chrono::duration<double>(t1 - t0).count();
    row.final_accuracy = row.accuracy_after_task.back();
    if (options.measure_timing)
        row.inference_us_per_sample =
            measure_inference_us(final_predictor, test_pool, options.timing_repetitions);
    return make_result(seq, cfg.seed, std::move(row));
}

UnlearnReport demo_unlearn(const TaskSequence& seq, const Dataset& test_pool,
                           const std::shared_ptr<const BaseModel>& base, const TrainConfig& cfg) {
    HarnessOptions options;
    options.component_log = true;
    TmcRun run = run_tmc_detailed(seq, test_pool, base, cfg, options);
    ContinualEvaluator evaluator(seq, test_pool);
    const int num_tasks = static_cast<int>(seq.tasks.size());

    UnlearnReport report;
    for (int t = 0; t < num_tasks; ++t) {
        UnlearnReport::Entry entry;
        entry.task_id = t + 1;
        entry.acc_on_task_before = evaluator.on_task(predictor_of(run.composed), t);

        const std::uint64_t accesses_before = Dataset::access_count();
        TangentModel unlearned = unlearn(run.composed, t + 1, /*rescale=*/true);
        entry.data_accesses_during_unlearn = Dataset::access_count() - accesses_before;

        // oracle: recompose the survivors from scratch with uniform weights
        std::vector<TangentModel> survivors;
        for (const auto& rec : run.composed.component_log()) {
            if (rec.task_id == t + 1) continue;
            survivors.push_back(TangentModel::component(base, rec.delta, rec.task_id, false));
        }
        const std::vector<double> uniform(survivors.size(), 1.0 / survivors.size());
        TangentModel fresh = compose_many(survivors, uniform);

        double max_diff = 0.0;
        bool argmax_same = true;
        for (std::size_t i = 0; i < test_pool.size(); ++i) {
            const auto x = test_pool.sample(i);
            const std::vector<double> a = tangent_forward(unlearned, x);
            const std::vector<double> b = tangent_forward(fresh, x);
            for (std::size_t j = 0; j < a.size(); ++j) max_diff = std::max(max_diff, std::abs(a[j] - b[j]));
            const auto am_a = std::max_element(a.begin(), a.end()) - a.begin();
            const auto am_b = std::max_element(b.begin(), b.end()) - b.begin();
            if (am_a != am_b) argmax_same = false;
        }
        entry.max_logit_diff = max_diff;
        entry.argmax_identical = argmax_same;
        entry.acc_on_task_after = evaluator.on_task(predictor_of(unlearned), t);

        // union of the remaining tasks' test classes
        std::vector<int> remaining_classes;
        for (int u = 0; u < num_tasks; ++u) {
            if (u == t) continue;
            for (int c : seq.tasks[u].class_subset) {
                if (std::find(remaining_classes.begin(), remaining_classes.end(), c) ==
                    remaining_classes.end())
                    remaining_classes.push_back(c);
            }
        }
        std::sort(remaining_classes.begin(), remaining_classes.end());
        const Dataset remaining_test = test_pool.filter_classes(remaining_classes);
        entry.acc_remaining_after = evaluate(predictor_of(unlearned), remaining_test);
        entry.acc_remaining_fresh = evaluate(predictor_of(fresh), remaining_test);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

std::shared_ptr<const BaseModel> pretrain_anchor(const Dataset& pretrain_data, int downstream_classes,
                                                 const std::vector<int>& hidden,
                                                 const TrainConfig& cfg, std::uint64_t init_seed,
                                                 std::uint64_t head_seed) {
    const NetworkSpec spec = make_mlp(pretrain_data.feature_dim(), hidden, pretrain_data.num_classes());
    BaseModel model(spec, he_init(spec, init_seed));
    model = train_nonlinear(model, pretrain_data, cfg);
    if (downstream_classes != pretrain_data.num_classes())
        model = reinit_head(model, downstream_classes, head_seed);
    return std::make_shared<const BaseModel>(std::move(model));
}

double measure_inference_us(const Predictor& p, const Dataset& dataset, int repetitions) {
    if (repetitions < 1) throw ConfigError("measure_inference_us: repetitions must be >= 1");
    if (dataset.size() == 0) throw DataError("measure_inference_us: empty dataset");
    // warmup
    for (std::size_t i = 0; i < std::min<std::size_t>(dataset.size(), 16); ++i) p(dataset.sample(i));
    std::vector<double> samples_us;
    samples_us.reserve(repetitions);
    for (int r = 0; r < repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            volatile double sink = p(dataset.sample(i))[0];
            (void)sink;
        }
        const auto t1 = std::chrono::steady_clock::now();
        samples_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() /
                             static_cast<double>(dataset.size()));
    }
    std::nth_element(samples_us.begin(), samples_us.begin() + samples_us.size() / 2, samples_us.end());
    return samples_us[samples_us.size() / 2];
}

}  // namespace tmc
