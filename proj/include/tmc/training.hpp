#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "tmc/data.hpp"
#include "tmc/losses.hpp"
#include "tmc/network.hpp"
#include "tmc/param_vector.hpp"
#include "tmc/tangent.hpp"

namespace tmc {

struct LrScheduleEntry {
    int epoch = 0;      // 1-based epoch at whose start the factor applies
    double factor = 1.0;
};

struct OptimizerSpec {
    enum class Kind { sgd, adam };

    Kind kind = Kind::adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;  // sgd
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<LrScheduleEntry> schedule;

    static OptimizerSpec adam(double lr = 1e-3);
    static OptimizerSpec sgd(double lr = 1e-2, double momentum = 0.0);
    // the x0.1 decays at epochs 25 and 40
    static std::vector<LrScheduleEntry> default_decay();
};

void validate(const OptimizerSpec& spec);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 0;
    LossSpec loss = LossSpec::rsl(1.0, 25.0);
    OptimizerSpec optimizer = OptimizerSpec::adam();
    enum class InitMode { anchor_zero, previous_composed };
    InitMode init_mode = InitMode::anchor_zero;
    bool head_only = false;
    bool log_components = false;  // retain per-task deltas for unlearning

    // Adam + rescaled square loss with the default decay schedule.
    static TrainConfig tangent_defaults();
    // SGD + cross-entropy with the default decay schedule.
    static TrainConfig nonlinear_defaults();
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
};

// In-place first-order update rules over raw buffers; owns the moment state.
class Optimizer {
public:
    Optimizer(OptimizerSpec spec, std::size_t dim);

    void step(std::span<double> params, std::span<const double> grad, double lr);

    const OptimizerSpec& spec() const { return spec_; }

private:
    OptimizerSpec spec_;
    std::vector<double> m_;  // sgd momentum / adam first moment
    std::vector<double> v_;  // adam second moment
    long step_count_ = 0;
};

// Value-level optimizer state for the public step operation.
class OptimizerState {
public:
    OptimizerState(OptimizerSpec spec, ParamVector params);

    const ParamVector& params() const { return params_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    friend ParamVector optimizer_step(OptimizerState& state, const ParamVector& grad);

private:
    Optimizer opt_;
    ParamVector params_;
    double lr_;
};

// One standard update; returns the new parameters (also kept in the state).
ParamVector optimizer_step(OptimizerState& state, const ParamVector& grad);

// Minimizes the convex objective sum L(h_delta(x), y) over delta by mini-batch
// first-order optimization at the frozen anchor. `init` defaults to zeros.
TangentModel train_tangent(const std::shared_ptr<const BaseModel>& base, const Dataset& task,
                           const TrainConfig& cfg, const ParamVector* init = nullptr,
                           int task_id = 1, TrainReport* report = nullptr);

// Standard non-linear fine-tuning of w; the input model is untouched.
BaseModel train_nonlinear(const BaseModel& base, const Dataset& task, const TrainConfig& cfg,
                          TrainReport* report = nullptr);

}  // namespace tmc
