#include "tmc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "tmc/errors.hpp"

namespace tmc {

OptimizerSpec OptimizerSpec::adam(double lr) {
    OptimizerSpec s;
    s.kind = Kind::adam;
    s.learning_rate = lr;
    s.schedule = default_decay();
    return s;
}

OptimizerSpec OptimizerSpec::sgd(double lr, double momentum) {
    OptimizerSpec s;
    s.kind = Kind::sgd;
    s.learning_rate = lr;
    s.momentum = momentum;
    s.schedule = default_decay();
    return s;
}

std::vector<LrScheduleEntry> OptimizerSpec::default_decay() { return {{25, 0.1}, {40, 0.1}}; }

void validate(const OptimizerSpec& spec) {
    if (!(spec.learning_rate >= 0.0) || !std::isfinite(spec.learning_rate))
        throw ConfigError("optimizer: learning rate must be finite and nonnegative");
    int prev_epoch = 0;
    for (const auto& entry : spec.schedule) {
        if (entry.epoch <= prev_epoch) throw ConfigError("optimizer: schedule epochs must be strictly increasing");
        if (!(entry.factor > 0.0)) throw ConfigError("optimizer: schedule factors must be positive");
        prev_epoch = entry.epoch;
    }
}

TrainConfig TrainConfig::tangent_defaults() {
    TrainConfig cfg;
    cfg.loss = LossSpec::rsl(1.0, 25.0);
    cfg.optimizer = OptimizerSpec::adam(1e-3);
    return cfg;
}

TrainConfig TrainConfig::nonlinear_defaults() {
    TrainConfig cfg;
    cfg.loss = LossSpec::cross_entropy();
    cfg.optimizer = OptimizerSpec::sgd(1e-2, 0.9);
    return cfg;
}

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    validate(cfg.loss);
    validate(cfg.optimizer);
}

Optimizer::Optimizer(OptimizerSpec spec, std::size_t dim) : spec_(std::move(spec)) {
    validate(spec_);
    if (spec_.kind == OptimizerSpec::Kind::adam) {
        m_.assign(dim, 0.0);
        v_.assign(dim, 0.0);
    } else if (spec_.momentum != 0.0) {
        m_.assign(dim, 0.0);
    }
}

void Optimizer::step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != grad.size()) throw std::invalid_argument("optimizer: dim mismatch");
    if (spec_.kind == OptimizerSpec::Kind::sgd) {
        if (spec_.momentum == 0.0) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
        } else {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i] = spec_.momentum * m_[i] + grad[i];
                params[i] -= lr * m_[i];
            }
        }
        return;
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m_[i] = spec_.beta1 * m_[i] + (1.0 - spec_.beta1) * g;
        v_[i] = spec_.beta2 * v_[i] + (1.0 - spec_.beta2) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + spec_.epsilon);
    }
}

OptimizerState::OptimizerState(OptimizerSpec spec, ParamVector params)
    : opt_(spec, params.dim()), params_(std::move(params)), lr_(spec.learning_rate) {}

ParamVector optimizer_step(OptimizerState& state, const ParamVector& grad) {
    if (grad.dim() != state.params_.dim()) throw std::invalid_argument("optimizer_step: dim mismatch");
    std::vector<double> p(state.params_.raw());
    state.opt_.step(p, grad.values(), state.lr_);
    state.params_ = ParamVector(std::move(p));
    return state.params_;
}

namespace {

void check_task(const Dataset& task, const NetworkSpec& spec) {
    if (task.size() == 0) throw DataError("train: empty task dataset");
    if (task.feature_dim() != spec.input_dim())
        throw DataError("train: feature dim " + std::to_string(task.feature_dim()) +
                        " does not match network input " + std::to_string(spec.input_dim()));
    for (std::size_t i = 0; i < task.size(); ++i) {
        if (task.label(i) >= spec.output_dim())
            throw DataError("train: label " + std::to_string(task.label(i)) +
                            " outside the network's " + std::to_string(spec.output_dim()) + " classes");
    }
}

double apply_schedule(const OptimizerSpec& spec, int epoch, double lr) {
    for (const auto& entry : spec.schedule) {
        if (entry.epoch == epoch) lr *= entry.factor;
    }
    return lr;
}

void check_divergence(double mean_loss) {
    if (!std::isfinite(mean_loss))
        throw NumericError("train: loss became non-finite; aborting");
    if (mean_loss > 1e6)
        throw NumericError("train: loss " + std::to_string(mean_loss) + " exceeded divergence bound 1e6");
}

// Shared mini-batch driver. `grad_fn(index, grad_accum)` returns the sample
// loss and accumulates its parameter gradient.
template <typename GradFn>
void run_epochs(const Dataset& task, const TrainConfig& cfg, std::size_t dim, bool head_mask,
                const NetworkSpec& spec, std::vector<double>& params, TrainReport* report,
                GradFn&& grad_fn) {
    Optimizer opt(cfg.optimizer, dim);
    double lr = cfg.optimizer.learning_rate;

    std::vector<std::size_t> order(task.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);

    std::vector<double> grad(dim);
    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        lr = apply_schedule(cfg.optimizer, epoch, lr);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) batch_loss += grad_fn(order[i], grad);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (double& g : grad) g *= inv;
            if (head_mask) mask_to_head(spec, grad);
            check_divergence(batch_loss * inv);
            loss_sum += batch_loss;
            opt.step(params, grad, lr);
        }
        if (report)
            report->epochs.push_back({epoch, loss_sum / static_cast<double>(task.size()), lr});
    }
    if (report) {
        const auto t1 = std::chrono::steady_clock::now();
        report->wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    }
}

}  // namespace

TangentModel train_tangent(const std::shared_ptr<const BaseModel>& base, const Dataset& task,
                           const TrainConfig& cfg, const ParamVector* init, int task_id,
                           TrainReport* report) {
    validate(cfg);
    const NetworkSpec& spec = base->spec();
    check_task(task, spec);

    std::vector<double> delta(spec.param_count(), 0.0);
    if (init) {
        if (init->dim() != spec.param_count())
            throw std::invalid_argument("train_tangent: init dim mismatch");
        delta = init->raw();
    }

    Evaluator ev(spec);
    std::span<const double> w = base->weights().values();
    const int k = spec.output_dim();
    std::vector<double> primal(k), tangent(k), cot(k);

    run_epochs(task, cfg, spec.param_count(), cfg.head_only, spec, delta, report,
               [&](std::size_t i, std::vector<double>& grad) {
                   auto x = task.sample(i);
                   ev.jvp(w, delta, x, primal, tangent);
                   for (int j = 0; j < k; ++j) primal[j] += tangent[j];
                   const double loss = loss_value(cfg.loss, primal, task.label(i));
                   loss_grad_into(cfg.loss, primal, task.label(i), cot);
                   ev.vjp_accumulate(w, x, cot, grad);
                   return loss;
               });

    return TangentModel::component(base, ParamVector(std::move(delta)), task_id, cfg.log_components);
}

BaseModel train_nonlinear(const BaseModel& base, const Dataset& task, const TrainConfig& cfg,
                          TrainReport* report) {
    validate(cfg);
    const NetworkSpec& spec = base.spec();
    check_task(task, spec);

    std::vector<double> w(base.weights().raw());
    Evaluator ev(spec);
    const int k = spec.output_dim();
    std::vector<double> logits(k), cot(k);

    run_epochs(task, cfg, spec.param_count(), cfg.head_only, spec, w, report,
               [&](std::size_t i, std::vector<double>& grad) {
                   auto x = task.sample(i);
                   ev.forward(w, x, logits);
                   const double loss = loss_value(cfg.loss, logits, task.label(i));
                   loss_grad_into(cfg.loss, logits, task.label(i), cot);
                   ev.vjp_accumulate(w, x, cot, grad);
                   return loss;
               });

    return BaseModel(spec, ParamVector(std::move(w)));
}

}  // namespace tmc
