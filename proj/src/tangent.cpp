#include "tmc/tangent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tmc {

CompositionWeights CompositionWeights::default_schedule(int t) {
    if (t < 1) throw std::invalid_argument("CompositionWeights: step must be >= 1");
    return {1.0 / t, (t - 1.0) / t};
}

TangentModel::TangentModel(std::shared_ptr<const BaseModel> base, ParamVector delta, int task_count,
                           std::optional<std::vector<ComponentRecord>> component_log)
    : base_(std::move(base)),
      delta_(std::move(delta)),
      task_count_(task_count),
      component_log_(std::move(component_log)) {
    if (!base_) throw std::invalid_argument("TangentModel: null base");
    if (delta_.dim() != base_->weights().dim())
        throw std::invalid_argument("TangentModel: delta dim " + std::to_string(delta_.dim()) +
                                    " does not match anchor dim " +
                                    std::to_string(base_->weights().dim()));
    if (task_count_ < 0) throw std::invalid_argument("TangentModel: negative task count");
    if (component_log_ && static_cast<int>(component_log_->size()) != task_count_)
        throw std::invalid_argument("TangentModel: component log size does not match task count");
}

TangentModel TangentModel::fresh(std::shared_ptr<const BaseModel> base, bool keep_log) {
    const std::size_t dim = base->weights().dim();
    std::optional<std::vector<ComponentRecord>> log;
    if (keep_log) log.emplace();
    return TangentModel(std::move(base), ParamVector::zeros(dim), 0, std::move(log));
}

TangentModel TangentModel::component(std::shared_ptr<const BaseModel> base, ParamVector delta,
                                     int task_id, bool keep_log) {
    std::optional<std::vector<ComponentRecord>> log;
    if (keep_log) {
        log.emplace();
        log->push_back({task_id, 1.0, delta});
    }
    return TangentModel(std::move(base), std::move(delta), 1, std::move(log));
}

const std::vector<ComponentRecord>& TangentModel::component_log() const {
    if (!component_log_) throw std::logic_error("TangentModel: component log not retained");
    return *component_log_;
}

std::vector<double> tangent_forward(const TangentModel& model, std::span<const double> x) {
    JvpResult r = jvp_forward(model.base(), model.delta(), x);
    for (std::size_t i = 0; i < r.primal.size(); ++i) r.primal[i] += r.tangent[i];
    return r.primal;
}

namespace {

void require_same_anchor(const TangentModel& a, const TangentModel& b) {
    if (a.base().fingerprint() != b.base().fingerprint())
        throw std::invalid_argument(
            "compose: models are anchored to different base weights; "
            "composition across tangent spaces is undefined");
}

}  // namespace

TangentModel compose_pair(const TangentModel& prev, const TangentModel& new_component,
                          const CompositionWeights& w) {
    require_same_anchor(prev, new_component);
    const double total = w.lambda1 + w.lambda2;
    if (!(std::isfinite(total)) || total == 0.0)
        throw std::invalid_argument("compose_pair: lambda1 + lambda2 must be finite and nonzero");
    const double c1 = w.lambda1 / total;
    const double c2 = w.lambda2 / total;
    ParamVector delta = axpy(c1, new_component.delta(), scale(prev.delta(), c2));

    std::optional<std::vector<ComponentRecord>> log;
    if (prev.log_enabled()) {
        log.emplace();
        log->reserve(prev.component_log().size() + 1);
        for (const auto& rec : prev.component_log()) log->push_back({rec.task_id, c2 * rec.coeff, rec.delta});
        if (!new_component.log_enabled())
            throw std::invalid_argument("compose_pair: new component carries no component log");
        for (const auto& rec : new_component.component_log())
            log->push_back({rec.task_id, c1 * rec.coeff, rec.delta});
    }
    return TangentModel(prev.base_ptr(), std::move(delta), prev.task_count() + new_component.task_count(),
                        std::move(log));
}

TangentModel compose_many(std::span<const TangentModel> components, std::span<const double> weights) {
    if (components.empty()) throw std::invalid_argument("compose_many: empty component list");
    if (components.size() != weights.size())
        throw std::invalid_argument("compose_many: weight count mismatch");
    for (const auto& c : components) require_same_anchor(components.front(), c);

    std::vector<ParamVector> deltas;
    deltas.reserve(components.size());
    for (const auto& c : components) deltas.push_back(c.delta());
    ParamVector delta = weighted_sum(deltas, weights);

    std::optional<std::vector<ComponentRecord>> log;
    if (std::all_of(components.begin(), components.end(),
                    [](const TangentModel& c) { return c.log_enabled(); })) {
        log.emplace();
        int total = 0;
        for (std::size_t i = 0; i < components.size(); ++i) {
            for (const auto& rec : components[i].component_log())
                log->push_back({rec.task_id, weights[i] * rec.coeff, rec.delta});
            total += components[i].task_count();
        }
        return TangentModel(components.front().base_ptr(), std::move(delta), total, std::move(log));
    }
    int total = 0;
    for (const auto& c : components) total += c.task_count();
    return TangentModel(components.front().base_ptr(), std::move(delta), total, std::nullopt);
}

TangentModel unlearn(const TangentModel& composed, int task_id, bool rescale) {
    if (!composed.log_enabled())
        throw std::invalid_argument("unlearn: component log was not retained for this model");
    const auto& log = composed.component_log();
    auto it = std::find_if(log.begin(), log.end(),
                           [&](const ComponentRecord& r) { return r.task_id == task_id; });
    if (it == log.end())
        throw std::invalid_argument("unlearn: task " + std::to_string(task_id) + " not in component log");

    ParamVector delta = axpy(-it->coeff, it->delta, composed.delta());

    std::vector<ComponentRecord> remaining;
    remaining.reserve(log.size() - 1);
    double coeff_sum = 0.0;
    for (const auto& rec : log) {
        if (rec.task_id == task_id) continue;
        remaining.push_back(rec);
        coeff_sum += rec.coeff;
    }

    if (remaining.empty()) {
        // nothing left; the model collapses back to the anchor
        return TangentModel(composed.base_ptr(), ParamVector::zeros(delta.dim()), 0,
                            std::vector<ComponentRecord>{});
    }
    if (rescale) {
        // renormalize so the result equals a fresh composition of the
        // remaining components with their relative weights
        delta = scale(delta, 1.0 / coeff_sum);
        for (auto& rec : remaining) rec.coeff /= coeff_sum;
    }
    return TangentModel(composed.base_ptr(), std::move(delta), composed.task_count() - 1,
                        std::move(remaining));
}

void mask_to_head(const NetworkSpec& spec, std::span<double> grad) {
    if (grad.size() != spec.param_count()) throw std::invalid_argument("mask_to_head: dim mismatch");
    std::fill(grad.begin(), grad.begin() + static_cast<std::ptrdiff_t>(spec.head_offset()), 0.0);
}

TangentModel restrict_to_head(const TangentModel& model) {
    const auto& spec = model.base().spec();
    std::vector<double> masked(model.delta().raw());
    mask_to_head(spec, masked);

    std::optional<std::vector<ComponentRecord>> log;
    if (model.log_enabled()) {
        log.emplace();
        for (const auto& rec : model.component_log()) {
            std::vector<double> d(rec.delta.raw());
            mask_to_head(spec, d);
            log->push_back({rec.task_id, rec.coeff, ParamVector(std::move(d))});
        }
    }
    return TangentModel(model.base_ptr(), ParamVector(std::move(masked)), model.task_count(),
                        std::move(log));
}

}  // namespace tmc
