#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "tmc/network.hpp"
#include "tmc/param_vector.hpp"

namespace tmc {

// Weights for one autoregressive merge step: the new component gets lambda1,
// the running model lambda2, and the merged delta is normalized by their sum.
struct CompositionWeights {
    double lambda1 = 1.0;
    double lambda2 = 0.0;

    // lambda1 = 1/t, lambda2 = (t-1)/t at step t; weights every component by
    // the number of components folded so far, i.e. the uniform average.
    static CompositionWeights default_schedule(int t);
};

// One retained component: its task id, its delta, and the effective
// coefficient it carries inside the current composition.
struct ComponentRecord {
    int task_id = 0;
    double coeff = 0.0;
    ParamVector delta;
};

// A delta anchored to a frozen base model. Immutable value; composition and
// unlearning return new models. The component log is opt-in: without it the
// model is O(1) memory, with it every folded delta is retained so components
// can be subtracted back out.
class TangentModel {
public:
    TangentModel(std::shared_ptr<const BaseModel> base, ParamVector delta, int task_count,
                 std::optional<std::vector<ComponentRecord>> component_log = std::nullopt);

    // delta == zeros, task_count == 0; the anchor function itself.
    static TangentModel fresh(std::shared_ptr<const BaseModel> base, bool keep_log = false);

    // A newly trained component for one task (task_count == 1).
    static TangentModel component(std::shared_ptr<const BaseModel> base, ParamVector delta,
                                  int task_id, bool keep_log);

    const BaseModel& base() const { return *base_; }
    const std::shared_ptr<const BaseModel>& base_ptr() const { return base_; }
    const ParamVector& delta() const { return delta_; }
    int task_count() const { return task_count_; }

    bool log_enabled() const { return component_log_.has_value(); }
    const std::vector<ComponentRecord>& component_log() const;

private:
    std::shared_ptr<const BaseModel> base_;
    ParamVector delta_;
    int task_count_ = 0;
    std::optional<std::vector<ComponentRecord>> component_log_;
};

// f_w(x) + grad_w f_w(x) . delta in one fused pass; cost independent of how
// many components were folded into delta.
std::vector<double> tangent_forward(const TangentModel& model, std::span<const double> x);

// Autoregressive merge: delta' = (l1 * component + l2 * previous) / (l1 + l2).
// Both models must share the same anchor (checked by content fingerprint).
TangentModel compose_pair(const TangentModel& prev, const TangentModel& new_component,
                          const CompositionWeights& w);

// delta = sum_i weights[i] * delta_i over components sharing one anchor.
TangentModel compose_many(std::span<const TangentModel> components, std::span<const double> weights);

// Subtracts task_id's recorded contribution. With rescale the remaining delta
// is renormalized so it equals a fresh composition of the remaining
// components; without it the paper-literal residual scale is kept.
TangentModel unlearn(const TangentModel& composed, int task_id, bool rescale = true);

// Zeroes the delta outside the final dense head block.
TangentModel restrict_to_head(const TangentModel& model);

// Gradient mask for head-only training: zeroes grad entries outside the head.
void mask_to_head(const NetworkSpec& spec, std::span<double> grad);

}  // namespace tmc
