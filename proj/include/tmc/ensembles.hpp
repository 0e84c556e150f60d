#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tmc/data.hpp"
#include "tmc/network.hpp"
#include "tmc/tangent.hpp"

namespace tmc {

// Members sharing one architecture (and, for tangent members, one anchor)
// plus mixing weights. Exactly one member list is populated.
struct ModelCollection {
    enum class Kind { nonlinear, tangent };

    Kind kind = Kind::nonlinear;
    std::vector<BaseModel> nonlinear_members;
    std::vector<TangentModel> tangent_members;
    std::vector<double> weights;

    static ModelCollection of_nonlinear(std::vector<BaseModel> members,
                                        std::vector<double> weights = {});
    static ModelCollection of_tangent(std::vector<TangentModel> members,
                                      std::vector<double> weights = {});

    std::size_t size() const {
        return kind == Kind::nonlinear ? nonlinear_members.size() : tangent_members.size();
    }
};

// Weight-space average of non-linear models with identical specs.
BaseModel soup(std::span<const BaseModel> members, std::span<const double> weights);

// Weighted sum of member logits; O(T) per sample.
std::vector<double> ensemble_logits(const ModelCollection& collection, std::span<const double> x);

// Weighted sum of member softmax outputs; requires convex weights.
std::vector<double> ensemble_softmax(const ModelCollection& collection, std::span<const double> x);

using Predictor = std::function<std::vector<double>(std::span<const double>)>;

// Top-1 accuracy; argmax ties break toward the lowest class index. With a
// restriction the argmax runs over that class subset only.
double evaluate(const Predictor& predictor, const Dataset& dataset,
                std::optional<std::span<const int>> task_restriction = std::nullopt);

Predictor predictor_of(const BaseModel& model);
Predictor predictor_of(const TangentModel& model);
Predictor logit_ensemble_predictor(const ModelCollection& collection);
Predictor softmax_ensemble_predictor(const ModelCollection& collection);

}  // namespace tmc
