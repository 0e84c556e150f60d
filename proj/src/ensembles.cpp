#include "tmc/ensembles.hpp"

#include <cmath>
#include <stdexcept>

#include "tmc/errors.hpp"
#include "tmc/losses.hpp"

namespace tmc {

namespace {

std::vector<double> uniform_weights(std::size_t n) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

void check_collection(const ModelCollection& c) {
    if (c.size() == 0) throw std::invalid_argument("ensemble: empty member list");
    if (c.weights.size() != c.size()) throw std::invalid_argument("ensemble: weight count mismatch");
}

void check_convex(std::span<const double> weights) {
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("ensemble: weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("ensemble: weights must sum to 1 for this mode");
}

}  // namespace

ModelCollection ModelCollection::of_nonlinear(std::vector<BaseModel> members,
                                              std::vector<double> weights) {
    if (members.empty()) throw std::invalid_argument("ModelCollection: empty member list");
    for (const auto& m : members) {
        if (!(m.spec() == members.front().spec()))
            throw std::invalid_argument("ModelCollection: members must share one spec");
    }
    ModelCollection c;
    c.kind = Kind::nonlinear;
    c.weights = weights.empty() ? uniform_weights(members.size()) : std::move(weights);
    c.nonlinear_members = std::move(members);
    check_collection(c);
    return c;
}

ModelCollection ModelCollection::of_tangent(std::vector<TangentModel> members,
                                            std::vector<double> weights) {
    if (members.empty()) throw std::invalid_argument("ModelCollection: empty member list");
    for (const auto& m : members) {
        if (m.base().fingerprint() != members.front().base().fingerprint())
            throw std::invalid_argument("ModelCollection: tangent members must share one anchor");
    }
    ModelCollection c;
    c.kind = Kind::tangent;
    c.weights = weights.empty() ? uniform_weights(members.size()) : std::move(weights);
    c.tangent_members = std::move(members);
    check_collection(c);
    return c;
}

BaseModel soup(std::span<const BaseModel> members, std::span<const double> weights) {
    if (members.empty()) throw std::invalid_argument("soup: empty member list");
    if (members.size() != weights.size()) throw std::invalid_argument("soup: weight count mismatch");
    for (const auto& m : members) {
        if (!(m.spec() == members.front().spec()))
            throw std::invalid_argument("soup: members must share one spec");
    }
    std::vector<ParamVector> ws;
    ws.reserve(members.size());
    for (const auto& m : members) ws.push_back(m.weights());
    return BaseModel(members.front().spec(), weighted_sum(ws, weights));
}

std::vector<double> ensemble_logits(const ModelCollection& c, std::span<const double> x) {
    check_collection(c);
    std::vector<double> acc;
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<double> logits = c.kind == ModelCollection::Kind::nonlinear
                                         ? forward(c.nonlinear_members[i], x)
                                         : tangent_forward(c.tangent_members[i], x);
        if (acc.empty()) acc.assign(logits.size(), 0.0);
        for (std::size_t j = 0; j < logits.size(); ++j) acc[j] += c.weights[i] * logits[j];
    }
    return acc;
}

std::vector<double> ensemble_softmax(const ModelCollection& c, std::span<const double> x) {
    check_collection(c);
    check_convex(c.weights);
    std::vector<double> acc;
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<double> logits = c.kind == ModelCollection::Kind::nonlinear
                                         ? forward(c.nonlinear_members[i], x)
                                         : tangent_forward(c.tangent_members[i], x);
        std::vector<double> p = softmax(logits);
        if (acc.empty()) acc.assign(p.size(), 0.0);
        for (std::size_t j = 0; j < p.size(); ++j) acc[j] += c.weights[i] * p[j];
    }
    return acc;
}

double evaluate(const Predictor& predictor, const Dataset& dataset,
                std::optional<std::span<const int>> task_restriction) {
    if (dataset.size() == 0) throw DataError("evaluate: empty dataset");
    if (task_restriction && task_restriction->empty())
        throw std::invalid_argument("evaluate: empty task restriction");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::vector<double> scores = predictor(dataset.sample(i));
        int best = -1;
        double best_score = 0.0;
        if (task_restriction) {
            for (int cls : *task_restriction) {
                if (cls < 0 || static_cast<std::size_t>(cls) >= scores.size())
                    throw std::invalid_argument("evaluate: restriction class out of range");
                if (best < 0 || scores[cls] > best_score ||
                    (scores[cls] == best_score && cls < best)) {
                    best = cls;
                    best_score = scores[cls];
                }
            }
        } else {
            for (std::size_t cls = 0; cls < scores.size(); ++cls) {
                if (best < 0 || scores[cls] > best_score) {
                    best = static_cast<int>(cls);
                    best_score = scores[cls];
                }
            }
        }
        if (best == dataset.label(i)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

Predictor predictor_of(const BaseModel& model) {
    auto ev = std::make_shared<Evaluator>(model.spec());
    auto weights = std::make_shared<ParamVector>(model.weights());
    const int k = model.spec().output_dim();
    return [ev, weights, k](std::span<const double> x) {
        std::vector<double> logits(k);
        ev->forward(weights->values(), x, logits);
        return logits;
    };
}

Predictor predictor_of(const TangentModel& model) {
    auto ev = std::make_shared<Evaluator>(model.base().spec());
    auto base = model.base_ptr();
    auto delta = std::make_shared<ParamVector>(model.delta());
    const int k = model.base().spec().output_dim();
    return [ev, base, delta, k](std::span<const double> x) {
        std::vector<double> primal(k), tangent(k);
        ev->jvp(base->weights().values(), delta->values(), x, primal, tangent);
        for (int j = 0; j < k; ++j) primal[j] += tangent[j];
        return primal;
    };
}

Predictor logit_ensemble_predictor(const ModelCollection& collection) {
    auto c = std::make_shared<ModelCollection>(collection);
    return [c](std::span<const double> x) { return ensemble_logits(*c, x); };
}

Predictor softmax_ensemble_predictor(const ModelCollection& collection) {
    auto c = std::make_shared<ModelCollection>(collection);
    return [c](std::span<const double> x) { return ensemble_softmax(*c, x); };
}

}  // namespace tmc
