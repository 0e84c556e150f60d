#include "tmc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tmc {

void validate(const LossSpec& spec) {
    if (spec.kind == LossKind::rsl) {
        if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha))
            throw std::invalid_argument("loss: alpha must be positive");
        if (!(spec.beta > 0.0) || !std::isfinite(spec.beta))
            throw std::invalid_argument("loss: beta must be positive");
    }
}

namespace {

void check_label(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw std::invalid_argument("loss: label " + std::to_string(label) + " out of range for " +
                                    std::to_string(logits.size()) + " classes");
}

double log_sum_exp(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    return m + std::log(s);
}

// (1/K)(alpha*(z_y - beta)^2 + sum_{i != y} z_i^2); mse is the alpha = beta = 1 case.
double square_loss(std::span<const double> logits, int label, double alpha, double beta) {
    const double k = static_cast<double>(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (static_cast<int>(i) == label) {
            const double r = logits[i] - beta;
            s += alpha * r * r;
        } else {
            s += logits[i] * logits[i];
        }
    }
    return s / k;
}

void square_loss_grad(std::span<const double> logits, int label, double alpha, double beta,
                      std::span<double> out) {
    const double k = static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (static_cast<int>(i) == label) {
            out[i] = 2.0 * alpha * (logits[i] - beta) / k;
        } else {
            out[i] = 2.0 * logits[i] / k;
        }
    }
}

}  // namespace

double loss_value(const LossSpec& spec, std::span<const double> logits, int label) {
    check_label(logits, label);
    switch (spec.kind) {
        case LossKind::cross_entropy:
            return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
        case LossKind::mse:
            return square_loss(logits, label, 1.0, 1.0);
        case LossKind::rsl:
            return square_loss(logits, label, spec.alpha, spec.beta);
    }
    throw std::logic_error("loss_value: unknown loss kind");
}

void loss_grad_into(const LossSpec& spec, std::span<const double> logits, int label,
                    std::span<double> grad_out) {
    check_label(logits, label);
    if (grad_out.size() != logits.size()) throw std::invalid_argument("loss_grad: output size mismatch");
    switch (spec.kind) {
        case LossKind::cross_entropy: {
            std::vector<double> p = softmax(logits);
            for (std::size_t i = 0; i < p.size(); ++i) grad_out[i] = p[i];
            grad_out[static_cast<std::size_t>(label)] -= 1.0;
            return;
        }
        case LossKind::mse:
            square_loss_grad(logits, label, 1.0, 1.0, grad_out);
            return;
        case LossKind::rsl:
            square_loss_grad(logits, label, spec.alpha, spec.beta, grad_out);
            return;
    }
    throw std::logic_error("loss_grad: unknown loss kind");
}

std::vector<double> loss_grad(const LossSpec& spec, std::span<const double> logits, int label) {
    std::vector<double> g(logits.size());
    loss_grad_into(spec, logits, label, g);
    return g;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

}  // namespace tmc
