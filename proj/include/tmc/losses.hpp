#pragma once

#include <span>
#include <vector>

namespace tmc {

enum class LossKind { cross_entropy, mse, rsl };

// Loss on logits. `alpha` scales the target-class residual and `beta` is the
// target-class regression value; both apply to the rescaled square loss only.
// rsl with alpha == beta == 1 evaluates identically to mse on every input.
struct LossSpec {
    LossKind kind = LossKind::cross_entropy;
    double alpha = 1.0;
    double beta = 1.0;

    static LossSpec cross_entropy() { return {LossKind::cross_entropy, 1.0, 1.0}; }
    static LossSpec mse() { return {LossKind::mse, 1.0, 1.0}; }
    static LossSpec rsl(double alpha, double beta) { return {LossKind::rsl, alpha, beta}; }
};

void validate(const LossSpec& spec);

double loss_value(const LossSpec& spec, std::span<const double> logits, int label);

std::vector<double> loss_grad(const LossSpec& spec, std::span<const double> logits, int label);

// In-place variant used by the training inner loop.
void loss_grad_into(const LossSpec& spec, std::span<const double> logits, int label,
                    std::span<double> grad_out);

// Numerically stabilized by max-subtraction; entries sum to 1.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace tmc
