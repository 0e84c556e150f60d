#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace tmc {

// Flat, ordered vector of model parameters. Immutable after construction;
// all arithmetic below returns fresh vectors, so values can be shared freely
// across threads.
class ParamVector {
public:
    ParamVector() = default;

    explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

    static ParamVector zeros(std::size_t dim) { return ParamVector(std::vector<double>(dim, 0.0)); }

    std::size_t dim() const { return values_.size(); }

    double operator[](std::size_t i) const { return values_[i]; }

    std::span<const double> values() const { return values_; }

    const std::vector<double>& raw() const { return values_; }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const ParamVector& other) const { return values_ == other.values_; }

private:
    std::vector<double> values_;
};

namespace detail {

inline void require_same_dim(const ParamVector& a, const ParamVector& b, const char* op) {
    if (a.dim() != b.dim()) {
        throw std::invalid_argument(std::string(op) + ": dimension mismatch (" +
                                    std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
    }
}

}  // namespace detail

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    detail::require_same_dim(a, b, "add");
    std::vector<double> out(a.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return ParamVector(std::move(out));
}

inline ParamVector subtract(const ParamVector& a, const ParamVector& b) {
    detail::require_same_dim(a, b, "subtract");
    std::vector<double> out(a.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return ParamVector(std::move(out));
}

inline ParamVector scale(const ParamVector& a, double c) {
    if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite coefficient");
    std::vector<double> out(a.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
    return ParamVector(std::move(out));
}

// c*a + b in one pass; the hot path for optimizer steps and merges.
inline ParamVector axpy(double c, const ParamVector& a, const ParamVector& b) {
    if (!std::isfinite(c)) throw std::invalid_argument("axpy: non-finite coefficient");
    detail::require_same_dim(a, b, "axpy");
    std::vector<double> out(a.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i] + b[i];
    return ParamVector(std::move(out));
}

inline ParamVector weighted_sum(std::span<const ParamVector> vs, std::span<const double> weights) {
    if (vs.empty()) throw std::invalid_argument("weighted_sum: empty vector list");
    if (vs.size() != weights.size()) throw std::invalid_argument("weighted_sum: weight count mismatch");
    const std::size_t dim = vs[0].dim();
    for (const auto& v : vs) detail::require_same_dim(vs[0], v, "weighted_sum");
    std::vector<double> out(dim, 0.0);
    for (std::size_t k = 0; k < vs.size(); ++k) {
        const double w = weights[k];
        if (!std::isfinite(w)) throw std::invalid_argument("weighted_sum: non-finite weight");
        std::span<const double> src = vs[k].values();
        for (std::size_t i = 0; i < dim; ++i) out[i] += w * src[i];
    }
    return ParamVector(std::move(out));
}

// Convex combination: weights nonnegative and summing to 1 within 1e-9.
inline ParamVector convex_combine(std::span<const ParamVector> vs, std::span<const double> weights) {
    if (vs.empty()) throw std::invalid_argument("convex_combine: empty vector list");
    if (vs.size() != weights.size()) throw std::invalid_argument("convex_combine: weight count mismatch");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("convex_combine: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("convex_combine: weights sum to " + std::to_string(sum) + ", expected 1");
    }
    return weighted_sum(vs, weights);
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    detail::require_same_dim(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
    detail::require_same_dim(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace tmc
