#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tmc/param_vector.hpp"

namespace tmc {

enum class LayerKind { dense, relu, leaky_relu };

struct LayerDescriptor {
    LayerKind kind = LayerKind::dense;
    int in = 0;          // dense only
    int out = 0;         // dense only
    double slope = 0.0;  // leaky_relu only, in (0,1)

    static LayerDescriptor dense(int in, int out) { return {LayerKind::dense, in, out, 0.0}; }
    static LayerDescriptor relu() { return {LayerKind::relu, 0, 0, 0.0}; }
    static LayerDescriptor leaky_relu(double slope) { return {LayerKind::leaky_relu, 0, 0, slope}; }

    std::size_t param_count() const {
        return kind == LayerKind::dense ? static_cast<std::size_t>(in) * out + out : 0;
    }

    bool operator==(const LayerDescriptor&) const = default;
};

// Feed-forward architecture. Layer dims must chain and the final layer must be
// a dense head whose width is the class count.
class NetworkSpec {
public:
    NetworkSpec() = default;
    NetworkSpec(int input_dim, std::vector<LayerDescriptor> layers);

    int input_dim() const { return input_dim_; }
    int output_dim() const { return output_dim_; }
    const std::vector<LayerDescriptor>& layers() const { return layers_; }
    std::size_t param_count() const { return param_count_; }

    // Flat offset of layer i's parameter block; activation layers have empty blocks.
    std::size_t param_offset(std::size_t layer) const { return offsets_[layer]; }
    std::size_t head_offset() const { return offsets_[layers_.size() - 1]; }
    std::size_t head_param_count() const { return layers_.back().param_count(); }

    // Width of the activation vector flowing out of layer i (i == 0 is the input).
    int width(std::size_t i) const { return widths_[i]; }

    // Canonical text encoding; feeds the anchor fingerprint and checkpoints.
    std::string encode() const;
    static NetworkSpec decode(const std::string& text);

    bool operator==(const NetworkSpec& other) const {
        return input_dim_ == other.input_dim_ && layers_ == other.layers_;
    }

private:
    int input_dim_ = 0;
    int output_dim_ = 0;
    std::vector<LayerDescriptor> layers_;
    std::vector<int> widths_;           // size layers_.size() + 1
    std::vector<std::size_t> offsets_;  // size layers_.size()
    std::size_t param_count_ = 0;
};

// dense(input, h0) -> act -> dense(h0, h1) -> act -> ... -> dense(h_last, classes)
NetworkSpec make_mlp(int input_dim, const std::vector<int>& hidden, int num_classes,
                     LayerKind activation = LayerKind::relu, double slope = 0.01);

// He fan-in initialization of all dense blocks from one seeded generator.
ParamVector he_init(const NetworkSpec& spec, std::uint64_t seed);

// Architecture plus the frozen weights w anchoring the tangent space.
class BaseModel {
public:
    BaseModel(NetworkSpec spec, ParamVector weights);

    const NetworkSpec& spec() const { return spec_; }
    const ParamVector& weights() const { return weights_; }

    // Content hash of (spec encoding || canonical weight bytes); anchors are
    // matched by this, not by object identity.
    const std::string& fingerprint() const;

private:
    NetworkSpec spec_;
    ParamVector weights_;
    mutable std::string fingerprint_;
};

// Same trunk, fresh dense head of width new_classes drawn from `seed`.
BaseModel reinit_head(const BaseModel& model, int new_classes, std::uint64_t seed);

// Per-layer primal values for an input x and directional values for a
// direction delta, carried together through one fused pass.
struct DualActivations {
    std::vector<std::vector<double>> primal;
    std::vector<std::vector<double>> tangent;
};

struct JvpResult {
    std::vector<double> primal;
    std::vector<double> tangent;
};

// Scratch-space evaluator for one architecture. Methods are deterministic and
// never touch shared state, so distinct instances can run concurrently against
// the same frozen weights.
class Evaluator {
public:
    explicit Evaluator(const NetworkSpec& spec);

    void forward(std::span<const double> w, std::span<const double> x, std::span<double> logits_out);

    // One fused pass carrying (primal, tangent); tangent_out = grad_w f_w(x) . delta.
    void jvp(std::span<const double> w, std::span<const double> delta, std::span<const double> x,
             std::span<double> primal_out, std::span<double> tangent_out);

    // Accumulates J(x)^T . cotangent into grad_accum (+=).
    void vjp_accumulate(std::span<const double> w, std::span<const double> x,
                        std::span<const double> cotangent, std::span<double> grad_accum);

    const NetworkSpec& spec() const { return spec_; }

private:
    NetworkSpec spec_;
    std::vector<std::vector<double>> act_;   // act_[i]: output of layer i-1 (act_[0] = x)
    std::vector<std::vector<double>> tan_;   // tangent counterpart
    std::vector<double> cot_a_, cot_b_;      // backward cotangent ping-pong
};

std::vector<double> forward(const BaseModel& model, std::span<const double> x);

JvpResult jvp_forward(const BaseModel& model, const ParamVector& delta, std::span<const double> x);

// Full per-layer trace of the fused pass.
DualActivations jvp_forward_trace(const BaseModel& model, const ParamVector& delta,
                                  std::span<const double> x);

ParamVector vjp_backward(const BaseModel& model, std::span<const double> x,
                         std::span<const double> cotangent);

// Reverse-mode gradient of f_w at the model's current w; identical machinery
// to vjp_backward, exposed under the name the non-linear training path uses.
ParamVector backward_nonlinear(const BaseModel& model, std::span<const double> x,
                               std::span<const double> cotangent);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string fingerprint_of(const NetworkSpec& spec, const ParamVector& weights);

}  // namespace tmc
