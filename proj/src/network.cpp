#include "tmc/network.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tmc {

NetworkSpec::NetworkSpec(int input_dim, std::vector<LayerDescriptor> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
    if (input_dim_ <= 0) throw std::invalid_argument("NetworkSpec: input_dim must be positive");
    if (layers_.empty()) throw std::invalid_argument("NetworkSpec: no layers");

    widths_.reserve(layers_.size() + 1);
    offsets_.reserve(layers_.size());
    widths_.push_back(input_dim_);
    int width = input_dim_;
    std::size_t offset = 0;
    for (const auto& layer : layers_) {
        offsets_.push_back(offset);
        switch (layer.kind) {
            case LayerKind::dense:
                if (layer.in <= 0 || layer.out <= 0)
                    throw std::invalid_argument("NetworkSpec: dense dims must be positive");
                if (layer.in != width)
                    throw std::invalid_argument("NetworkSpec: dense input " + std::to_string(layer.in) +
                                                " does not chain from width " + std::to_string(width));
                width = layer.out;
                break;
            case LayerKind::relu:
                break;
            case LayerKind::leaky_relu:
                if (!(layer.slope > 0.0 && layer.slope < 1.0))
                    throw std::invalid_argument("NetworkSpec: leaky_relu slope must be in (0,1)");
                break;
        }
        offset += layer.param_count();
        widths_.push_back(width);
    }
    if (layers_.back().kind != LayerKind::dense)
        throw std::invalid_argument("NetworkSpec: final layer must be a dense head");
    output_dim_ = width;
    param_count_ = offset;
}

std::string NetworkSpec::encode() const {
    std::ostringstream out;
    out.precision(17);
    out << "net v1 input " << input_dim_ << "\n";
    for (const auto& layer : layers_) {
        switch (layer.kind) {
            case LayerKind::dense:
                out << "dense " << layer.in << " " << layer.out << "\n";
                break;
            case LayerKind::relu:
                out << "relu\n";
                break;
            case LayerKind::leaky_relu:
                out << "leaky_relu " << layer.slope << "\n";
                break;
        }
    }
    return out.str();
}

NetworkSpec NetworkSpec::decode(const std::string& text) {
    std::istringstream in(text);
    std::string tag, version, input_kw;
    int input_dim = 0;
    in >> tag >> version >> input_kw >> input_dim;
    if (tag != "net" || version != "v1" || input_kw != "input" || !in)
        throw std::invalid_argument("NetworkSpec::decode: malformed header");
    std::vector<LayerDescriptor> layers;
    std::string kind;
    while (in >> kind) {
        if (kind == "dense") {
            int lin = 0, lout = 0;
            if (!(in >> lin >> lout)) throw std::invalid_argument("NetworkSpec::decode: bad dense layer");
            layers.push_back(LayerDescriptor::dense(lin, lout));
        } else if (kind == "relu") {
            layers.push_back(LayerDescriptor::relu());
        } else if (kind == "leaky_relu") {
            double slope = 0.0;
            if (!(in >> slope)) throw std::invalid_argument("NetworkSpec::decode: bad leaky_relu layer");
            layers.push_back(LayerDescriptor::leaky_relu(slope));
        } else {
            throw std::invalid_argument("NetworkSpec::decode: unknown layer kind '" + kind + "'");
        }
    }
    return NetworkSpec(input_dim, std::move(layers));
}

NetworkSpec make_mlp(int input_dim, const std::vector<int>& hidden, int num_classes,
                     LayerKind activation, double slope) {
    if (activation == LayerKind::dense)
        throw std::invalid_argument("make_mlp: activation must be relu or leaky_relu");
    std::vector<LayerDescriptor> layers;
    int width = input_dim;
    for (int h : hidden) {
        layers.push_back(LayerDescriptor::dense(width, h));
        layers.push_back(activation == LayerKind::relu ? LayerDescriptor::relu()
                                                       : LayerDescriptor::leaky_relu(slope));
        width = h;
    }
    layers.push_back(LayerDescriptor::dense(width, num_classes));
    return NetworkSpec(input_dim, std::move(layers));
}

ParamVector he_init(const NetworkSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(spec.param_count(), 0.0);
    for (std::size_t li = 0; li < spec.layers().size(); ++li) {
        const auto& layer = spec.layers()[li];
        if (layer.kind != LayerKind::dense) continue;
        const double std_dev = std::sqrt(2.0 / layer.in);
        double* block = w.data() + spec.param_offset(li);
        const std::size_t weight_count = static_cast<std::size_t>(layer.in) * layer.out;
        for (std::size_t i = 0; i < weight_count; ++i) block[i] = std_dev * normal(rng);
        // biases stay zero
    }
    return ParamVector(std::move(w));
}

BaseModel::BaseModel(NetworkSpec spec, ParamVector weights)
    : spec_(std::move(spec)), weights_(std::move(weights)) {
    if (weights_.dim() != spec_.param_count())
        throw std::invalid_argument("BaseModel: weight dim " + std::to_string(weights_.dim()) +
                                    " does not match spec parameter count " +
                                    std::to_string(spec_.param_count()));
    if (!weights_.all_finite()) throw std::invalid_argument("BaseModel: non-finite weights");
}

const std::string& BaseModel::fingerprint() const {
    if (fingerprint_.empty()) fingerprint_ = fingerprint_of(spec_, weights_);
    return fingerprint_;
}

BaseModel reinit_head(const BaseModel& model, int new_classes, std::uint64_t seed) {
    if (new_classes <= 0) throw std::invalid_argument("reinit_head: class count must be positive");
    std::vector<LayerDescriptor> layers = model.spec().layers();
    layers.back().out = new_classes;
    NetworkSpec spec(model.spec().input_dim(), std::move(layers));

    std::vector<double> w(spec.param_count(), 0.0);
    const std::size_t trunk = spec.head_offset();
    std::memcpy(w.data(), model.weights().raw().data(), trunk * sizeof(double));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& head = spec.layers().back();
    const double std_dev = std::sqrt(2.0 / head.in);
    const std::size_t weight_count = static_cast<std::size_t>(head.in) * head.out;
    for (std::size_t i = 0; i < weight_count; ++i) w[trunk + i] = std_dev * normal(rng);
    return BaseModel(std::move(spec), ParamVector(std::move(w)));
}

Evaluator::Evaluator(const NetworkSpec& spec) : spec_(spec) {
    act_.resize(spec_.layers().size() + 1);
    tan_.resize(spec_.layers().size() + 1);
    int max_width = spec_.input_dim();
    for (std::size_t i = 0; i <= spec_.layers().size(); ++i) {
        act_[i].resize(spec_.width(i));
        tan_[i].resize(spec_.width(i));
        max_width = std::max(max_width, spec_.width(i));
    }
    cot_a_.resize(max_width);
    cot_b_.resize(max_width);
}

namespace {

inline void dense_apply(const double* w, int in, int out, const double* a, double* y) {
    const double* bias = w + static_cast<std::size_t>(in) * out;
    for (int j = 0; j < out; ++j) {
        const double* row = w + static_cast<std::size_t>(j) * in;
        double s = bias[j];
        for (int k = 0; k < in; ++k) s += row[k] * a[k];
        y[j] = s;
    }
}

// Tangent of a dense layer: W . t_in + dW . a + db.
inline void dense_apply_dual(const double* w, const double* dw, int in, int out, const double* a,
                             const double* t_in, double* y, double* t_out) {
    const double* bias = w + static_cast<std::size_t>(in) * out;
    const double* dbias = dw + static_cast<std::size_t>(in) * out;
    for (int j = 0; j < out; ++j) {
        const double* row = w + static_cast<std::size_t>(j) * in;
        const double* drow = dw + static_cast<std::size_t>(j) * in;
        double s = bias[j];
        double ds = dbias[j];
        for (int k = 0; k < in; ++k) {
            s += row[k] * a[k];
            ds += row[k] * t_in[k] + drow[k] * a[k];
        }
        y[j] = s;
        t_out[j] = ds;
    }
}

// Derivative convention at exactly 0: relu passes 0, leaky_relu passes slope.
inline double act_factor(LayerKind kind, double preact, double slope) {
    if (kind == LayerKind::relu) return preact > 0.0 ? 1.0 : 0.0;
    return preact > 0.0 ? 1.0 : slope;
}

}  // namespace

void Evaluator::forward(std::span<const double> w, std::span<const double> x,
                        std::span<double> logits_out) {
    if (static_cast<int>(x.size()) != spec_.input_dim())
        throw std::invalid_argument("forward: input dim mismatch");
    if (w.size() != spec_.param_count()) throw std::invalid_argument("forward: weight dim mismatch");
    std::copy(x.begin(), x.end(), act_[0].begin());
    for (std::size_t li = 0; li < spec_.layers().size(); ++li) {
        const auto& layer = spec_.layers()[li];
        const auto& in = act_[li];
        auto& out = act_[li + 1];
        switch (layer.kind) {
            case LayerKind::dense:
                dense_apply(w.data() + spec_.param_offset(li), layer.in, layer.out, in.data(), out.data());
                break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
                break;
            case LayerKind::leaky_relu:
                for (std::size_t k = 0; k < in.size(); ++k)
                    out[k] = in[k] > 0.0 ? in[k] : layer.slope * in[k];
                break;
        }
    }
    const auto& logits = act_.back();
    if (logits_out.size() != logits.size()) throw std::invalid_argument("forward: output size mismatch");
    std::copy(logits.begin(), logits.end(), logits_out.begin());
}

void Evaluator::jvp(std::span<const double> w, std::span<const double> delta,
                    std::span<const double> x, std::span<double> primal_out,
                    std::span<double> tangent_out) {
    if (static_cast<int>(x.size()) != spec_.input_dim())
        throw std::invalid_argument("jvp: input dim mismatch");
    if (w.size() != spec_.param_count() || delta.size() != spec_.param_count())
        throw std::invalid_argument("jvp: parameter dim mismatch");
    std::copy(x.begin(), x.end(), act_[0].begin());
    std::fill(tan_[0].begin(), tan_[0].end(), 0.0);
    for (std::size_t li = 0; li < spec_.layers().size(); ++li) {
        const auto& layer = spec_.layers()[li];
        const auto& in = act_[li];
        const auto& t_in = tan_[li];
        auto& out = act_[li + 1];
        auto& t_out = tan_[li + 1];
        switch (layer.kind) {
            case LayerKind::dense:
                dense_apply_dual(w.data() + spec_.param_offset(li), delta.data() + spec_.param_offset(li),
                                 layer.in, layer.out, in.data(), t_in.data(), out.data(), t_out.data());
                break;
            case LayerKind::relu:
            case LayerKind::leaky_relu:
                for (std::size_t k = 0; k < in.size(); ++k) {
                    const double f = act_factor(layer.kind, in[k], layer.slope);
                    out[k] = f * in[k];
                    t_out[k] = f * t_in[k];
                }
                break;
        }
    }
    if (primal_out.size() != act_.back().size() || tangent_out.size() != act_.back().size())
        throw std::invalid_argument("jvp: output size mismatch");
    std::copy(act_.back().begin(), act_.back().end(), primal_out.begin());
    std::copy(tan_.back().begin(), tan_.back().end(), tangent_out.begin());
}

void Evaluator::vjp_accumulate(std::span<const double> w, std::span<const double> x,
                               std::span<const double> cotangent, std::span<double> grad_accum) {
    if (cotangent.size() != static_cast<std::size_t>(spec_.output_dim()))
        throw std::invalid_argument("vjp: cotangent length must equal class count");
    if (grad_accum.size() != spec_.param_count())
        throw std::invalid_argument("vjp: gradient dim mismatch");

    // forward pass to record activations
    std::copy(x.begin(), x.end(), act_[0].begin());
    for (std::size_t li = 0; li < spec_.layers().size(); ++li) {
        const auto& layer = spec_.layers()[li];
        const auto& in = act_[li];
        auto& out = act_[li + 1];
        switch (layer.kind) {
            case LayerKind::dense:
                dense_apply(w.data() + spec_.param_offset(li), layer.in, layer.out, in.data(), out.data());
                break;
            case LayerKind::relu:
            case LayerKind::leaky_relu:
                for (std::size_t k = 0; k < in.size(); ++k)
                    out[k] = act_factor(layer.kind, in[k], layer.slope) * in[k];
                break;
        }
    }

    double* cot = cot_a_.data();
    double* cot_next = cot_b_.data();
    std::copy(cotangent.begin(), cotangent.end(), cot);
    for (std::size_t li = spec_.layers().size(); li-- > 0;) {
        const auto& layer = spec_.layers()[li];
        const auto& in = act_[li];
        switch (layer.kind) {
            case LayerKind::dense: {
                const std::size_t off = spec_.param_offset(li);
                double* gw = grad_accum.data() + off;
                double* gb = gw + static_cast<std::size_t>(layer.in) * layer.out;
                const double* wl = w.data() + off;
                for (int k = 0; k < layer.in; ++k) cot_next[k] = 0.0;
                for (int j = 0; j < layer.out; ++j) {
                    const double c = cot[j];
                    gb[j] += c;
                    double* grow = gw + static_cast<std::size_t>(j) * layer.in;
                    const double* wrow = wl + static_cast<std::size_t>(j) * layer.in;
                    for (int k = 0; k < layer.in; ++k) {
                        grow[k] += c * in[k];
                        cot_next[k] += c * wrow[k];
                    }
                }
                std::swap(cot, cot_next);
                break;
            }
            case LayerKind::relu:
            case LayerKind::leaky_relu:
                for (std::size_t k = 0; k < in.size(); ++k)
                    cot[k] *= act_factor(layer.kind, in[k], layer.slope);
                break;
        }
    }
}

std::vector<double> forward(const BaseModel& model, std::span<const double> x) {
    Evaluator ev(model.spec());
    std::vector<double> logits(model.spec().output_dim());
    ev.forward(model.weights().values(), x, logits);
    return logits;
}

JvpResult jvp_forward(const BaseModel& model, const ParamVector& delta, std::span<const double> x) {
    Evaluator ev(model.spec());
    JvpResult r;
    r.primal.resize(model.spec().output_dim());
    r.tangent.resize(model.spec().output_dim());
    ev.jvp(model.weights().values(), delta.values(), x, r.primal, r.tangent);
    return r;
}

DualActivations jvp_forward_trace(const BaseModel& model, const ParamVector& delta,
                                  std::span<const double> x) {
    const auto& spec = model.spec();
    if (delta.dim() != spec.param_count()) throw std::invalid_argument("jvp: parameter dim mismatch");
    DualActivations trace;
    trace.primal.emplace_back(x.begin(), x.end());
    trace.tangent.emplace_back(x.size(), 0.0);
    std::span<const double> w = model.weights().values();
    for (std::size_t li = 0; li < spec.layers().size(); ++li) {
        const auto& layer = spec.layers()[li];
        const auto& in = trace.primal[li];
        const auto& t_in = trace.tangent[li];
        std::vector<double> out(spec.width(li + 1));
        std::vector<double> t_out(spec.width(li + 1));
        if (layer.kind == LayerKind::dense) {
            dense_apply_dual(w.data() + spec.param_offset(li),
                             delta.values().data() + spec.param_offset(li), layer.in, layer.out,
                             in.data(), t_in.data(), out.data(), t_out.data());
        } else {
            for (std::size_t k = 0; k < in.size(); ++k) {
                const double f = act_factor(layer.kind, in[k], layer.slope);
                out[k] = f * in[k];
                t_out[k] = f * t_in[k];
            }
        }
        trace.primal.push_back(std::move(out));
        trace.tangent.push_back(std::move(t_out));
    }
    return trace;
}

ParamVector vjp_backward(const BaseModel& model, std::span<const double> x,
                         std::span<const double> cotangent) {
    Evaluator ev(model.spec());
    std::vector<double> grad(model.spec().param_count(), 0.0);
    ev.vjp_accumulate(model.weights().values(), x, cotangent, grad);
    return ParamVector(std::move(grad));
}

ParamVector backward_nonlinear(const BaseModel& model, std::span<const double> x,
                               std::span<const double> cotangent) {
    return vjp_backward(model, x, cotangent);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &digest_len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out(digest_len * 2, '0');
    for (unsigned int i = 0; i < digest_len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xf];
    }
    return out;
}

std::string fingerprint_of(const NetworkSpec& spec, const ParamVector& weights) {
    const std::string header = spec.encode();
    std::vector<unsigned char> bytes(header.size() + weights.dim() * sizeof(double));
    std::memcpy(bytes.data(), header.data(), header.size());
    std::memcpy(bytes.data() + header.size(), weights.raw().data(), weights.dim() * sizeof(double));
    return sha256_hex(bytes);
}

}  // namespace tmc
