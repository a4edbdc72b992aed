#include "fedme/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "fedme/io.hpp"
#include "fedme/random.hpp"

namespace fedme {

namespace {

constexpr double kLogClamp = 1e-12;
constexpr std::size_t kMaxHiddenLayers = 16;

double safe_log(double p) { return std::log(std::max(p, kLogClamp)); }

struct LayerView {
    std::size_t fan_in;
    std::size_t fan_out;
    std::size_t weight_offset;  // fan_out x fan_in, row-major
    std::size_t bias_offset;
};

std::vector<LayerView> layer_views(const ArchitectureSpec& arch) {
    const auto widths = arch.layer_widths();
    std::vector<LayerView> views;
    views.reserve(widths.size() - 1);
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        LayerView v{widths[l], widths[l + 1], offset, offset + widths[l] * widths[l + 1]};
        offset = v.bias_offset + v.fan_out;
        views.push_back(v);
    }
    return views;
}

double activate(Activation a, double z) {
    return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the pre-activation and the activation value.
double activate_grad(Activation a, double z, double out) {
    return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - out * out;
}

struct ForwardCache {
    std::vector<Matrix> pre;  // pre-activations per layer; last one is the logits
    std::vector<Matrix> act;  // act[0] = input, act[l + 1] = activation of layer l
};

void check_features(const Model& model, const Matrix& features) {
    if (features.cols() != model.arch.input_dim) {
        std::ostringstream msg;
        msg << "feature width " << features.cols() << " does not match model input_dim "
            << model.arch.input_dim;
        throw std::invalid_argument(msg.str());
    }
    if (model.params.size() != model.arch.parameter_count()) {
        throw std::invalid_argument("model parameter vector does not match its architecture");
    }
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
    if (labels.size() != rows) {
        throw std::invalid_argument("label count does not match row count");
    }
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
            throw std::invalid_argument("label " + std::to_string(labels[r]) + " at row " +
                                        std::to_string(r) + " is outside [0, " +
                                        std::to_string(classes) + ")");
        }
    }
}

ForwardCache run_forward(const Model& model, const Matrix& features) {
    check_features(model, features);
    const auto views = layer_views(model.arch);
    const auto& w = model.params;
    ForwardCache cache;
    cache.act.push_back(features);
    for (std::size_t l = 0; l < views.size(); ++l) {
        const auto& v = views[l];
        const Matrix& in = cache.act.back();
        Matrix z(in.rows(), v.fan_out);
        for (std::size_t r = 0; r < in.rows(); ++r) {
            auto x = in.row(r);
            for (std::size_t o = 0; o < v.fan_out; ++o) {
                const double* wrow = w.data() + v.weight_offset + o * v.fan_in;
                double s = w[v.bias_offset + o];
                for (std::size_t i = 0; i < v.fan_in; ++i) {
                    s += wrow[i] * x[i];
                }
                z(r, o) = s;
            }
        }
        const bool last = l + 1 == views.size();
        if (!last) {
            Matrix a(z.rows(), z.cols());
            for (std::size_t k = 0; k < z.data().size(); ++k) {
                a.data()[k] = activate(model.arch.activation, z.data()[k]);
            }
            cache.pre.push_back(std::move(z));
            cache.act.push_back(std::move(a));
        } else {
            cache.pre.push_back(std::move(z));
        }
    }
    return cache;
}

// dlogits already carries the 1/batch factor.
Gradient run_backward(const Model& model, const ForwardCache& cache, Matrix dlogits) {
    const auto views = layer_views(model.arch);
    const auto& w = model.params;
    Gradient g;
    g.values.assign(w.size(), 0.0);
    Matrix dz = std::move(dlogits);
    for (std::size_t l = views.size(); l-- > 0;) {
        const auto& v = views[l];
        const Matrix& in = cache.act[l];
        double* gw = g.values.data() + v.weight_offset;
        double* gb = g.values.data() + v.bias_offset;
        for (std::size_t r = 0; r < in.rows(); ++r) {
            auto x = in.row(r);
            for (std::size_t o = 0; o < v.fan_out; ++o) {
                const double d = dz(r, o);
                if (d == 0.0) {
                    continue;
                }
                gb[o] += d;
                double* grow = gw + o * v.fan_in;
                for (std::size_t i = 0; i < v.fan_in; ++i) {
                    grow[i] += d * x[i];
                }
            }
        }
        if (l == 0) {
            break;
        }
        Matrix da(in.rows(), v.fan_in);
        for (std::size_t r = 0; r < in.rows(); ++r) {
            auto out = da.row(r);
            for (std::size_t o = 0; o < v.fan_out; ++o) {
                const double d = dz(r, o);
                if (d == 0.0) {
                    continue;
                }
                const double* wrow = w.data() + v.weight_offset + o * v.fan_in;
                for (std::size_t i = 0; i < v.fan_in; ++i) {
                    out[i] += d * wrow[i];
                }
            }
        }
        const Matrix& z = cache.pre[l - 1];
        const Matrix& a = cache.act[l];
        for (std::size_t k = 0; k < da.data().size(); ++k) {
            da.data()[k] *= activate_grad(model.arch.activation, z.data()[k], a.data()[k]);
        }
        dz = std::move(da);
    }
    return g;
}

void check_same_shape(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream msg;
        msg << "shape mismatch: " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
            << b.cols();
        throw std::invalid_argument(msg.str());
    }
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) {
        out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
    }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) {
        out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t take(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size()) {
            throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
        }
        std::uint64_t v = 0;
        for (std::size_t k = 0; k < n; ++k) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + k]) << (8 * k);
        }
        pos_ += n;
        return v;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(const std::string& name) {
    if (name == "relu") {
        return Activation::relu;
    }
    if (name == "tanh") {
        return Activation::tanh;
    }
    throw std::invalid_argument("unknown activation '" + name + "'");
}

std::vector<std::size_t> ArchitectureSpec::layer_widths() const {
    std::vector<std::size_t> widths;
    widths.reserve(hidden_widths.size() + 2);
    widths.push_back(input_dim);
    widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
    widths.push_back(num_classes);
    return widths;
}

std::size_t ArchitectureSpec::parameter_count() const {
    const auto widths = layer_widths();
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        count += (widths[l] + 1) * widths[l + 1];
    }
    return count;
}

void ArchitectureSpec::validate() const {
    if (input_dim == 0) {
        throw std::invalid_argument("architecture: input_dim must be positive");
    }
    if (num_classes < 2) {
        throw std::invalid_argument("architecture: num_classes must be at least 2");
    }
    if (hidden_widths.size() > kMaxHiddenLayers) {
        throw std::invalid_argument("architecture: too many hidden layers");
    }
    for (std::size_t w : hidden_widths) {
        if (w == 0) {
            throw std::invalid_argument("architecture: hidden widths must be positive");
        }
    }
}

std::string ArchitectureSpec::describe() const {
    std::ostringstream s;
    const auto widths = layer_widths();
    for (std::size_t k = 0; k < widths.size(); ++k) {
        s << (k ? "-" : "") << widths[k];
    }
    s << ":" << to_string(activation);
    return s.str();
}

Model init_model(const ArchitectureSpec& arch, std::uint64_t seed) {
    arch.validate();
    Model m;
    m.arch = arch;
    m.params.assign(arch.parameter_count(), 0.0);
    m.momentum.assign(m.params.size(), 0.0);
    Rng rng(seed);
    for (const auto& v : layer_views(arch)) {
        const double bound = std::sqrt(6.0 / static_cast<double>(v.fan_in + v.fan_out));
        for (std::size_t k = 0; k < v.fan_in * v.fan_out; ++k) {
            m.params[v.weight_offset + k] = rng.uniform(-bound, bound);
        }
    }
    return m;
}

Matrix logits(const Model& model, const Matrix& features) {
    return std::move(run_forward(model, features).pre.back());
}

Matrix softmax(const Matrix& z) {
    Matrix p(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto in = z.row(r);
        auto out = p.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            out[c] = std::exp(in[c] - mx);
            total += out[c];
        }
        for (double& v : out) {
            v /= total;
        }
    }
    return p;
}

Matrix forward(const Model& model, const Matrix& features) {
    return softmax(logits(model, features));
}

double cross_entropy(const Matrix& probs, std::span<const int> labels) {
    check_labels(labels, probs.rows(), probs.cols());
    if (probs.rows() == 0) {
        throw std::invalid_argument("cross_entropy: empty input");
    }
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        total -= safe_log(probs(r, static_cast<std::size_t>(labels[r])));
    }
    return total / static_cast<double>(probs.rows());
}

double kl_divergence(const Matrix& target, const Matrix& model_probs) {
    check_same_shape(target, model_probs);
    if (target.rows() == 0) {
        throw std::invalid_argument("kl_divergence: empty input");
    }
    double total = 0.0;
    for (std::size_t r = 0; r < target.rows(); ++r) {
        for (std::size_t c = 0; c < target.cols(); ++c) {
            const double t = target(r, c);
            if (t > 0.0) {
                total += t * (safe_log(t) - safe_log(model_probs(r, c)));
            }
        }
    }
    return total / static_cast<double>(target.rows());
}

LossAndGradient ce_loss_and_grad(const Model& model, const Matrix& features,
                                 std::span<const int> labels) {
    const auto cache = run_forward(model, features);
    const Matrix probs = softmax(cache.pre.back());
    LossAndGradient out;
    out.loss = cross_entropy(probs, labels);
    const double inv_b = 1.0 / static_cast<double>(features.rows());
    Matrix dz = probs;
    for (std::size_t r = 0; r < dz.rows(); ++r) {
        dz(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    }
    for (double& v : dz.data()) {
        v *= inv_b;
    }
    out.grad = run_backward(model, cache, std::move(dz));
    return out;
}

DmlResult dml_losses_and_grads(const Model& model_p, const Model& model_ex,
                               const Matrix& features, std::span<const int> labels) {
    if (!model_p.arch.exchange_compatible(model_ex.arch)) {
        throw std::invalid_argument("dml: models disagree on input_dim or num_classes");
    }
    if (features.rows() == 0) {
        throw std::invalid_argument("dml: empty batch");
    }
    const auto cache_p = run_forward(model_p, features);
    const auto cache_ex = run_forward(model_ex, features);
    const Matrix prob_p = softmax(cache_p.pre.back());
    const Matrix prob_ex = softmax(cache_ex.pre.back());

    DmlResult out;
    out.loss_p = cross_entropy(prob_p, labels) + kl_divergence(prob_ex, prob_p);
    out.loss_ex = cross_entropy(prob_ex, labels) + kl_divergence(prob_p, prob_ex);

    // d/dz [-sum q log softmax(z)] = softmax(z) - q, for each fixed target q.
    const double inv_b = 1.0 / static_cast<double>(features.rows());
    Matrix dz_p(prob_p.rows(), prob_p.cols());
    Matrix dz_ex(prob_ex.rows(), prob_ex.cols());
    for (std::size_t r = 0; r < dz_p.rows(); ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        for (std::size_t c = 0; c < dz_p.cols(); ++c) {
            const double onehot = c == y ? 1.0 : 0.0;
            const double pp = prob_p(r, c);
            const double pe = prob_ex(r, c);
            dz_p(r, c) = ((pp - onehot) + (pp - pe)) * inv_b;
            dz_ex(r, c) = ((pe - onehot) + (pe - pp)) * inv_b;
        }
    }
    out.grad_p = run_backward(model_p, cache_p, std::move(dz_p));
    out.grad_ex = run_backward(model_ex, cache_ex, std::move(dz_ex));
    return out;
}

void sgd_step(Model& model, const Gradient& grad, const SgdOptions& opts) {
    if (!(opts.lr > 0.0)) {
        throw std::invalid_argument("sgd_step: learning rate must be positive");
    }
    if (grad.values.size() != model.params.size()) {
        throw std::invalid_argument("sgd_step: gradient length does not match the model");
    }
    for (double g : grad.values) {
        if (!std::isfinite(g)) {
            throw DivergenceError("sgd_step: non-finite gradient");
        }
    }
    if (model.momentum.size() != model.params.size()) {
        model.reset_momentum();
    }
    for (std::size_t k = 0; k < model.params.size(); ++k) {
        model.momentum[k] =
            opts.momentum * model.momentum[k] + (grad.values[k] + opts.weight_decay * model.params[k]);
        model.params[k] -= opts.lr * model.momentum[k];
    }
}

Model average_params(std::span<const Model* const> models) {
    if (models.empty()) {
        throw std::invalid_argument("average_params: no models");
    }
    const ArchitectureSpec& arch = models.front()->arch;
    Model out;
    out.arch = arch;
    out.params.assign(models.front()->params.size(), 0.0);
    for (const Model* m : models) {
        if (!(m->arch == arch)) {
            throw std::invalid_argument("average_params: mixed architectures (" + arch.describe() +
                                        " vs " + m->arch.describe() + ")");
        }
        for (std::size_t k = 0; k < out.params.size(); ++k) {
            out.params[k] += m->params[k];
        }
    }
    const double n = static_cast<double>(models.size());
    for (double& v : out.params) {
        v /= n;
    }
    out.reset_momentum();
    return out;
}

Model average_params(std::span<const Model> models) {
    std::vector<const Model*> ptrs;
    ptrs.reserve(models.size());
    for (const auto& m : models) {
        ptrs.push_back(&m);
    }
    return average_params(std::span<const Model* const>(ptrs));
}

Model weighted_average_params(std::span<const Model* const> models,
                              std::span<const double> weights) {
    if (models.empty() || models.size() != weights.size()) {
        throw std::invalid_argument("weighted_average_params: need one weight per model");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw std::invalid_argument("weighted_average_params: negative weight");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("weighted_average_params: weights sum to zero");
    }
    const ArchitectureSpec& arch = models.front()->arch;
    Model out;
    out.arch = arch;
    for (std::size_t j = 0; j < models.size(); ++j) {
        if (!(models[j]->arch == arch)) {
            throw std::invalid_argument("weighted_average_params: mixed architectures");
        }
        const double share = weights[j] / total;
        if (j == 0) {
            // Start from the first term (not from zero) so a single model
            // with share 1 is reproduced bit-for-bit, signed zeros included.
            out.params.resize(models[j]->params.size());
            for (std::size_t k = 0; k < out.params.size(); ++k) {
                out.params[k] = share * models[j]->params[k];
            }
        } else {
            for (std::size_t k = 0; k < out.params.size(); ++k) {
                out.params[k] += share * models[j]->params[k];
            }
        }
    }
    out.reset_momentum();
    return out;
}

std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
        if (row[c] > row[best]) {
            best = c;
        }
    }
    return best;
}

Evaluation evaluate(const Model& model, const Matrix& features, std::span<const int> labels) {
    if (features.rows() == 0) {
        throw std::invalid_argument("evaluate: empty split");
    }
    const Matrix probs = forward(model, features);
    Evaluation e;
    e.loss = cross_entropy(probs, labels);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        if (argmax_row(probs.row(r)) == static_cast<std::size_t>(labels[r])) {
            ++correct;
        }
    }
    e.accuracy = static_cast<double>(correct) / static_cast<double>(probs.rows());
    return e;
}

void adopt(Model& holder, const Model& incoming) {
    if (holder.arch == incoming.arch && holder.params == incoming.params) {
        return;
    }
    holder.arch = incoming.arch;
    holder.params = incoming.params;
    holder.reset_momentum();
}

std::size_t checkpoint_header_size(const ArchitectureSpec& arch) {
    return 4 + 2 + 1 + 1 + 4 * arch.layer_widths().size();
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
    const auto widths = model.arch.layer_widths();
    if (widths.size() > 255) {
        throw std::invalid_argument("serialize_model: too many layers");
    }
    std::vector<std::uint8_t> out;
    out.reserve(checkpoint_header_size(model.arch) + 8 * model.params.size());
    out.insert(out.end(), {'F', 'E', 'D', 'M'});
    put_u16(out, kCheckpointVersion);
    out.push_back(static_cast<std::uint8_t>(model.arch.activation));
    out.push_back(static_cast<std::uint8_t>(widths.size()));
    for (std::size_t w : widths) {
        put_u32(out, static_cast<std::uint32_t>(w));
    }
    for (double p : model.params) {
        put_u64(out, std::bit_cast<std::uint64_t>(p));
    }
    return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    const std::uint64_t magic = in.take(4, "magic");
    if (magic != 0x4d444546ULL) {  // "FEDM" little-endian
        throw std::runtime_error("checkpoint: bad magic bytes (expected FEDM)");
    }
    const auto version = static_cast<std::uint16_t>(in.take(2, "version"));
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    }
    const auto act = in.take(1, "activation");
    if (act > 1) {
        throw std::runtime_error("checkpoint: unknown activation code " + std::to_string(act));
    }
    const auto count = in.take(1, "layer count");
    if (count < 2) {
        throw std::runtime_error("checkpoint: layer count must be at least 2");
    }
    std::vector<std::size_t> widths;
    for (std::uint64_t k = 0; k < count; ++k) {
        widths.push_back(static_cast<std::size_t>(in.take(4, "layer widths")));
    }
    Model m;
    m.arch.activation = static_cast<Activation>(act);
    m.arch.input_dim = widths.front();
    m.arch.num_classes = widths.back();
    m.arch.hidden_widths.assign(widths.begin() + 1, widths.end() - 1);
    try {
        m.arch.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("checkpoint: ") + e.what());
    }
    const std::size_t n = m.arch.parameter_count();
    if (in.remaining() != 8 * n) {
        throw std::runtime_error("checkpoint: expected " + std::to_string(8 * n) +
                                 " parameter bytes, found " + std::to_string(in.remaining()));
    }
    m.params.resize(n);
    for (auto& p : m.params) {
        p = std::bit_cast<double>(in.take(8, "parameters"));
    }
    m.reset_momentum();
    return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
    const auto bytes = serialize_model(model);
    write_file_atomic(path, bytes);
}

Model load_model(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return deserialize_model(bytes);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace fedme
