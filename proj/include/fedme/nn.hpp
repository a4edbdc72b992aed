#pragma once

// Small feed-forward classifier engine: fully connected layers with a
// softmax head, exact gradients, and SGD with momentum.
//
// Parameter layout (also the checkpoint layout): for each layer in order,
// the weight matrix row-major by output unit (fan_out x fan_in), followed by
// that layer's biases.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedme/matrix.hpp"

namespace fedme {

/// Training produced a non-finite gradient (learning rate too large).
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct ArchitectureSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t num_classes = 0;
    Activation activation = Activation::relu;

    /// input_dim, hidden widths..., num_classes.
    std::vector<std::size_t> layer_widths() const;
    std::size_t parameter_count() const;
    void validate() const;
    /// True when two models can be trained against each other or clustered
    /// together: only the input and output shapes have to agree.
    bool exchange_compatible(const ArchitectureSpec& other) const {
        return input_dim == other.input_dim && num_classes == other.num_classes;
    }
    std::string describe() const;

    friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct Model {
    ArchitectureSpec arch;
    std::vector<double> params;
    std::vector<double> momentum;

    std::size_t size() const { return params.size(); }
    void reset_momentum() { momentum.assign(params.size(), 0.0); }
};

struct Gradient {
    std::vector<double> values;
};

struct SgdOptions {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

Model init_model(const ArchitectureSpec& arch, std::uint64_t seed);

/// Raw pre-softmax outputs, one row per input row.
Matrix logits(const Model& model, const Matrix& features);

/// Row-wise softmax, max-subtracted.
Matrix softmax(const Matrix& logits);

/// Class probabilities (softmax of the logits).
Matrix forward(const Model& model, const Matrix& features);

/// Mean negative log-likelihood of the labels; logs clamped below at 1e-12.
double cross_entropy(const Matrix& probs, std::span<const int> labels);

/// Mean over rows of sum_m target * log(target / model_probs).
double kl_divergence(const Matrix& target, const Matrix& model_probs);

struct LossAndGradient {
    double loss = 0.0;
    Gradient grad;
};

/// Cross-entropy loss of a single model and its gradient.
LossAndGradient ce_loss_and_grad(const Model& model, const Matrix& features,
                                 std::span<const int> labels);

struct DmlResult {
    double loss_p = 0.0;
    double loss_ex = 0.0;
    Gradient grad_p;
    Gradient grad_ex;
};

/// Mutual-learning losses for a pair of models on one batch:
///   loss_p  = CE(p_p, y)  + KL(p_ex || p_p)
///   loss_ex = CE(p_ex, y) + KL(p_p || p_ex)
/// Each gradient treats the peer's predictions as constants.
DmlResult dml_losses_and_grads(const Model& model_p, const Model& model_ex,
                               const Matrix& features, std::span<const int> labels);

/// Classical momentum with weight decay folded into the gradient:
///   buffer <- momentum * buffer + (grad + weight_decay * params)
///   params <- params - lr * buffer
void sgd_step(Model& model, const Gradient& grad, const SgdOptions& opts);

/// Element-wise mean of the parameters. All models must share one
/// architecture. The result has a zero momentum buffer.
Model average_params(std::span<const Model* const> models);
Model average_params(std::span<const Model> models);

/// sum_k weights[k] * params_k with weights normalized to sum to one.
Model weighted_average_params(std::span<const Model* const> models,
                              std::span<const double> weights);

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mean cross-entropy and argmax accuracy (ties go to the smallest class).
Evaluation evaluate(const Model& model, const Matrix& features, std::span<const int> labels);

std::size_t argmax_row(std::span<const double> row);

/// Replaces `holder` with `incoming` unless they already carry the same
/// architecture and bit-identical parameters. A replaced model starts with a
/// zero momentum buffer; an unchanged one keeps its optimizer state.
void adopt(Model& holder, const Model& incoming);

// Checkpoint format: "FEDM" | u16 version | u8 activation | u8 width count |
// u32 widths (input, hidden..., classes) | f64 params, all little-endian.
inline constexpr std::uint16_t kCheckpointVersion = 1;
std::size_t checkpoint_header_size(const ArchitectureSpec& arch);
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace fedme
