#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace marginfer {

enum class Activation { kTanh, kRelu, kLinear };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Dense feed-forward network. layer_sizes = [in, h1, ..., out];
/// activations has one entry per weight layer and the last one must be
/// linear (output heads apply their own maps). Weights are initialized
/// Glorot-uniform from the network's own seed, biases start at zero.
struct MlpNetwork {
    std::vector<int> layer_sizes;
    std::vector<Activation> activations;
    std::vector<Eigen::MatrixXd> weights;  // weights[l]: layer_sizes[l+1] x layer_sizes[l]
    std::vector<Eigen::VectorXd> biases;
    std::uint64_t seed = 0;

    static MlpNetwork create(std::vector<int> layer_sizes, std::vector<Activation> activations,
                             std::uint64_t seed);
    /// Convenience builder: hidden layers share one activation, output linear.
    static MlpNetwork dense(int input_dim, const std::vector<int>& hidden, int output_dim,
                            Activation hidden_activation, std::uint64_t seed);

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    std::size_t parameter_count() const;
};

/// Sets all weights and biases to zero (used by flows, whose zero
/// configuration is the identity transform).
void zero_parameters(MlpNetwork& net);

/// Elementwise map applied to the network output inside the L2 loss.
/// kSoftplusFloor maps y -> softplus(y) + eps, guaranteeing positive
/// outputs for variance heads.
struct OutputMap {
    enum class Kind { kLinear, kSoftplusFloor };
    Kind kind = Kind::kLinear;
    double eps = 0.0;

    static OutputMap linear() { return {}; }
    static OutputMap softplus_floor(double eps) {
        return {Kind::kSoftplusFloor, eps};
    }
    double apply(double y) const;
    double derivative(double y) const;
};

/// Forward pass on a single input; returns the last-layer pre-activation.
Eigen::VectorXd forward(const MlpNetwork& net, const Eigen::VectorXd& input);

/// Batched forward pass; rows are samples.
Eigen::MatrixXd forward_batch(const MlpNetwork& net, const Eigen::MatrixXd& inputs);

/// Post-activation values cached layer by layer for reverse mode.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> activations;  // activations[0] = inputs
    const Eigen::MatrixXd& output() const { return activations.back(); }
};

ForwardCache forward_cached(const MlpNetwork& net, const Eigen::MatrixXd& inputs);

/// Parameter-shaped gradient collection.
struct ParamGrads {
    std::vector<Eigen::MatrixXd> d_weights;
    std::vector<Eigen::VectorXd> d_biases;

    static ParamGrads zeros_like(const MlpNetwork& net);
};

/// Reverse-mode pass from an output gradient (same shape as the batched
/// output). Accumulates parameter gradients into grads and returns the
/// gradient with respect to the inputs.
Eigen::MatrixXd backward(const MlpNetwork& net, const ForwardCache& cache,
                         const Eigen::MatrixXd& d_output, ParamGrads& grads);

struct LossGrad {
    double loss = 0.0;
    ParamGrads grads;
};

/// Mean-over-rows squared error: loss = (1/n) sum_i ||target_i - map(f(x_i))||^2
/// with exact reverse-mode gradients.
LossGrad grad_l2(const MlpNetwork& net, const Eigen::MatrixXd& inputs,
                 const Eigen::MatrixXd& targets, const OutputMap& map = OutputMap::linear());

/// Adam first/second-moment state (beta1=0.9, beta2=0.999, eps=1e-8).
struct AdamState {
    std::vector<Eigen::MatrixXd> m_weights, v_weights;
    std::vector<Eigen::VectorXd> m_biases, v_biases;
    long step_count = 0;

    static AdamState init(const MlpNetwork& net);
};

void adam_step(MlpNetwork& net, const ParamGrads& grads, AdamState& state, double learning_rate);

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 128;
    int max_epochs = 200;
    int patience = 20;              // early stopping on validation loss
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;  // mean minibatch loss per epoch
    std::vector<double> val_loss;    // full validation loss per epoch
    int best_epoch = -1;             // 1-based; -1 when no training happened
    double best_val_loss = 0.0;
};

/// Minibatch Adam with a deterministic validation split and early stopping.
/// The network is left at the parameter snapshot with the lowest validation
/// loss. Throws TrainingError (with epoch and batch) on non-finite loss.
TrainHistory train(MlpNetwork& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                   const TrainConfig& cfg, const OutputMap& map = OutputMap::linear());

// Checkpoint format: one JSON header line
//   {"layer_sizes":[..],"activations":[..],"seed":..,"n_params":..}
// followed by the flat little-endian float64 parameter block, layer by
// layer: weight matrix row-major, then bias.
void save_network(const MlpNetwork& net, const std::filesystem::path& path);
MlpNetwork load_network(const std::filesystem::path& path);

}  // namespace marginfer
