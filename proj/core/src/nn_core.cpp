#include "marginfer/nn_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/rng.hpp"
#include "train_util.hpp"

namespace marginfer {
namespace {

using detail::gather_rows;
using detail::shuffled_indices;

double softplus(double y) {
    if (y > 30.0) return y;
    if (y < -30.0) return std::exp(y);
    return std::log1p(std::exp(y));
}

double sigmoid(double y) { return 1.0 / (1.0 + std::exp(-y)); }

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& z, Activation a) {
    switch (a) {
        case Activation::kTanh: return z.array().tanh();
        case Activation::kRelu: return z.cwiseMax(0.0);
        case Activation::kLinear: return z;
    }
    throw ArgumentError("unknown activation");
}

// Derivative expressed through the post-activation value.
Eigen::ArrayXXd activation_derivative(const Eigen::MatrixXd& post, Activation a) {
    switch (a) {
        case Activation::kTanh: return 1.0 - post.array().square();
        case Activation::kRelu: return (post.array() > 0.0).cast<double>();
        case Activation::kLinear: return Eigen::ArrayXXd::Ones(post.rows(), post.cols());
    }
    throw ArgumentError("unknown activation");
}

}  // namespace

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::kTanh: return "tanh";
        case Activation::kRelu: return "relu";
        case Activation::kLinear: return "linear";
    }
    throw ArgumentError("unknown activation");
}

Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::kTanh;
    if (name == "relu") return Activation::kRelu;
    if (name == "linear") return Activation::kLinear;
    throw ArgumentError("unknown activation name: " + name);
}

MlpNetwork MlpNetwork::create(std::vector<int> layer_sizes, std::vector<Activation> activations,
                              std::uint64_t seed) {
    if (layer_sizes.size() < 2) {
        throw ArgumentError("MlpNetwork needs at least input and output layers");
    }
    for (int s : layer_sizes) {
        if (s < 1) throw ArgumentError("layer sizes must be positive");
    }
    if (activations.size() != layer_sizes.size() - 1) {
        throw ArgumentError("need one activation per weight layer");
    }
    if (activations.back() != Activation::kLinear) {
        throw ArgumentError("final activation must be linear");
    }
    MlpNetwork net;
    net.layer_sizes = std::move(layer_sizes);
    net.activations = std::move(activations);
    net.seed = seed;
    const std::size_t n_layers = net.layer_sizes.size() - 1;
    net.weights.resize(n_layers);
    net.biases.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const int fan_in = net.layer_sizes[l];
        const int fan_out = net.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Rng rng = Rng::substream(seed, l);
        net.weights[l].resize(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) {
                net.weights[l](r, c) = rng.uniform(-limit, limit);
            }
        }
        net.biases[l] = Eigen::VectorXd::Zero(fan_out);
    }
    return net;
}

MlpNetwork MlpNetwork::dense(int input_dim, const std::vector<int>& hidden, int output_dim,
                             Activation hidden_activation, std::uint64_t seed) {
    std::vector<int> sizes;
    sizes.push_back(input_dim);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(output_dim);
    std::vector<Activation> acts(hidden.size(), hidden_activation);
    acts.push_back(Activation::kLinear);
    return create(std::move(sizes), std::move(acts), seed);
}

std::size_t MlpNetwork::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        n += static_cast<std::size_t>(weights[l].size()) + static_cast<std::size_t>(biases[l].size());
    }
    return n;
}

void zero_parameters(MlpNetwork& net) {
    for (auto& w : net.weights) w.setZero();
    for (auto& b : net.biases) b.setZero();
}

double OutputMap::apply(double y) const {
    switch (kind) {
        case Kind::kLinear: return y;
        case Kind::kSoftplusFloor: return softplus(y) + eps;
    }
    return y;
}

double OutputMap::derivative(double y) const {
    switch (kind) {
        case Kind::kLinear: return 1.0;
        case Kind::kSoftplusFloor: return sigmoid(y);
    }
    return 1.0;
}

Eigen::VectorXd forward(const MlpNetwork& net, const Eigen::VectorXd& input) {
    if (input.size() != net.input_dim()) {
        throw ArgumentError("forward: input has dimension " + std::to_string(input.size()) +
                            ", expected " + std::to_string(net.input_dim()));
    }
    Eigen::VectorXd a = input;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Eigen::VectorXd z = net.weights[l] * a + net.biases[l];
        a = apply_activation(z, net.activations[l]);
    }
    return a;
}

Eigen::MatrixXd forward_batch(const MlpNetwork& net, const Eigen::MatrixXd& inputs) {
    if (inputs.cols() != net.input_dim()) {
        throw ArgumentError("forward_batch: inputs have " + std::to_string(inputs.cols()) +
                            " columns, expected " + std::to_string(net.input_dim()));
    }
    Eigen::MatrixXd a = inputs;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Eigen::MatrixXd z = (a * net.weights[l].transpose()).rowwise() + net.biases[l].transpose();
        a = apply_activation(z, net.activations[l]);
    }
    return a;
}

ForwardCache forward_cached(const MlpNetwork& net, const Eigen::MatrixXd& inputs) {
    if (inputs.cols() != net.input_dim()) {
        throw ArgumentError("forward_cached: inputs have " + std::to_string(inputs.cols()) +
                            " columns, expected " + std::to_string(net.input_dim()));
    }
    ForwardCache cache;
    cache.activations.reserve(net.weights.size() + 1);
    cache.activations.push_back(inputs);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Eigen::MatrixXd z =
            (cache.activations.back() * net.weights[l].transpose()).rowwise() +
            net.biases[l].transpose();
        cache.activations.push_back(apply_activation(z, net.activations[l]));
    }
    return cache;
}

ParamGrads ParamGrads::zeros_like(const MlpNetwork& net) {
    ParamGrads g;
    g.d_weights.reserve(net.weights.size());
    g.d_biases.reserve(net.biases.size());
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        g.d_weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
        g.d_biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
    return g;
}

Eigen::MatrixXd backward(const MlpNetwork& net, const ForwardCache& cache,
                         const Eigen::MatrixXd& d_output, ParamGrads& grads) {
    const std::size_t n_layers = net.weights.size();
    if (grads.d_weights.size() != n_layers) grads = ParamGrads::zeros_like(net);
    Eigen::MatrixXd g = d_output;  // gradient w.r.t. post-activation of current layer
    for (std::size_t l = n_layers; l-- > 0;) {
        // Last layer is linear; hidden layers fold the activation derivative in.
        if (net.activations[l] != Activation::kLinear) {
            g = g.array() * activation_derivative(cache.activations[l + 1], net.activations[l]);
        }
        grads.d_weights[l] += g.transpose() * cache.activations[l];
        grads.d_biases[l] += g.colwise().sum().transpose();
        if (l > 0) {
            g = g * net.weights[l];
        } else {
            return g * net.weights[0];
        }
    }
    return Eigen::MatrixXd::Zero(d_output.rows(), net.input_dim());
}

LossGrad grad_l2(const MlpNetwork& net, const Eigen::MatrixXd& inputs,
                 const Eigen::MatrixXd& targets, const OutputMap& map) {
    if (inputs.rows() != targets.rows()) {
        throw ArgumentError("grad_l2: inputs and targets row counts differ");
    }
    if (inputs.rows() == 0) throw ArgumentError("grad_l2: empty batch");
    if (targets.cols() != net.output_dim()) {
        throw ArgumentError("grad_l2: targets have " + std::to_string(targets.cols()) +
                            " columns, expected " + std::to_string(net.output_dim()));
    }
    const double n = static_cast<double>(inputs.rows());
    ForwardCache cache = forward_cached(net, inputs);
    const Eigen::MatrixXd& y = cache.output();

    Eigen::MatrixXd mapped(y.rows(), y.cols());
    Eigen::MatrixXd map_deriv(y.rows(), y.cols());
    if (map.kind == OutputMap::Kind::kLinear) {
        mapped = y;
        map_deriv.setOnes();
    } else {
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            for (Eigen::Index j = 0; j < y.cols(); ++j) {
                mapped(i, j) = map.apply(y(i, j));
                map_deriv(i, j) = map.derivative(y(i, j));
            }
        }
    }

    const Eigen::MatrixXd residual = mapped - targets;
    LossGrad out;
    out.loss = residual.squaredNorm() / n;
    const Eigen::MatrixXd d_output = (2.0 / n) * residual.cwiseProduct(map_deriv);
    out.grads = ParamGrads::zeros_like(net);
    backward(net, cache, d_output, out.grads);
    return out;
}

AdamState AdamState::init(const MlpNetwork& net) {
    AdamState s;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        s.m_weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
        s.v_weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
        s.m_biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
        s.v_biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
    return s;
}

void adam_step(MlpNetwork& net, const ParamGrads& grads, AdamState& state, double learning_rate) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    if (grads.d_weights.size() != net.weights.size()) {
        throw ArgumentError("adam_step: gradient shape mismatch");
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step_count));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        state.m_weights[l] = kBeta1 * state.m_weights[l] + (1.0 - kBeta1) * grads.d_weights[l];
        state.v_weights[l] =
            kBeta2 * state.v_weights[l] + (1.0 - kBeta2) * grads.d_weights[l].cwiseAbs2();
        net.weights[l].array() -= learning_rate * (state.m_weights[l].array() / bc1) /
                                  ((state.v_weights[l].array() / bc2).sqrt() + kEps);

        state.m_biases[l] = kBeta1 * state.m_biases[l] + (1.0 - kBeta1) * grads.d_biases[l];
        state.v_biases[l] =
            kBeta2 * state.v_biases[l] + (1.0 - kBeta2) * grads.d_biases[l].cwiseAbs2();
        net.biases[l].array() -= learning_rate * (state.m_biases[l].array() / bc1) /
                                 ((state.v_biases[l].array() / bc2).sqrt() + kEps);
    }
}

void TrainConfig::validate() const {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw ArgumentError("validation_fraction must lie in (0, 1)");
    }
    if (patience < 1) throw ArgumentError("patience must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (max_epochs < 0) throw ArgumentError("max_epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
}

TrainHistory train(MlpNetwork& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                   const TrainConfig& cfg, const OutputMap& map) {
    cfg.validate();
    if (inputs.rows() != targets.rows()) {
        throw ArgumentError("train: inputs and targets row counts differ");
    }
    TrainHistory history;
    if (cfg.max_epochs == 0) return history;

    const std::size_t n = static_cast<std::size_t>(inputs.rows());
    std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * n));
    n_val = std::clamp<std::size_t>(n_val, 1, n > 0 ? n - 1 : 0);
    const std::size_t n_train = n - n_val;
    if (n_train < 2) {
        throw ArgumentError("train: need at least 2 training rows after the validation split");
    }

    Rng rng = Rng::substream(cfg.seed, 0x7261696EULL);
    const std::vector<std::size_t> split = shuffled_indices(n, rng);
    const Eigen::MatrixXd val_x = gather_rows(inputs, split, 0, n_val);
    const Eigen::MatrixXd val_t = gather_rows(targets, split, 0, n_val);
    std::vector<std::size_t> train_idx(split.begin() + static_cast<std::ptrdiff_t>(n_val),
                                       split.end());

    AdamState adam = AdamState::init(net);
    MlpNetwork best = net;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int epochs_since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        detail::reshuffle(train_idx, rng);
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (std::size_t begin = 0; begin < n_train; begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n_train, begin + static_cast<std::size_t>(cfg.batch_size));
            const Eigen::MatrixXd bx = gather_rows(inputs, train_idx, begin, end);
            const Eigen::MatrixXd bt = gather_rows(targets, train_idx, begin, end);
            LossGrad lg = grad_l2(net, bx, bt, map);
            if (!std::isfinite(lg.loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(n_batches));
            }
            adam_step(net, lg.grads, adam, cfg.learning_rate);
            epoch_loss += lg.loss;
            ++n_batches;
        }
        history.train_loss.push_back(epoch_loss / std::max(1, n_batches));

        double val_loss;
        {
            const Eigen::MatrixXd vy = forward_batch(net, val_x);
            double acc = 0.0;
            for (Eigen::Index i = 0; i < vy.rows(); ++i) {
                for (Eigen::Index j = 0; j < vy.cols(); ++j) {
                    const double r = map.apply(vy(i, j)) - val_t(i, j);
                    acc += r * r;
                }
            }
            val_loss = acc / static_cast<double>(vy.rows());
        }
        if (!std::isfinite(val_loss)) {
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        history.val_loss.push_back(val_loss);

        if (val_loss < best_val) {
            best_val = val_loss;
            best = net;
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= cfg.patience) break;
        }
    }

    net = best;
    history.best_epoch = best_epoch;
    history.best_val_loss = best_val;
    return history;
}

void save_network(const MlpNetwork& net, const std::filesystem::path& path) {
    std::vector<std::string> act_names;
    act_names.reserve(net.activations.size());
    for (Activation a : net.activations) act_names.push_back(activation_name(a));
    nlohmann::json header = {{"layer_sizes", net.layer_sizes},
                             {"activations", act_names},
                             {"seed", net.seed},
                             {"n_params", net.parameter_count()}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << header.dump() << "\n";
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (int r = 0; r < net.weights[l].rows(); ++r) {
            for (int c = 0; c < net.weights[l].cols(); ++c) {
                const double v = net.weights[l](r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
        }
        out.write(reinterpret_cast<const char*>(net.biases[l].data()),
                  static_cast<std::streamsize>(net.biases[l].size() * sizeof(double)));
    }
    if (!out) throw ConfigError("write failed for " + path.string());
}

MlpNetwork load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string() + " for reading");
    std::string header_line;
    if (!std::getline(in, header_line)) throw FormatError("missing checkpoint header", 0);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what(), 0);
    }
    std::vector<int> sizes;
    std::vector<Activation> acts;
    std::uint64_t seed = 0;
    std::size_t n_params = 0;
    try {
        sizes = header.at("layer_sizes").get<std::vector<int>>();
        for (const auto& name : header.at("activations")) {
            acts.push_back(activation_from_name(name.get<std::string>()));
        }
        seed = header.at("seed").get<std::uint64_t>();
        n_params = header.at("n_params").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header missing field: ") + e.what(), 0);
    }
    MlpNetwork net = MlpNetwork::create(sizes, acts, seed);
    if (net.parameter_count() != n_params) {
        throw FormatError("checkpoint n_params disagrees with layer sizes",
                          header_line.size() + 1);
    }
    const std::size_t header_bytes = header_line.size() + 1;
    std::size_t read_so_far = 0;
    auto read_block = [&](double* dst, std::size_t count) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
            throw FormatError("checkpoint parameter block truncated",
                              header_bytes + read_so_far * sizeof(double));
        }
        read_so_far += count;
    };
    std::vector<double> buf;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        buf.resize(static_cast<std::size_t>(net.weights[l].size()));
        read_block(buf.data(), buf.size());
        std::size_t k = 0;
        for (int r = 0; r < net.weights[l].rows(); ++r) {
            for (int c = 0; c < net.weights[l].cols(); ++c) net.weights[l](r, c) = buf[k++];
        }
        read_block(net.biases[l].data(), static_cast<std::size_t>(net.biases[l].size()));
    }
    char extra = 0;
    in.read(&extra, 1);
    if (in.gcount() != 0) {
        throw FormatError("checkpoint has trailing bytes",
                          header_bytes + read_so_far * sizeof(double));
    }
    return net;
}

}  // namespace marginfer
