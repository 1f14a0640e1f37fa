#include "marginfer/moment_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/parallel.hpp"
#include "marginfer/rng.hpp"

namespace marginfer {
namespace {

std::string fingerprint(const SimulationBatch& batch) {
    std::ostringstream os;
    os << batch.model_tag << ":" << std::hex << batch_content_hash(batch);
    return os.str();
}

void check_batch(const SimulationBatch& batch) {
    if (batch.n_sims < 2) throw ArgumentError("moment training needs at least 2 simulations");
    if (batch.theta.rows() != batch.x.rows()) {
        throw ArgumentError("batch theta/x row counts differ");
    }
}

// Squared-residual / residual-product targets share the standardized
// residuals of the frozen mean network.
Eigen::MatrixXd standardized_residuals(const MomentNetworkHierarchy& h,
                                       const SimulationBatch& batch) {
    const Eigen::MatrixXd xs = h.x_std.transform(batch.x);
    const Eigen::MatrixXd ts = h.theta_std.transform(batch.theta);
    return ts - forward_batch(h.mean_net, xs);
}

std::vector<double> json_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto vals = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

TrainHistory train_mean(MomentNetworkHierarchy& h, const SimulationBatch& batch,
                        const std::vector<int>& hidden, const TrainConfig& cfg) {
    check_batch(batch);
    h.x_std = Standardizer::fit(batch.x);
    h.theta_std = Standardizer::fit(batch.theta);
    h.mean_net = MlpNetwork::dense(batch.dim_x(), hidden, batch.dim_theta(), Activation::kTanh,
                                   cfg.seed);
    const Eigen::MatrixXd xs = h.x_std.transform(batch.x);
    const Eigen::MatrixXd ts = h.theta_std.transform(batch.theta);
    TrainHistory hist = train(h.mean_net, xs, ts, cfg);
    h.has_mean = true;
    h.has_var = false;
    h.pairs.clear();
    h.cov_nets.clear();
    h.trained_on = fingerprint(batch);
    return hist;
}

TrainHistory train_var(MomentNetworkHierarchy& h, const SimulationBatch& batch,
                       const std::vector<int>& hidden, const TrainConfig& cfg) {
    if (!h.has_mean) throw ArgumentError("train_var requires a trained mean network");
    check_batch(batch);
    if (batch.dim_x() != h.dim_x() || batch.dim_theta() != h.dim_theta()) {
        throw ArgumentError("train_var: batch dimensions disagree with the mean network");
    }
    const Eigen::MatrixXd xs = h.x_std.transform(batch.x);
    const Eigen::MatrixXd targets =
        standardized_residuals(h, batch).array().square().matrix();
    TrainConfig var_cfg = cfg;
    var_cfg.seed = cfg.seed + 1;
    h.var_net = MlpNetwork::dense(batch.dim_x(), hidden, batch.dim_theta(), Activation::kTanh,
                                  var_cfg.seed);
    TrainHistory hist =
        train(h.var_net, xs, targets, var_cfg, OutputMap::softplus_floor(h.eps_var));
    h.has_var = true;
    return hist;
}

std::vector<TrainHistory> train_cov(MomentNetworkHierarchy& h, const SimulationBatch& batch,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    const std::vector<int>& hidden, const TrainConfig& cfg,
                                    int threads) {
    if (!h.has_mean) throw ArgumentError("train_cov requires a trained mean network");
    check_batch(batch);
    for (const auto& [a, b] : pairs) {
        if (a < 0 || b < 0 || a >= h.dim_theta() || b >= h.dim_theta()) {
            throw ArgumentError("train_cov: pair index out of range: (" + std::to_string(a) +
                                "," + std::to_string(b) + ")");
        }
        if (a == b) {
            throw ArgumentError("train_cov: pair indices must differ, got (" + std::to_string(a) +
                                "," + std::to_string(a) + ")");
        }
    }
    const Eigen::MatrixXd xs = h.x_std.transform(batch.x);
    const Eigen::MatrixXd res = standardized_residuals(h, batch);

    h.pairs = pairs;
    h.cov_nets.assign(pairs.size(), MlpNetwork{});
    std::vector<TrainHistory> histories(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        const auto [a, b] = pairs[i];
        const Eigen::MatrixXd target =
            (res.col(a).array() * res.col(b).array()).matrix();
        TrainConfig pair_cfg = cfg;
        pair_cfg.seed = Rng::substream(cfg.seed, 0xC0000 + i).next_u64();
        MlpNetwork net =
            MlpNetwork::dense(h.dim_x(), hidden, 1, Activation::kTanh, pair_cfg.seed);
        histories[i] = train(net, xs, target, pair_cfg);
        h.cov_nets[i] = std::move(net);
    });
    return histories;
}

MomentEstimates estimate(const MomentNetworkHierarchy& h, const Eigen::VectorXd& x_obs) {
    if (!h.has_mean || !h.has_var) {
        throw ArgumentError("estimate requires trained mean and variance networks");
    }
    if (x_obs.size() != h.dim_x()) {
        throw ArgumentError("estimate: x_obs has dimension " + std::to_string(x_obs.size()) +
                            ", expected " + std::to_string(h.dim_x()));
    }
    const Eigen::VectorXd xs = h.x_std.transform_vec(x_obs);
    const int d = h.dim_theta();

    MomentEstimates est;
    est.param_indices.resize(d);
    for (int i = 0; i < d; ++i) est.param_indices[i] = i;

    est.means = h.theta_std.invert_vec(forward(h.mean_net, xs));

    const Eigen::VectorXd raw_var = forward(h.var_net, xs);
    const OutputMap var_map = OutputMap::softplus_floor(h.eps_var);
    est.variances.resize(d);
    for (int i = 0; i < d; ++i) {
        const double std_var = var_map.apply(raw_var(i));
        est.variances(i) =
            std::max(std_var * h.theta_std.scale(i) * h.theta_std.scale(i), h.eps_var);
    }

    for (std::size_t k = 0; k < h.pairs.size(); ++k) {
        const auto [a, b] = h.pairs[k];
        double cov = forward(h.cov_nets[k], xs)(0) * h.theta_std.scale(a) * h.theta_std.scale(b);
        const double bound = 0.999 * std::sqrt(est.variances(a) * est.variances(b));
        cov = std::clamp(cov, -bound, bound);
        est.pair_covs[{a, b}] = cov;
    }
    return est;
}

void save_hierarchy(const MomentNetworkHierarchy& h, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["trained_on"] = h.trained_on;
    manifest["eps_var"] = h.eps_var;
    manifest["has_mean"] = h.has_mean;
    manifest["has_var"] = h.has_var;
    manifest["x_shift"] = json_vec(h.x_std.shift);
    manifest["x_scale"] = json_vec(h.x_std.scale);
    manifest["theta_shift"] = json_vec(h.theta_std.shift);
    manifest["theta_scale"] = json_vec(h.theta_std.scale);
    nlohmann::json jpairs = nlohmann::json::array();
    for (const auto& [a, b] : h.pairs) jpairs.push_back({a, b});
    manifest["pairs"] = jpairs;

    std::ofstream out(dir / "manifest.json");
    if (!out) throw ConfigError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    out.close();

    if (h.has_mean) save_network(h.mean_net, dir / "mean.net");
    if (h.has_var) save_network(h.var_net, dir / "var.net");
    for (std::size_t k = 0; k < h.pairs.size(); ++k) {
        const auto [a, b] = h.pairs[k];
        save_network(h.cov_nets[k],
                     dir / ("cov_" + std::to_string(a) + "_" + std::to_string(b) + ".net"));
    }
}

MomentNetworkHierarchy load_hierarchy(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("cannot read " + manifest_path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed hierarchy manifest: " + std::string(e.what()), 0);
    }
    MomentNetworkHierarchy h;
    try {
        h.trained_on = manifest.at("trained_on").get<std::string>();
        h.eps_var = manifest.at("eps_var").get<double>();
        h.has_mean = manifest.at("has_mean").get<bool>();
        h.has_var = manifest.at("has_var").get<bool>();
        h.x_std.shift = vec_from_json(manifest.at("x_shift"));
        h.x_std.scale = vec_from_json(manifest.at("x_scale"));
        h.theta_std.shift = vec_from_json(manifest.at("theta_shift"));
        h.theta_std.scale = vec_from_json(manifest.at("theta_scale"));
        for (const auto& p : manifest.at("pairs")) {
            h.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("hierarchy manifest missing field: " + std::string(e.what()), 0);
    }
    if (h.has_mean) h.mean_net = load_network(dir / "mean.net");
    if (h.has_var) h.var_net = load_network(dir / "var.net");
    for (const auto& [a, b] : h.pairs) {
        h.cov_nets.push_back(load_network(
            dir / ("cov_" + std::to_string(a) + "_" + std::to_string(b) + ".net")));
    }
    return h;
}

}  // namespace marginfer
