#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "marginfer/moments.hpp"
#include "marginfer/nn_core.hpp"
#include "marginfer/sim_models.hpp"
#include "marginfer/standardize.hpp"

namespace marginfer {

/// Network hierarchy mapping observed data to marginal posterior moments:
/// mean_net realizes F, var_net realizes G (trained on squared residuals
/// of the frozen F), cov_nets one scalar head per parameter pair.
struct MomentNetworkHierarchy {
    MlpNetwork mean_net;
    MlpNetwork var_net;
    std::vector<std::pair<int, int>> pairs;
    std::vector<MlpNetwork> cov_nets;  // aligned with pairs
    Standardizer x_std;
    Standardizer theta_std;
    double eps_var = 1e-8;  // variance floor in standardized units
    std::string trained_on;  // model_tag + batch content hash
    bool has_mean = false;
    bool has_var = false;

    int dim_theta() const { return theta_std.dim(); }
    int dim_x() const { return x_std.dim(); }
};

/// Fits the standardizers from the batch and trains F against theta.
TrainHistory train_mean(MomentNetworkHierarchy& h, const SimulationBatch& batch,
                        const std::vector<int>& hidden, const TrainConfig& cfg);

/// Trains G on componentwise squared residuals of the frozen F; the head's
/// output passes through softplus + eps_var so variances stay positive.
TrainHistory train_var(MomentNetworkHierarchy& h, const SimulationBatch& batch,
                       const std::vector<int>& hidden, const TrainConfig& cfg);

/// Trains one scalar covariance head per pair on residual products of the
/// frozen F. Pair trainings are independent and run on `threads` threads.
std::vector<TrainHistory> train_cov(MomentNetworkHierarchy& h, const SimulationBatch& batch,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    const std::vector<int>& hidden, const TrainConfig& cfg,
                                    int threads = 1);

/// One forward pass per head; applies the variance floor and clamps each
/// covariance to ±0.999·sqrt(var_a · var_b) so every 2x2 summary is SPD.
MomentEstimates estimate(const MomentNetworkHierarchy& h, const Eigen::VectorXd& x_obs);

// Checkpoint directory: manifest.json (pairs, standardization constants,
// eps_var, trained_on) plus one nn_core checkpoint per head.
void save_hierarchy(const MomentNetworkHierarchy& h, const std::filesystem::path& dir);
MomentNetworkHierarchy load_hierarchy(const std::filesystem::path& dir);

}  // namespace marginfer
