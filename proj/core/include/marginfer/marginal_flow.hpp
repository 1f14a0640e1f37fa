#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "marginfer/nn_core.hpp"
#include "marginfer/sim_models.hpp"
#include "marginfer/standardize.hpp"

namespace marginfer {

/// Conditional 2D masked autoregressive flow over a parameter pair (a, b):
/// a stack of affine autoregressive stages
///
///   u_i = (t_i - mu_i(t_<i, x)) * exp(-s_i(t_<i, x))
///
/// terminating in a standard 2D normal base density. Within a stage the
/// first coordinate's conditioner sees only x and the second sees (first
/// coordinate, x); stages alternate the coordinate order. Log-scales are
/// clamped to [-7, 7]. With all conditioner parameters zero the flow is
/// the identity onto the base normal.
struct FlowModel {
    int n_stages = 5;
    std::pair<int, int> pair{0, 1};
    std::vector<MlpNetwork> cond_first;   // per stage: x -> (shift, log-scale)
    std::vector<MlpNetwork> cond_second;  // per stage: (first coord, x) -> (shift, log-scale)
    Standardizer theta_std;  // dimension 2, inverted on output
    Standardizer x_std;
    std::uint64_t seed = 0;

    int dim_x() const { return x_std.dim(); }

    /// Fresh flow with Glorot-initialized conditioners (one hidden stack
    /// per conditioner) and identity standardization.
    static FlowModel create(std::pair<int, int> pair, int dim_x, int n_stages,
                            const std::vector<int>& hidden, std::uint64_t seed);
};

/// Equal-weight mixture of flows trained from different seeds; densities
/// combine by averaging, which preserves normalization exactly.
struct FlowEnsemble {
    std::vector<FlowModel> members;

    void validate() const;
};

/// Log density of the modeled conditional at (alpha, beta) given x, in
/// the original (de-standardized) parameter units. Non-finite inputs are
/// rejected with an argument error.
double log_prob(const FlowModel& flow, const Eigen::Vector2d& alpha_beta,
                const Eigen::VectorXd& x);
double log_prob(const FlowEnsemble& ensemble, const Eigen::Vector2d& alpha_beta,
                const Eigen::VectorXd& x);

/// Row-wise log density for paired (alpha_beta, x) rows.
Eigen::VectorXd log_prob_batch(const FlowModel& flow, const Eigen::MatrixXd& alpha_beta,
                               const Eigen::MatrixXd& x);
Eigen::VectorXd log_prob_batch(const FlowEnsemble& ensemble, const Eigen::MatrixXd& alpha_beta,
                               const Eigen::MatrixXd& x);

/// Forward autoregressive transform into the base space: the u rows for
/// paired (alpha_beta, x) rows. log_prob decomposes as
///   log q(alpha_beta | x) = log N2(u) + log |det du/d(alpha_beta)|
/// which makes the Jacobian checkable against finite differences.
Eigen::MatrixXd flow_transform(const FlowModel& flow, const Eigen::MatrixXd& alpha_beta,
                               const Eigen::MatrixXd& x);

struct FlowTrainOptions {
    int n_stages = 5;
    std::vector<int> hidden = {64};  // per-conditioner hidden widths
    int n_members = 3;
    TrainConfig train;
    int threads = 1;
};

/// Trains an ensemble on (theta_a, theta_b, x) triples extracted from the
/// batch by negative log-likelihood; members differ only by seed and train
/// independently (in parallel when threads > 1).
FlowEnsemble train_flow(std::pair<int, int> pair, const SimulationBatch& batch,
                        const FlowTrainOptions& opts,
                        std::vector<TrainHistory>* histories = nullptr);

/// Draws from the modeled conditional by passing base normals through the
/// inverse transform. Ensemble sampling picks a member uniformly per draw.
/// Returns n x 2 (alpha, beta) rows; deterministic per seed.
Eigen::MatrixXd sample(const FlowModel& flow, const Eigen::VectorXd& x, int n,
                       std::uint64_t seed);
Eigen::MatrixXd sample(const FlowEnsemble& ensemble, const Eigen::VectorXd& x, int n,
                       std::uint64_t seed);

struct GridSpec {
    double alpha_lo = 0.0, alpha_hi = 0.0;
    double beta_lo = 0.0, beta_hi = 0.0;
    int res_alpha = 0, res_beta = 0;

    void validate() const;  // resolution >= 2 per axis, bounds not inverted
};

struct GridDensity {
    Eigen::VectorXd alpha;     // res_alpha grid values
    Eigen::VectorXd beta;      // res_beta grid values
    Eigen::MatrixXd density;   // res_alpha x res_beta

    /// Riemann mass: sum of densities times the cell area.
    double mass() const;
};

GridDensity grid_density(const FlowModel& flow, const Eigen::VectorXd& x, const GridSpec& spec);
GridDensity grid_density(const FlowEnsemble& ensemble, const Eigen::VectorXd& x,
                         const GridSpec& spec);

// Flow checkpoint: directory with manifest.json plus one nn_core
// checkpoint per conditioner; ensembles hold one subdirectory per member.
void save_flow(const FlowModel& flow, const std::filesystem::path& dir);
FlowModel load_flow(const std::filesystem::path& dir);
void save_ensemble(const FlowEnsemble& ensemble, const std::filesystem::path& dir);
FlowEnsemble load_ensemble(const std::filesystem::path& dir);

}  // namespace marginfer
