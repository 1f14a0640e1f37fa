#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "marginfer/analytic_oracle.hpp"
#include "marginfer/marginal_flow.hpp"
#include "marginfer/moment_net.hpp"

namespace marginfer {

struct CrossvalTolerances {
    double sigma_rel = 0.15;  // |sigma_flow - sigma_mn| / sigma_ref
    double mean_rel = 0.2;    // |mean_flow - mean_mn| / sigma_ref
    double kl_max = 0.1;      // nats, flow ensemble vs analytic 2D marginal
};

struct CrossvalOptions {
    int n_flow_samples = 10000;  // draws behind the flow moment estimates
    int n_kl_samples = 10000;    // draws behind the Monte Carlo KL estimate
    std::uint64_t seed = 0;
    CrossvalTolerances tolerances;
};

/// One parameter pair's comparison record. sigma_delta / mean_delta are
/// normalized by the reference sigma: analytic when available, otherwise
/// the moment network's own sigma.
struct PairRecord {
    std::pair<int, int> pair{0, 0};

    Eigen::Vector2d mn_mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d mn_cov = Eigen::Matrix2d::Zero();
    Eigen::Vector2d flow_mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d flow_cov = Eigen::Matrix2d::Zero();

    bool has_analytic = false;
    Eigen::Vector2d analytic_mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d analytic_cov = Eigen::Matrix2d::Zero();
    double flow_vs_analytic_kl = 0.0;  // only meaningful when has_analytic

    bool has_mcmc = false;
    Eigen::Vector2d mcmc_mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d mcmc_cov = Eigen::Matrix2d::Zero();

    Eigen::Vector2d sigma_delta = Eigen::Vector2d::Zero();
    Eigen::Vector2d mean_delta = Eigen::Vector2d::Zero();
    bool pass_sigma = false;
    bool pass_mean = false;
    bool pass_kl = true;  // vacuously true without an analytic reference

    bool passed() const { return pass_sigma && pass_mean && pass_kl; }
};

/// Cross-method comparison over a set of pairs, serializable to the
/// versioned report JSON.
struct ComparisonReport {
    int schema_version = 1;
    std::string model_tag;
    CrossvalTolerances tolerances;
    std::vector<PairRecord> pairs;
    bool all_pass = true;
    std::map<std::string, double> runtime_seconds;
};

/// Compares flow-derived moments (sample estimates) against the moment
/// network for one pair; attaches analytic and MCMC references when given
/// (analytic_full is the full-dimensional posterior, marginalized here).
PairRecord crossval_pair(const MomentNetworkHierarchy& h, const FlowEnsemble& flow,
                         const Eigen::VectorXd& x_obs, const GaussianDensity* analytic_full,
                         const MomentEstimates* mcmc, const CrossvalOptions& opts);

/// Runs crossval_pair for every ensemble (one per pair) and aggregates.
ComparisonReport crossval(const MomentNetworkHierarchy& h,
                          const std::vector<FlowEnsemble>& flows, const Eigen::VectorXd& x_obs,
                          const GaussianDensity* analytic_full, const MomentEstimates* mcmc,
                          const CrossvalOptions& opts);

std::string report_json(const ComparisonReport& report);
void write_report(const ComparisonReport& report, const std::filesystem::path& path);

}  // namespace marginfer
