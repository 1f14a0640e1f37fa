#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "marginfer/moments.hpp"

namespace marginfer {

using LogPostFn = std::function<double(const Eigen::VectorXd&)>;

struct McmcConfig {
    double stretch_a = 2.0;  // stretch-move scale parameter
    std::uint64_t seed = 0;
    int threads = 1;
    int store_every = 1;  // keep every k-th step (thinning at storage time)
};

/// Stored ensemble chain, step-major: row (t * n_walkers + w) holds walker
/// w at stored step t.
struct ChainResult {
    int n_steps = 0;  // stored steps
    int n_walkers = 0;
    int dim = 0;
    double stretch_a = 2.0;
    std::uint64_t seed = 0;
    double acceptance_rate = 0.0;
    Eigen::MatrixXd samples;  // (n_steps * n_walkers) x dim

    Eigen::Index row(int step, int walker) const {
        return static_cast<Eigen::Index>(step) * n_walkers + walker;
    }
};

/// Affine-invariant ensemble sampler. Per step the two half-ensembles
/// update alternately: each walker draws a partner from the complementary
/// half, z ~ g(z) proportional to 1/sqrt(z) on [1/a, a], proposes
/// y = x_k + z (x_j - x_k) and accepts with min(1, z^(d-1) exp(dlogpost)).
/// Walker (step, index) substreams make the chain deterministic per seed
/// for any thread count. init must have even rows, at least 2*dim, all
/// with finite log_post.
ChainResult run_chain(const LogPostFn& log_post, const Eigen::MatrixXd& init, int n_steps,
                      const McmcConfig& cfg);

/// Sample mean/variance/pairwise covariances of the kept columns over the
/// post-burn-in, thinned chain (burn_in and thin are in stored steps).
MomentEstimates chain_marginal_moments(const ChainResult& chain, const std::vector<int>& keep,
                                       int burn_in, int thin = 1);

/// N_total / (2 tau_int + 1) with tau_int from the initial-positive-
/// sequence sum of walker-averaged autocorrelations. Throws
/// DiagnosticError when the chain is shorter than 10x tau_int or has zero
/// variance (undefined tau).
double effective_sample_size(const ChainResult& chain, int param);

// Chain file: one JSON header line (n_steps, n_walkers, d, seed,
// stretch_a, acceptance_rate) + little-endian float64 sample block.
void write_chain(const ChainResult& chain, const std::filesystem::path& path);
ChainResult read_chain(const std::filesystem::path& path);

}  // namespace marginfer
