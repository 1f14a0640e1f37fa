#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "marginfer/rng.hpp"
#include "marginfer/sim_models.hpp"

namespace marginfer {

/// A multivariate normal density given by its mean and covariance.
/// The covariance must be symmetric (to 1e-12 relative) and positive
/// definite; validate() checks both.
struct GaussianDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    int dim() const { return static_cast<int>(mean.size()); }
    void validate() const;
};

/// Closed-form posterior of a linear-Gaussian model at observation x_obs:
///   cov  = (A' N^-1 A + P^-1)^-1
///   mean = cov (A' N^-1 x_obs + P^-1 prior_mean)
/// Solves go through Cholesky factorizations; the returned covariance is
/// symmetrized after inversion.
GaussianDensity conjugate_posterior(const LinearGaussianModel& model,
                                    const Eigen::VectorXd& x_obs);

/// Marginal over the kept indices: sub-vector of the mean and sub-matrix of
/// the covariance. Indices must be nonempty, valid, and distinct.
GaussianDensity marginalize(const GaussianDensity& g, const std::vector<int>& keep);

/// KL(p || q) in nats between Gaussians of equal dimension:
///   0.5 [tr(Sq^-1 Sp) + (mq-mp)' Sq^-1 (mq-mp) - d + ln(det Sq / det Sp)]
double gaussian_kl(const GaussianDensity& p, const GaussianDensity& q);

/// Log density of g at point v.
double gaussian_log_pdf(const GaussianDensity& g, const Eigen::VectorXd& v);

/// n draws from g (rows). Deterministic for a fixed seed.
Eigen::MatrixXd gaussian_sample(const GaussianDensity& g, int n, std::uint64_t seed);

}  // namespace marginfer
