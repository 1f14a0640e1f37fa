#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace marginfer {

/// Linear forward model x = design * theta + noise with Gaussian prior
/// theta ~ N(prior_mean, prior_cov) and noise ~ N(0, noise_cov).
struct LinearGaussianModel {
    Eigen::MatrixXd design;      // dim_x x dim_theta
    Eigen::VectorXd prior_mean;  // dim_theta
    Eigen::MatrixXd prior_cov;   // dim_theta x dim_theta, SPD
    Eigen::MatrixXd noise_cov;   // dim_x x dim_x, SPD (may be non-constant diagonal)

    int dim_theta() const { return static_cast<int>(design.cols()); }
    int dim_x() const { return static_cast<int>(design.rows()); }

    /// Throws ConfigError naming the offending matrix if shapes disagree or
    /// a covariance is not symmetric positive definite.
    void validate() const;
};

/// Default correlated test model: identity design, noise variance ramped
/// linearly from 0.5 to 2.0 across components, prior covariance
/// P_ij = exp(-|i-j| / 5), zero prior mean.
LinearGaussianModel make_default_linear_gaussian(int dim_theta);

/// Synthetic compact-binary chirp model. The clean signal over an
/// n_samples window of spacing dt is
///
///   h(t) = c_amp * K^(5/3) * (pi f(t))^(2/3) / chi * sin(phase(t))
///   f(t) = (1/pi) * (5 / (256 tau))^(3/8) * K^(-5/8),   tau = t_coal - t
///
/// with K the chirp mass expressed in seconds, chi the distance in Mpc and
/// t_coal = n_samples*dt + t_after. Amplitude scales as 1/distance and the
/// instantaneous frequency rises monotonically toward the window end.
/// Additive noise is colored Gaussian shaped by noise_psd (one power value
/// per rfft bin, length n_samples/2 + 1).
struct ChirpModel {
    int n_samples = 128;
    double dt = 1.0 / 2048.0;   // seconds per step
    double mass_prior_lo = 10.0;  // solar masses
    double mass_prior_hi = 30.0;
    double dist_prior_lo = 500.0;  // Mpc
    double dist_prior_hi = 1500.0;
    double t_after = 0.03;  // seconds between window end and coalescence
    Eigen::VectorXd noise_psd;  // per-frequency noise power, n_samples/2 + 1

    void validate() const;
};

/// Chirp parameters drawn per simulation: component masses (uniform priors),
/// distance, and the coalescence phase at the window start. A random phase
/// keeps every time step stochastic; with phi0 = 0 the first sample would be
/// identically zero across all draws.
struct ChirpParams {
    double m1 = 0.0;  // solar masses
    double m2 = 0.0;
    double chi = 0.0;   // Mpc
    double phi0 = 0.0;  // radians
};

/// Default chirp configuration. The PSD follows a bucket shape
/// (f_knee_lo/f)^4 + 1 + (f/f_knee_hi)^2 normalized so the time-domain
/// noise RMS equals noise_rms, then multiplied by psd_scale.
ChirpModel make_default_chirp(double psd_scale = 1.0);

/// Paired draws {theta_i, x_i} from prior x forward model. theta rows are
/// always drawn from the full prior; theta and x have equal row counts.
struct SimulationBatch {
    std::int64_t n_sims = 0;
    Eigen::MatrixXd theta;  // n_sims x dim_theta
    Eigen::MatrixXd x;      // n_sims x dim_x
    std::string model_tag;
    std::uint64_t seed = 0;

    int dim_theta() const { return static_cast<int>(theta.cols()); }
    int dim_x() const { return static_cast<int>(x.cols()); }
};

/// Draws n rows theta ~ N(prior_mean, prior_cov), x = design*theta + noise.
/// Row i uses the (seed, i) substream, so batches are reproducible and rows
/// independent of generation order.
SimulationBatch simulate_linear_gaussian(const LinearGaussianModel& model, std::int64_t n,
                                         std::uint64_t seed);

/// Draws n chirp simulations. theta rows hold the clean signal (the
/// inference target); x rows add colored noise. The generating parameters
/// are returned through params_out when non-null; they are in-memory
/// metadata only and are not part of the serialized batch.
SimulationBatch simulate_chirp(const ChirpModel& model, std::int64_t n, std::uint64_t seed,
                               std::vector<ChirpParams>* params_out = nullptr);

/// Clean (noiseless) chirp signal for fixed parameters.
Eigen::VectorXd chirp_clean_signal(const ChirpModel& model, const ChirpParams& params);

/// One colored-noise realization: white Gaussian spectrum shaped by
/// sqrt(noise_psd), inverse-transformed with a radix-2 FFT. Consumes
/// n_samples normal draws from rng.
Eigen::VectorXd colored_noise(const ChirpModel& model, class Rng& rng);

// Dataset file format: one JSON header line
//   {"n_sims":..,"dim_theta":..,"dim_x":..,"model_tag":"..","seed":..}
// followed by n_sims records of (dim_theta + dim_x) little-endian float64,
// row-major, theta first.
void write_batch(const SimulationBatch& batch, const std::filesystem::path& path);
SimulationBatch read_batch(const std::filesystem::path& path);

/// FNV-1a hash over the batch content (header fields and raw rows); used
/// as the dataset fingerprint.
std::uint64_t batch_content_hash(const SimulationBatch& batch);

}  // namespace marginfer
