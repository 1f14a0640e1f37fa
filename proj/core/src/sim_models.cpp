#include "marginfer/sim_models.hpp"

#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/fft.hpp"
#include "marginfer/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

namespace marginfer {
namespace {

// G * M_sun / c^3 in seconds.
constexpr double kSolarMassSeconds = 4.92549094764e-6;
// Single documented scaling constant putting typical clean signals at O(1)
// internal strain units (Mpc per second).
constexpr double kStrainUnit = 1.4e8;

bool is_diagonal(const Eigen::MatrixXd& m) {
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            if (i != j && m(i, j) != 0.0) return false;
        }
    }
    return true;
}

// Lower-triangular square root of a covariance. Strictly SPD matrices go
// through Cholesky; diagonal matrices with nonnegative entries are allowed
// so that noiseless components can be simulated.
Eigen::MatrixXd covariance_sqrt(const Eigen::MatrixXd& m, const char* name) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    if (is_diagonal(m) && m.diagonal().minCoeff() >= 0.0) {
        Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m.rows(), m.cols());
        l.diagonal() = m.diagonal().cwiseSqrt();
        return l;
    }
    throw ConfigError(std::string(name) +
                      " is not positive definite (and not a nonnegative diagonal)");
}

void check_spd_or_nonneg_diagonal(const Eigen::MatrixXd& m, const char* name) {
    if (m.rows() != m.cols()) {
        throw ConfigError(std::string(name) + " is not square");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ConfigError(std::string(name) + " is not symmetric");
    }
    covariance_sqrt(m, name);
}

double chirp_mass(double m1, double m2) {
    return std::pow(m1 * m2, 3.0 / 5.0) / std::pow(m1 + m2, 1.0 / 5.0);
}

double chirp_frequency(double k_sec, double tau) {
    return (1.0 / std::numbers::pi) * std::pow(5.0 / (256.0 * tau), 3.0 / 8.0) *
           std::pow(k_sec, -5.0 / 8.0);
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

void LinearGaussianModel::validate() const {
    if (design.rows() < 1 || design.cols() < 1) {
        throw ConfigError("design matrix must be at least 1x1");
    }
    if (prior_mean.size() != dim_theta()) {
        throw ConfigError("prior_mean length does not match design columns");
    }
    if (prior_cov.rows() != dim_theta() || prior_cov.cols() != dim_theta()) {
        throw ConfigError("prior_cov shape does not match design columns");
    }
    if (noise_cov.rows() != dim_x() || noise_cov.cols() != dim_x()) {
        throw ConfigError("noise_cov shape does not match design rows");
    }
    // prior_cov must be strictly SPD; noise_cov may be a nonnegative
    // diagonal so noiseless observations are representable.
    Eigen::LLT<Eigen::MatrixXd> llt(prior_cov);
    if (llt.info() != Eigen::Success) {
        throw ConfigError("prior_cov is not symmetric positive definite");
    }
    check_spd_or_nonneg_diagonal(noise_cov, "noise_cov");
}

LinearGaussianModel make_default_linear_gaussian(int dim_theta) {
    if (dim_theta < 1) throw ConfigError("dim_theta must be >= 1");
    LinearGaussianModel m;
    m.design = Eigen::MatrixXd::Identity(dim_theta, dim_theta);
    m.prior_mean = Eigen::VectorXd::Zero(dim_theta);
    m.prior_cov.resize(dim_theta, dim_theta);
    for (int i = 0; i < dim_theta; ++i) {
        for (int j = 0; j < dim_theta; ++j) {
            m.prior_cov(i, j) = std::exp(-std::abs(i - j) / 5.0);
        }
    }
    m.noise_cov = Eigen::MatrixXd::Zero(dim_theta, dim_theta);
    for (int i = 0; i < dim_theta; ++i) {
        const double t = dim_theta > 1 ? static_cast<double>(i) / (dim_theta - 1) : 0.0;
        m.noise_cov(i, i) = 0.5 + 1.5 * t;
    }
    return m;
}

void ChirpModel::validate() const {
    if (n_samples < 2) throw ConfigError("n_samples must be >= 2");
    if (!is_power_of_two(static_cast<std::size_t>(n_samples))) {
        throw ConfigError("n_samples must be a power of two (radix-2 noise synthesis)");
    }
    if (dt <= 0.0) throw ConfigError("dt must be positive");
    if (t_after <= 0.0) throw ConfigError("t_after must be positive");
    if (!(mass_prior_lo > 0.0 && mass_prior_lo < mass_prior_hi)) {
        throw ConfigError("mass prior requires 0 < lo < hi");
    }
    if (!(dist_prior_lo > 0.0 && dist_prior_lo < dist_prior_hi)) {
        throw ConfigError("distance prior requires 0 < lo < hi");
    }
    if (noise_psd.size() != n_samples / 2 + 1) {
        throw ConfigError("noise_psd must have n_samples/2 + 1 entries, got " +
                          std::to_string(noise_psd.size()));
    }
    if (noise_psd.size() > 0 && noise_psd.minCoeff() < 0.0) {
        throw ConfigError("noise_psd entries must be nonnegative");
    }
}

ChirpModel make_default_chirp(double psd_scale) {
    if (psd_scale < 0.0) throw ConfigError("psd_scale must be nonnegative");
    ChirpModel m;
    const int nbins = m.n_samples / 2 + 1;
    m.noise_psd.resize(nbins);
    const double df = 1.0 / (m.n_samples * m.dt);
    const double f_knee_lo = 40.0;
    const double f_knee_hi = 350.0;
    for (int k = 0; k < nbins; ++k) {
        const double f = std::max(df, k * df);  // DC bin uses the first bin's shape
        m.noise_psd(k) =
            std::pow(f_knee_lo / f, 4.0) + 1.0 + (f / f_knee_hi) * (f / f_knee_hi);
    }
    // Normalize so the time-domain noise RMS is 0.5 strain units, then apply
    // the caller's scale.
    const double noise_rms = 0.5;
    const int n = m.n_samples;
    double expected_var = m.noise_psd(0) + m.noise_psd(nbins - 1);
    for (int k = 1; k < nbins - 1; ++k) expected_var += 2.0 * m.noise_psd(k);
    expected_var /= n;
    m.noise_psd *= (noise_rms * noise_rms / expected_var) * psd_scale;
    return m;
}

SimulationBatch simulate_linear_gaussian(const LinearGaussianModel& model, std::int64_t n,
                                         std::uint64_t seed) {
    model.validate();
    if (n < 0) throw ArgumentError("simulate_linear_gaussian: negative count");
    const int dt = model.dim_theta();
    const int dx = model.dim_x();
    const Eigen::MatrixXd chol_prior = covariance_sqrt(model.prior_cov, "prior_cov");
    const Eigen::MatrixXd chol_noise = covariance_sqrt(model.noise_cov, "noise_cov");

    SimulationBatch b;
    b.n_sims = n;
    b.seed = seed;
    b.model_tag = "linear_gaussian_d" + std::to_string(dt) + "_x" + std::to_string(dx);
    b.theta.resize(n, dt);
    b.x.resize(n, dx);
    for (std::int64_t i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(i));
        Eigen::VectorXd z(dt);
        for (int k = 0; k < dt; ++k) z(k) = rng.normal();
        const Eigen::VectorXd theta = model.prior_mean + chol_prior * z;
        Eigen::VectorXd w(dx);
        for (int k = 0; k < dx; ++k) w(k) = rng.normal();
        b.theta.row(i) = theta.transpose();
        b.x.row(i) = (model.design * theta + chol_noise * w).transpose();
    }
    return b;
}

Eigen::VectorXd chirp_clean_signal(const ChirpModel& model, const ChirpParams& params) {
    const double mc = chirp_mass(params.m1, params.m2);
    const double k_sec = mc * kSolarMassSeconds;
    const double t_coal = model.n_samples * model.dt + model.t_after;
    const double phase_scale =
        (16.0 / 5.0) * std::pow(5.0 / 256.0, 3.0 / 8.0) * std::pow(k_sec, -5.0 / 8.0);
    Eigen::VectorXd h(model.n_samples);
    for (int i = 0; i < model.n_samples; ++i) {
        const double tau = t_coal - i * model.dt;
        const double f = chirp_frequency(k_sec, tau);
        const double phase =
            phase_scale * (std::pow(t_coal, 5.0 / 8.0) - std::pow(tau, 5.0 / 8.0));
        const double amp = kStrainUnit * std::pow(k_sec, 5.0 / 3.0) *
                           std::pow(std::numbers::pi * f, 2.0 / 3.0) / params.chi;
        h(i) = amp * std::sin(phase + params.phi0);
    }
    return h;
}

Eigen::VectorXd colored_noise(const ChirpModel& model, Rng& rng) {
    const int n = model.n_samples;
    const int nbins = n / 2 + 1;
    // Hermitian spectrum: Z_0 and Z_{N/2} real with variance N*psd; interior
    // bins complex with variance N*psd/2 per quadrature component. The draw
    // order (bin 0, then re/im pairs, then Nyquist) is part of the format.
    std::vector<std::complex<double>> spectrum(n, {0.0, 0.0});
    spectrum[0] = std::sqrt(static_cast<double>(n) * model.noise_psd(0)) * rng.normal();
    for (int k = 1; k < nbins - 1; ++k) {
        const double s = std::sqrt(static_cast<double>(n) * model.noise_psd(k) / 2.0);
        const double re = s * rng.normal();
        const double im = s * rng.normal();
        spectrum[k] = {re, im};
        spectrum[n - k] = {re, -im};
    }
    spectrum[n / 2] =
        std::sqrt(static_cast<double>(n) * model.noise_psd(nbins - 1)) * rng.normal();
    ifft(spectrum);
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) out(i) = spectrum[i].real();
    return out;
}

SimulationBatch simulate_chirp(const ChirpModel& model, std::int64_t n, std::uint64_t seed,
                               std::vector<ChirpParams>* params_out) {
    model.validate();
    if (n < 0) throw ArgumentError("simulate_chirp: negative count");
    SimulationBatch b;
    b.n_sims = n;
    b.seed = seed;
    b.model_tag = "chirp_n" + std::to_string(model.n_samples);
    b.theta.resize(n, model.n_samples);
    b.x.resize(n, model.n_samples);
    if (params_out != nullptr) {
        params_out->clear();
        params_out->reserve(static_cast<std::size_t>(n));
    }
    for (std::int64_t i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(i));
        ChirpParams p;
        p.m1 = rng.uniform(model.mass_prior_lo, model.mass_prior_hi);
        p.m2 = rng.uniform(model.mass_prior_lo, model.mass_prior_hi);
        p.chi = rng.uniform(model.dist_prior_lo, model.dist_prior_hi);
        p.phi0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const Eigen::VectorXd clean = chirp_clean_signal(model, p);
        b.theta.row(i) = clean.transpose();
        b.x.row(i) = (clean + colored_noise(model, rng)).transpose();
        if (params_out != nullptr) params_out->push_back(p);
    }
    return b;
}

void write_batch(const SimulationBatch& batch, const std::filesystem::path& path) {
    nlohmann::json header = {{"n_sims", batch.n_sims},
                             {"dim_theta", batch.dim_theta()},
                             {"dim_x", batch.dim_x()},
                             {"model_tag", batch.model_tag},
                             {"seed", batch.seed}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << header.dump() << "\n";
    const int row_len = batch.dim_theta() + batch.dim_x();
    std::vector<double> row(static_cast<std::size_t>(row_len));
    for (std::int64_t i = 0; i < batch.n_sims; ++i) {
        for (int j = 0; j < batch.dim_theta(); ++j) row[static_cast<std::size_t>(j)] = batch.theta(i, j);
        for (int j = 0; j < batch.dim_x(); ++j)
            row[static_cast<std::size_t>(batch.dim_theta() + j)] = batch.x(i, j);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
    if (!out) throw ConfigError("write failed for " + path.string());
}

SimulationBatch read_batch(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string() + " for reading");
    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw FormatError("missing dataset header line", 0);
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset header: ") + e.what(), 0);
    }
    SimulationBatch b;
    std::int64_t dim_theta = 0;
    std::int64_t dim_x = 0;
    try {
        b.n_sims = header.at("n_sims").get<std::int64_t>();
        dim_theta = header.at("dim_theta").get<std::int64_t>();
        dim_x = header.at("dim_x").get<std::int64_t>();
        b.model_tag = header.at("model_tag").get<std::string>();
        b.seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset header missing field: ") + e.what(), 0);
    }
    const std::size_t header_bytes = header_line.size() + 1;
    if (b.n_sims < 0 || dim_theta < 0 || dim_x < 0) {
        throw FormatError("dataset header has negative counts", 0);
    }
    b.theta.resize(b.n_sims, dim_theta);
    b.x.resize(b.n_sims, dim_x);
    const std::size_t row_len = static_cast<std::size_t>(dim_theta + dim_x);
    std::vector<double> row(row_len);
    for (std::int64_t i = 0; i < b.n_sims; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row_len * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != row_len * sizeof(double)) {
            throw FormatError(
                "dataset truncated: header promises " + std::to_string(b.n_sims) + " rows",
                header_bytes + static_cast<std::size_t>(i) * row_len * sizeof(double) +
                    static_cast<std::size_t>(in.gcount() > 0 ? in.gcount() : 0));
        }
        for (std::int64_t j = 0; j < dim_theta; ++j) b.theta(i, j) = row[static_cast<std::size_t>(j)];
        for (std::int64_t j = 0; j < dim_x; ++j)
            b.x(i, j) = row[static_cast<std::size_t>(dim_theta + j)];
    }
    // Trailing bytes mean the header row count disagrees with the payload.
    char extra = 0;
    in.read(&extra, 1);
    if (in.gcount() != 0) {
        throw FormatError("dataset has trailing bytes beyond the promised rows",
                          header_bytes + static_cast<std::size_t>(b.n_sims) * row_len * sizeof(double));
    }
    return b;
}

std::uint64_t batch_content_hash(const SimulationBatch& batch) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    const std::int64_t meta[3] = {batch.n_sims, batch.dim_theta(), batch.dim_x()};
    h = fnv1a(meta, sizeof(meta), h);
    h = fnv1a(batch.model_tag.data(), batch.model_tag.size(), h);
    h = fnv1a(&batch.seed, sizeof(batch.seed), h);
    for (std::int64_t i = 0; i < batch.n_sims; ++i) {
        for (int j = 0; j < batch.dim_theta(); ++j) {
            const double v = batch.theta(i, j);
            h = fnv1a(&v, sizeof(v), h);
        }
        for (int j = 0; j < batch.dim_x(); ++j) {
            const double v = batch.x(i, j);
            h = fnv1a(&v, sizeof(v), h);
        }
    }
    return h;
}

}  // namespace marginfer
