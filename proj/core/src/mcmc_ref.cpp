#include "marginfer/mcmc_ref.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/parallel.hpp"
#include "marginfer/rng.hpp"

namespace marginfer {

ChainResult run_chain(const LogPostFn& log_post, const Eigen::MatrixXd& init, int n_steps,
                      const McmcConfig& cfg) {
    const int n_walkers = static_cast<int>(init.rows());
    const int d = static_cast<int>(init.cols());
    if (d < 1) throw ArgumentError("run_chain: empty parameter space");
    if (n_walkers % 2 != 0) throw ArgumentError("run_chain: walker count must be even");
    if (n_walkers < 2 * d) {
        throw ArgumentError("run_chain: need at least 2*dim walkers, got " +
                            std::to_string(n_walkers) + " for dim " + std::to_string(d));
    }
    if (n_steps < 1) throw ArgumentError("run_chain: n_steps must be >= 1");
    if (cfg.store_every < 1) throw ArgumentError("run_chain: store_every must be >= 1");
    if (!(cfg.stretch_a > 1.0)) throw ArgumentError("run_chain: stretch_a must exceed 1");

    Eigen::MatrixXd walkers = init;
    Eigen::VectorXd logp(n_walkers);
    for (int w = 0; w < n_walkers; ++w) {
        logp(w) = log_post(walkers.row(w).transpose());
        if (!std::isfinite(logp(w))) {
            throw ArgumentError("run_chain: non-finite log posterior at initial walker " +
                                std::to_string(w));
        }
    }

    const int half = n_walkers / 2;
    const double a = cfg.stretch_a;
    const int n_stored = n_steps / cfg.store_every;
    ChainResult chain;
    chain.n_steps = n_stored;
    chain.n_walkers = n_walkers;
    chain.dim = d;
    chain.stretch_a = a;
    chain.seed = cfg.seed;
    chain.samples.resize(static_cast<Eigen::Index>(n_stored) * n_walkers, d);

    std::vector<long> accepts(static_cast<std::size_t>(n_walkers), 0);
    int stored = 0;
    for (int t = 1; t <= n_steps; ++t) {
        for (int half_id = 0; half_id < 2; ++half_id) {
            const int lo = half_id * half;
            const int other_lo = (1 - half_id) * half;
            // The complementary half is read at its current state: the
            // first half sees last step's second half, the second sees the
            // freshly updated first half.
            parallel_for(static_cast<std::size_t>(half), cfg.threads, [&](std::size_t k) {
                const int j = lo + static_cast<int>(k);
                Rng rng = Rng::substream(
                    cfg.seed, static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(n_walkers) +
                                  static_cast<std::uint64_t>(j));
                const int partner = other_lo + static_cast<int>(rng.uniform_index(half));
                // z ~ g(z) proportional to 1/sqrt(z) on [1/a, a] via the
                // inverse-CDF form z = ((a-1)u + 1)^2 / a.
                const double root = (a - 1.0) * rng.uniform() + 1.0;
                const double z = root * root / a;
                const Eigen::VectorXd y =
                    walkers.row(partner).transpose() +
                    z * (walkers.row(j).transpose() - walkers.row(partner).transpose());
                const double lp_y = log_post(y);
                const double log_accept = (d - 1) * std::log(z) + lp_y - logp(j);
                if (std::log(rng.uniform()) < log_accept) {
                    walkers.row(j) = y.transpose();
                    logp(j) = lp_y;
                    accepts[static_cast<std::size_t>(j)] += 1;
                }
            });
        }
        if (t % cfg.store_every == 0) {
            chain.samples.middleRows(static_cast<Eigen::Index>(stored) * n_walkers, n_walkers) =
                walkers;
            ++stored;
        }
    }
    const long total_accepts = std::accumulate(accepts.begin(), accepts.end(), 0L);
    chain.acceptance_rate = static_cast<double>(total_accepts) /
                            (static_cast<double>(n_steps) * n_walkers);
    return chain;
}

MomentEstimates chain_marginal_moments(const ChainResult& chain, const std::vector<int>& keep,
                                       int burn_in, int thin) {
    if (keep.empty()) throw ArgumentError("chain_marginal_moments: empty index set");
    std::set<int> seen;
    for (int idx : keep) {
        if (idx < 0 || idx >= chain.dim) {
            throw ArgumentError("chain_marginal_moments: index " + std::to_string(idx) +
                                " out of range for dim " + std::to_string(chain.dim));
        }
        if (!seen.insert(idx).second) {
            throw ArgumentError("chain_marginal_moments: duplicate index " + std::to_string(idx));
        }
    }
    if (thin < 1) throw ArgumentError("chain_marginal_moments: thin must be >= 1");
    if (burn_in < 0 || burn_in >= chain.n_steps) {
        throw ArgumentError("chain_marginal_moments: empty post-burn-in chain");
    }

    std::vector<int> steps;
    for (int t = burn_in; t < chain.n_steps; t += thin) steps.push_back(t);
    const Eigen::Index m =
        static_cast<Eigen::Index>(steps.size()) * chain.n_walkers;
    if (m < 2) throw ArgumentError("chain_marginal_moments: too few retained samples");

    const int k = static_cast<int>(keep.size());
    Eigen::MatrixXd retained(m, k);
    Eigen::Index r = 0;
    for (int t : steps) {
        for (int w = 0; w < chain.n_walkers; ++w, ++r) {
            for (int c = 0; c < k; ++c) retained(r, c) = chain.samples(chain.row(t, w), keep[c]);
        }
    }

    MomentEstimates est;
    est.param_indices = keep;
    est.means = retained.colwise().mean();
    const Eigen::MatrixXd centered = retained.rowwise() - est.means.transpose();
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(m - 1);
    est.variances = cov.diagonal();
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            est.pair_covs[{keep[i], keep[j]}] = cov(i, j);
        }
    }
    return est;
}

double effective_sample_size(const ChainResult& chain, int param) {
    if (param < 0 || param >= chain.dim) {
        throw ArgumentError("effective_sample_size: parameter index out of range");
    }
    const int t_len = chain.n_steps;
    if (t_len < 4) throw DiagnosticError("effective_sample_size: chain too short");
    const int n_walkers = chain.n_walkers;

    Eigen::MatrixXd series(t_len, n_walkers);
    for (int t = 0; t < t_len; ++t) {
        for (int w = 0; w < n_walkers; ++w) series(t, w) = chain.samples(chain.row(t, w), param);
    }
    const double mean = series.mean();
    series.array() -= mean;

    // Walker-averaged autocovariance, normalized by the full length.
    auto gamma = [&](int lag) {
        double acc = 0.0;
        for (int w = 0; w < n_walkers; ++w) {
            acc += series.col(w).head(t_len - lag).dot(series.col(w).tail(t_len - lag));
        }
        return acc / (static_cast<double>(n_walkers) * t_len);
    };

    const double g0 = gamma(0);
    if (g0 < 1e-300) {
        throw DiagnosticError(
            "effective_sample_size: zero-variance chain, autocorrelation time undefined");
    }

    // Geyer initial positive sequence: sum rho-pair terms while positive;
    // sum_m [rho(2m) + rho(2m+1)] = 1 + tau_int.
    const int max_lag = t_len - 1;
    double pair_sum_total = 0.0;
    for (int m = 0; 2 * m + 1 <= max_lag; ++m) {
        const double pair = (gamma(2 * m) + gamma(2 * m + 1)) / g0;
        if (pair <= 0.0) break;
        pair_sum_total += pair;
    }
    const double tau = std::max(0.0, pair_sum_total - 1.0);
    if (static_cast<double>(t_len) <= 10.0 * tau) {
        throw DiagnosticError(
            "effective_sample_size: chain shorter than 10x the integrated autocorrelation time");
    }
    const double n_total = static_cast<double>(t_len) * n_walkers;
    return n_total / (2.0 * tau + 1.0);
}

void write_chain(const ChainResult& chain, const std::filesystem::path& path) {
    nlohmann::json header = {{"n_steps", chain.n_steps},   {"n_walkers", chain.n_walkers},
                             {"d", chain.dim},             {"seed", chain.seed},
                             {"stretch_a", chain.stretch_a},
                             {"acceptance_rate", chain.acceptance_rate}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << header.dump() << "\n";
    for (Eigen::Index r = 0; r < chain.samples.rows(); ++r) {
        for (Eigen::Index c = 0; c < chain.samples.cols(); ++c) {
            const double v = chain.samples(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
    if (!out) throw ConfigError("write failed for " + path.string());
}

ChainResult read_chain(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string() + " for reading");
    std::string header_line;
    if (!std::getline(in, header_line)) throw FormatError("missing chain header", 0);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed chain header: " + std::string(e.what()), 0);
    }
    ChainResult chain;
    try {
        chain.n_steps = header.at("n_steps").get<int>();
        chain.n_walkers = header.at("n_walkers").get<int>();
        chain.dim = header.at("d").get<int>();
        chain.seed = header.at("seed").get<std::uint64_t>();
        chain.stretch_a = header.at("stretch_a").get<double>();
        chain.acceptance_rate = header.at("acceptance_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("chain header missing field: " + std::string(e.what()), 0);
    }
    if (chain.n_steps < 0 || chain.n_walkers < 0 || chain.dim < 0) {
        throw FormatError("chain header has negative sizes", 0);
    }
    const std::size_t header_bytes = header_line.size() + 1;
    const std::size_t count = static_cast<std::size_t>(chain.n_steps) *
                              static_cast<std::size_t>(chain.n_walkers) *
                              static_cast<std::size_t>(chain.dim);
    std::vector<double> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
        throw FormatError("chain sample block truncated",
                          header_bytes + static_cast<std::size_t>(in.gcount()));
    }
    char extra = 0;
    in.read(&extra, 1);
    if (in.gcount() != 0) {
        throw FormatError("chain file has trailing bytes", header_bytes + count * sizeof(double));
    }
    chain.samples.resize(static_cast<Eigen::Index>(chain.n_steps) * chain.n_walkers, chain.dim);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < chain.samples.rows(); ++r) {
        for (Eigen::Index c = 0; c < chain.samples.cols(); ++c) chain.samples(r, c) = buf[k++];
    }
    return chain;
}

}  // namespace marginfer
