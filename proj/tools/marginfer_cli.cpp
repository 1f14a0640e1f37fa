// Command-line pipeline driver: simulate -> train -> mcmc -> corner ->
// crossval -> report. Exit codes: 0 success, 2 configuration error,
// 3 validation/crossval failure, 4 numeric failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "marginfer/analytic_oracle.hpp"
#include "marginfer/crossval.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/log.hpp"
#include "marginfer/marginal_flow.hpp"
#include "marginfer/mcmc_ref.hpp"
#include "marginfer/moment_net.hpp"
#include "marginfer/run_config.hpp"
#include "marginfer/sim_models.hpp"

namespace mf = marginfer;

namespace {

struct CliArgs {
    std::string config_path;
    std::string out_dir;
    std::string data_path;
    std::string obs_path;
    std::string obs_out;
    std::string chain_path;
    std::string method;
    std::string pairs_flag;
    std::string moments_dir;
    std::string flow_dir;
    std::int64_t n_sims = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
    int mcmc_steps = -1;
    int mcmc_walkers = -1;
    int grid_res = -1;
    bool force_all_pairs = false;
};

int checked_override(int value, int minimum, const std::string& flag) {
    if (value < minimum) {
        throw mf::ConfigError(flag + " must be at least " + std::to_string(minimum) + " (got " +
                              std::to_string(value) + ")");
    }
    return value;
}

// uses_pairs: whether the command does per-pair work, which is what the
// quadratic all-pairs gate protects.
mf::RunConfig resolve_config(const CliArgs& args, bool uses_pairs) {
    mf::RunConfig cfg = args.config_path.empty() ? mf::default_run_config()
                                                 : mf::load_run_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    if (args.threads != -1) cfg.threads = checked_override(args.threads, 1, "--threads");
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.n_sims != -1) {
        cfg.n_sims = checked_override(static_cast<int>(args.n_sims), 0, "--n-sims");
    }
    if (args.mcmc_steps != -1) cfg.mcmc_steps = checked_override(args.mcmc_steps, 1, "--mcmc-steps");
    if (args.mcmc_walkers != -1) {
        cfg.mcmc_walkers = checked_override(args.mcmc_walkers, 2, "--mcmc-walkers");
    }
    if (args.grid_res != -1) cfg.grid_res = checked_override(args.grid_res, 2, "--grid-res");
    if (!args.pairs_flag.empty()) {
        std::vector<std::pair<int, int>> pairs;
        cfg.all_pairs = mf::parse_pairs_flag(args.pairs_flag, pairs);
        if (!cfg.all_pairs) cfg.pairs = pairs;
    }
    const int d = cfg.model.dim_theta();
    for (const auto& [a, b] : cfg.pairs) {
        if (a < 0 || b < 0 || a >= d || b >= d) {
            throw mf::ConfigError("pair (" + std::to_string(a) + "," + std::to_string(b) +
                                  ") out of range for dim_theta " + std::to_string(d));
        }
    }
    if (cfg.all_pairs && uses_pairs) {
        const std::size_t n_pairs = cfg.resolve_pairs().size();
        mf::log_warn("all-pairs selected: " + std::to_string(n_pairs) + " pairs for dim " +
                     std::to_string(d) + " (quadratic growth)");
        if (d > 24 && !args.force_all_pairs) {
            throw mf::ConfigError(
                "all-pairs on dim_theta " + std::to_string(d) + " means " +
                std::to_string(n_pairs) + " pairs; pass --force-all-pairs to confirm");
        }
    }
    std::cout << "resolved config:\n" << cfg.resolved_json() << "\n";
    return cfg;
}

mf::SimulationBatch make_batch(const mf::RunConfig& cfg, std::int64_t n, std::uint64_t seed) {
    if (cfg.model.type == mf::ModelConfig::Type::kLinearGaussian) {
        return mf::simulate_linear_gaussian(cfg.model.linear, n, seed);
    }
    return mf::simulate_chirp(cfg.model.chirp, n, seed);
}

void check_dims(const mf::RunConfig& cfg, const mf::SimulationBatch& batch) {
    if (batch.dim_theta() != cfg.model.dim_theta() || batch.dim_x() != cfg.model.dim_x()) {
        throw mf::ConfigError(
            "dataset dimensions (theta " + std::to_string(batch.dim_theta()) + ", x " +
            std::to_string(batch.dim_x()) + ") do not match the model (theta " +
            std::to_string(cfg.model.dim_theta()) + ", x " + std::to_string(cfg.model.dim_x()) +
            ")");
    }
}

void write_obs(const std::filesystem::path& path, const Eigen::VectorXd& theta,
               const Eigen::VectorXd& x, std::uint64_t seed) {
    nlohmann::json j;
    j["seed"] = seed;
    j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    j["x"] = std::vector<double>(x.data(), x.data() + x.size());
    std::ofstream out(path);
    if (!out) throw mf::ConfigError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

Eigen::VectorXd read_obs(const std::filesystem::path& path, int expected_dim) {
    std::ifstream in(path);
    if (!in) throw mf::ConfigError("cannot open observation file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw mf::ConfigError(path.string() + ": " + e.what());
    }
    if (!j.contains("x")) throw mf::ConfigError(path.string() + ": missing \"x\" field");
    const auto vals = j.at("x").get<std::vector<double>>();
    if (expected_dim >= 0 && static_cast<int>(vals.size()) != expected_dim) {
        throw mf::ConfigError(path.string() + ": observation has dimension " +
                              std::to_string(vals.size()) + ", model expects " +
                              std::to_string(expected_dim));
    }
    return Eigen::Map<const Eigen::VectorXd>(vals.data(),
                                             static_cast<Eigen::Index>(vals.size()));
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, mf::TrainHistory>>& histories) {
    std::ofstream out(path);
    if (!out) throw mf::ConfigError("cannot write " + path.string());
    out << "head,epoch,train_loss,val_loss\n";
    out << std::setprecision(17);
    for (const auto& [name, hist] : histories) {
        for (std::size_t e = 0; e < hist.train_loss.size(); ++e) {
            out << name << "," << (e + 1) << "," << hist.train_loss[e] << ","
                << hist.val_loss[e] << "\n";
        }
    }
}

std::string pair_dir_name(std::pair<int, int> p) {
    return "flow_" + std::to_string(p.first) + "_" + std::to_string(p.second);
}

std::vector<std::pair<int, int>> scan_flow_pairs(const std::filesystem::path& dir) {
    std::vector<std::pair<int, int>> found;
    if (!std::filesystem::is_directory(dir)) return found;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        int a = 0, b = 0;
        if (std::sscanf(name.c_str(), "flow_%d_%d", &a, &b) == 2) found.emplace_back(a, b);
    }
    std::sort(found.begin(), found.end());
    return found;
}

mf::FlowEnsemble load_pair_ensemble(const std::filesystem::path& flow_root,
                                    std::pair<int, int> pair) {
    const auto dir = flow_root / pair_dir_name(pair);
    if (!std::filesystem::exists(dir / "manifest.json")) {
        std::string trained = "none";
        const auto found = scan_flow_pairs(flow_root);
        if (!found.empty()) {
            trained.clear();
            for (const auto& [a, b] : found) {
                trained += (trained.empty() ? "" : ", ") + std::to_string(a) + "," +
                           std::to_string(b);
            }
        }
        throw mf::ConfigError("no flow checkpoint for pair (" + std::to_string(pair.first) +
                              "," + std::to_string(pair.second) + ") under " +
                              flow_root.string() + "; trained pairs: " + trained);
    }
    return mf::load_ensemble(dir);
}

// Integrated autocorrelation time implied by the ESS diagnostic.
double tau_from_ess(const mf::ChainResult& chain, int param) {
    const double ess = mf::effective_sample_size(chain, param);
    const double n_total = static_cast<double>(chain.n_steps) * chain.n_walkers;
    return std::max(0.0, (n_total / ess - 1.0) / 2.0);
}

int cmd_simulate(const CliArgs& args) {
    const mf::RunConfig cfg = resolve_config(args, /*uses_pairs=*/false);
    std::filesystem::create_directories(cfg.out_dir);
    if (cfg.n_sims == 0) mf::log_warn("n_sims is 0: writing a valid empty dataset");

    mf::SimulationBatch batch = make_batch(cfg, cfg.n_sims, cfg.seed);
    const auto data_path = cfg.out_dir / "dataset.bin";
    mf::write_batch(batch, data_path);
    std::ostringstream hash;
    hash << std::hex << mf::batch_content_hash(batch);
    std::cout << "dataset: " << data_path.string() << "\n"
              << "  rows: " << batch.n_sims << "\n"
              << "  dim_theta: " << batch.dim_theta() << "\n"
              << "  dim_x: " << batch.dim_x() << "\n"
              << "  model_tag: " << batch.model_tag << "\n"
              << "  seed: " << batch.seed << "\n"
              << "  content_hash: " << hash.str() << "\n";

    if (!args.obs_out.empty()) {
        const std::uint64_t obs_seed = cfg.seed + 1;
        mf::SimulationBatch one = make_batch(cfg, 1, obs_seed);
        write_obs(args.obs_out, one.theta.row(0).transpose(), one.x.row(0).transpose(),
                  obs_seed);
        std::cout << "observation: " << args.obs_out << " (seed " << obs_seed << ")\n";
    }
    return 0;
}

int cmd_train(const CliArgs& args) {
    if (args.method != "moments" && args.method != "flow") {
        throw mf::ConfigError("--method must be \"moments\" or \"flow\"");
    }
    if (args.data_path.empty()) throw mf::ConfigError("train requires --data DATASET");
    const mf::RunConfig cfg = resolve_config(args, /*uses_pairs=*/true);
    const mf::SimulationBatch batch = mf::read_batch(args.data_path);
    check_dims(cfg, batch);
    std::filesystem::create_directories(cfg.out_dir);
    const auto pairs = cfg.resolve_pairs();

    const auto t0 = std::chrono::steady_clock::now();
    if (args.method == "moments") {
        mf::MomentNetworkHierarchy h;
        mf::TrainConfig tc = cfg.moments.train;
        tc.seed = cfg.seed;
        std::vector<std::pair<std::string, mf::TrainHistory>> histories;
        mf::log_info("training mean network");
        histories.emplace_back("mean", mf::train_mean(h, batch, cfg.moments.mean_hidden, tc));
        mf::log_info("training variance network");
        histories.emplace_back("var", mf::train_var(h, batch, cfg.moments.var_hidden, tc));
        mf::log_info("training " + std::to_string(pairs.size()) + " covariance heads");
        const auto cov_hists =
            mf::train_cov(h, batch, pairs, cfg.moments.cov_hidden, tc, cfg.threads);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            histories.emplace_back("cov_" + std::to_string(pairs[i].first) + "_" +
                                       std::to_string(pairs[i].second),
                                   cov_hists[i]);
        }
        const auto dir = cfg.out_dir / "moments";
        mf::save_hierarchy(h, dir);
        write_history_csv(dir / "loss_history.csv", histories);
        std::cout << "moments checkpoint: " << dir.string() << "\n";
    } else {
        mf::FlowTrainOptions opts = cfg.flow;
        opts.train.seed = cfg.seed;
        opts.threads = cfg.threads;
        for (const auto& pair : pairs) {
            mf::log_info("training flow ensemble for pair (" + std::to_string(pair.first) +
                         "," + std::to_string(pair.second) + ")");
            std::vector<mf::TrainHistory> hists;
            mf::FlowTrainOptions pair_opts = opts;
            pair_opts.train.seed =
                mf::Rng::substream(cfg.seed, 0x9A0000 + static_cast<std::uint64_t>(pair.first) *
                                                            1000 +
                                                 static_cast<std::uint64_t>(pair.second))
                    .next_u64();
            const mf::FlowEnsemble ensemble = mf::train_flow(pair, batch, pair_opts, &hists);
            const auto dir = cfg.out_dir / pair_dir_name(pair);
            mf::save_ensemble(ensemble, dir);
            std::vector<std::pair<std::string, mf::TrainHistory>> histories;
            for (std::size_t m = 0; m < hists.size(); ++m) {
                histories.emplace_back("member_" + std::to_string(m), hists[m]);
            }
            write_history_csv(dir / "loss_history.csv", histories);
            std::cout << "flow checkpoint: " << dir.string() << "\n";
        }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    std::cout << "training wall time: " << std::fixed << std::setprecision(1) << elapsed.count()
              << " s\n";
    return 0;
}

int cmd_mcmc(const CliArgs& args) {
    if (args.obs_path.empty()) throw mf::ConfigError("mcmc requires --obs FILE");
    const mf::RunConfig cfg = resolve_config(args, /*uses_pairs=*/false);
    if (cfg.model.type != mf::ModelConfig::Type::kLinearGaussian) {
        throw mf::ConfigError("mcmc requires a linear_gaussian model (known posterior target)");
    }
    const Eigen::VectorXd x_obs = read_obs(args.obs_path, cfg.model.dim_x());
    const mf::GaussianDensity post = mf::conjugate_posterior(cfg.model.linear, x_obs);
    std::filesystem::create_directories(cfg.out_dir);

    const Eigen::MatrixXd init =
        mf::gaussian_sample(post, cfg.mcmc_walkers, mf::Rng::substream(cfg.seed, 0x171).next_u64());
    mf::McmcConfig mcfg;
    mcfg.seed = cfg.seed;
    mcfg.threads = cfg.threads;
    mcfg.store_every = cfg.mcmc_store_every;
    mcfg.stretch_a = cfg.stretch_a;
    const auto t0 = std::chrono::steady_clock::now();
    const mf::ChainResult chain = mf::run_chain(
        [&](const Eigen::VectorXd& theta) { return mf::gaussian_log_pdf(post, theta); },
        init, cfg.mcmc_steps, mcfg);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;

    const auto chain_path = cfg.out_dir / "chain.bin";
    mf::write_chain(chain, chain_path);

    const int d = chain.dim;
    double tau_max = 0.0;
    std::vector<double> ess(d);
    for (int p = 0; p < d; ++p) {
        ess[static_cast<std::size_t>(p)] = mf::effective_sample_size(chain, p);
        tau_max = std::max(tau_max, tau_from_ess(chain, p));
    }
    // Burn-in: five integrated autocorrelation times, capped at half the
    // stored chain.
    const int burn = std::min(chain.n_steps / 2,
                              static_cast<int>(std::ceil(5.0 * tau_max)));
    std::vector<int> keep(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) keep[static_cast<std::size_t>(i)] = i;
    const mf::MomentEstimates moments = mf::chain_marginal_moments(chain, keep, burn, 1);

    nlohmann::json summary;
    summary["chain_file"] = chain_path.string();
    summary["n_steps_stored"] = chain.n_steps;
    summary["n_walkers"] = chain.n_walkers;
    summary["acceptance_rate"] = chain.acceptance_rate;
    summary["burn_in"] = burn;
    summary["tau_int_max"] = tau_max;
    summary["ess"] = ess;
    summary["means"] = std::vector<double>(moments.means.data(),
                                           moments.means.data() + moments.means.size());
    summary["variances"] = std::vector<double>(
        moments.variances.data(), moments.variances.data() + moments.variances.size());
    summary["wall_time_seconds"] = elapsed.count();
    std::ofstream out(cfg.out_dir / "mcmc_summary.json");
    if (!out) throw mf::ConfigError("cannot write mcmc_summary.json");
    out << summary.dump(2) << "\n";
    std::cout << "chain: " << chain_path.string() << "\n"
              << "  acceptance rate: " << chain.acceptance_rate << "\n"
              << "  min ESS: " << *std::min_element(ess.begin(), ess.end()) << "\n"
              << "  burn-in (stored steps): " << burn << "\n";
    return 0;
}

int cmd_corner(const CliArgs& args) {
    if (args.moments_dir.empty() || args.flow_dir.empty() || args.obs_path.empty()) {
        throw mf::ConfigError("corner requires --moments DIR, --flow DIR and --obs FILE");
    }
    const mf::RunConfig cfg = resolve_config(args, /*uses_pairs=*/true);
    const Eigen::VectorXd x_obs = read_obs(args.obs_path, cfg.model.dim_x());
    const mf::MomentNetworkHierarchy h = mf::load_hierarchy(args.moments_dir);
    if (h.dim_x() != x_obs.size()) {
        throw mf::ConfigError("moments checkpoint expects dim_x " + std::to_string(h.dim_x()) +
                              ", observation has " + std::to_string(x_obs.size()));
    }
    std::filesystem::create_directories(cfg.out_dir);
    const auto pairs = cfg.resolve_pairs();
    const mf::MomentEstimates est = mf::estimate(h, x_obs);

    nlohmann::json gauss;
    std::vector<int> diag_indices;
    for (const auto& pair : pairs) {
        const mf::FlowEnsemble ensemble = load_pair_ensemble(args.flow_dir, pair);
        const auto [a, b] = pair;
        const double sa = std::sqrt(est.variances(a));
        const double sb = std::sqrt(est.variances(b));
        mf::GridSpec spec;
        spec.alpha_lo = est.means(a) - 5.0 * sa;
        spec.alpha_hi = est.means(a) + 5.0 * sa;
        spec.beta_lo = est.means(b) - 5.0 * sb;
        spec.beta_hi = est.means(b) + 5.0 * sb;
        spec.res_alpha = cfg.grid_res;
        spec.res_beta = cfg.grid_res;
        const mf::GridDensity grid = mf::grid_density(ensemble, x_obs, spec);

        const auto csv_path =
            cfg.out_dir / ("corner_" + std::to_string(a) + "_" + std::to_string(b) + ".csv");
        std::ofstream csv(csv_path);
        if (!csv) throw mf::ConfigError("cannot write " + csv_path.string());
        csv << "alpha,beta,density\n" << std::setprecision(17);
        for (int ia = 0; ia < spec.res_alpha; ++ia) {
            for (int ib = 0; ib < spec.res_beta; ++ib) {
                csv << grid.alpha(ia) << "," << grid.beta(ib) << "," << grid.density(ia, ib)
                    << "\n";
            }
        }

        double cov_ab = 0.0;
        if (auto it = est.pair_covs.find(pair); it != est.pair_covs.end()) cov_ab = it->second;
        nlohmann::json g;
        g["pair"] = {a, b};
        g["mean"] = {est.means(a), est.means(b)};
        g["cov"] = {{est.variances(a), cov_ab}, {cov_ab, est.variances(b)}};
        g["grid_mass"] = grid.mass();
        gauss.push_back(g);

        if (std::find(diag_indices.begin(), diag_indices.end(), a) == diag_indices.end()) {
            diag_indices.push_back(a);
        }
        if (std::find(diag_indices.begin(), diag_indices.end(), b) == diag_indices.end()) {
            diag_indices.push_back(b);
        }
    }

    // 1D marginals (moment-network Gaussian summaries) for the diagonal.
    std::sort(diag_indices.begin(), diag_indices.end());
    for (int i : diag_indices) {
        const double s = std::sqrt(est.variances(i));
        const auto path = cfg.out_dir / ("diag_" + std::to_string(i) + ".csv");
        std::ofstream csv(path);
        if (!csv) throw mf::ConfigError("cannot write " + path.string());
        csv << "value,density\n" << std::setprecision(17);
        for (int k = 0; k < cfg.grid_res; ++k) {
            const double v = est.means(i) - 5.0 * s +
                             10.0 * s * static_cast<double>(k) / (cfg.grid_res - 1);
            const double z = (v - est.means(i)) / s;
            csv << v << "," << std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI)) << "\n";
        }
    }

    std::ofstream gj(cfg.out_dir / "corner_gaussians.json");
    if (!gj) throw mf::ConfigError("cannot write corner_gaussians.json");
    gj << gauss.dump(2) << "\n";
    std::cout << "corner data: " << pairs.size() << " pair grids, " << diag_indices.size()
              << " diagonal marginals in " << cfg.out_dir.string() << "\n";
    return 0;
}

int cmd_crossval(const CliArgs& args) {
    if (args.moments_dir.empty() || args.flow_dir.empty() || args.obs_path.empty()) {
        throw mf::ConfigError("crossval requires --moments DIR, --flow DIR and --obs FILE");
    }
    const mf::RunConfig cfg = resolve_config(args, /*uses_pairs=*/true);
    const Eigen::VectorXd x_obs = read_obs(args.obs_path, cfg.model.dim_x());
    const mf::MomentNetworkHierarchy h = mf::load_hierarchy(args.moments_dir);
    if (!h.has_mean || !h.has_var) {
        throw mf::ConfigError("moments checkpoint at " + args.moments_dir +
                              " is not fully trained");
    }

    std::vector<std::pair<int, int>> pairs =
        args.pairs_flag.empty() && !cfg.all_pairs && cfg.pairs.empty()
            ? scan_flow_pairs(args.flow_dir)
            : cfg.resolve_pairs();
    if (pairs.empty()) {
        pairs = scan_flow_pairs(args.flow_dir);
        if (pairs.empty()) {
            throw mf::ConfigError("no trained flow pairs found under " + args.flow_dir);
        }
    }
    std::vector<mf::FlowEnsemble> flows;
    for (const auto& pair : pairs) flows.push_back(load_pair_ensemble(args.flow_dir, pair));

    std::optional<mf::GaussianDensity> analytic;
    if (cfg.model.type == mf::ModelConfig::Type::kLinearGaussian) {
        analytic = mf::conjugate_posterior(cfg.model.linear, x_obs);
    }
    std::optional<mf::MomentEstimates> mcmc;
    if (!args.chain_path.empty()) {
        const mf::ChainResult chain = mf::read_chain(args.chain_path);
        double tau_max = 0.0;
        for (int p = 0; p < chain.dim; ++p) tau_max = std::max(tau_max, tau_from_ess(chain, p));
        const int burn =
            std::min(chain.n_steps / 2, static_cast<int>(std::ceil(5.0 * tau_max)));
        std::vector<int> keep(static_cast<std::size_t>(chain.dim));
        for (int i = 0; i < chain.dim; ++i) keep[static_cast<std::size_t>(i)] = i;
        mcmc = mf::chain_marginal_moments(chain, keep, burn, 1);
    }

    mf::CrossvalOptions opts;
    opts.seed = cfg.seed;
    const auto t0 = std::chrono::steady_clock::now();
    mf::ComparisonReport report =
        mf::crossval(h, flows, x_obs, analytic ? &*analytic : nullptr,
                     mcmc ? &*mcmc : nullptr, opts);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    report.model_tag = cfg.model.tag;
    report.runtime_seconds["crossval"] = elapsed.count();

    std::filesystem::create_directories(cfg.out_dir);
    mf::write_report(report, cfg.out_dir / "crossval_report.json");
    for (const auto& rec : report.pairs) {
        std::cout << "pair (" << rec.pair.first << "," << rec.pair.second << "): "
                  << (rec.passed() ? "PASS" : "FAIL") << "  sigma_delta=["
                  << rec.sigma_delta(0) << "," << rec.sigma_delta(1) << "] mean_delta=["
                  << rec.mean_delta(0) << "," << rec.mean_delta(1) << "]";
        if (rec.has_analytic) std::cout << " kl=" << rec.flow_vs_analytic_kl;
        std::cout << "\n";
    }
    std::cout << "report: " << (cfg.out_dir / "crossval_report.json").string() << "\n";
    if (!report.all_pass) {
        throw mf::ValidationError("cross-validation failed for at least one pair");
    }
    std::cout << "crossval: all pairs PASS\n";
    return 0;
}

int cmd_report(const CliArgs& args) {
    const mf::RunConfig cfg = resolve_config(args, /*uses_pairs=*/false);
    nlohmann::json merged;
    merged["schema_version"] = 1;
    bool found_any = false;
    bool all_pass = true;

    const auto crossval_path = cfg.out_dir / "crossval_report.json";
    if (std::filesystem::exists(crossval_path)) {
        std::ifstream in(crossval_path);
        nlohmann::json j;
        in >> j;
        merged["crossval"] = j;
        found_any = true;
        if (j.contains("all_pass")) all_pass = all_pass && j.at("all_pass").get<bool>();
    }
    const auto mcmc_path = cfg.out_dir / "mcmc_summary.json";
    if (std::filesystem::exists(mcmc_path)) {
        std::ifstream in(mcmc_path);
        nlohmann::json j;
        in >> j;
        merged["mcmc"] = j;
        found_any = true;
    }
    const auto data_path = cfg.out_dir / "dataset.bin";
    if (std::filesystem::exists(data_path)) {
        const mf::SimulationBatch batch = mf::read_batch(data_path);
        std::ostringstream hash;
        hash << std::hex << mf::batch_content_hash(batch);
        merged["dataset"] = {{"rows", batch.n_sims},
                             {"dim_theta", batch.dim_theta()},
                             {"dim_x", batch.dim_x()},
                             {"model_tag", batch.model_tag},
                             {"seed", batch.seed},
                             {"content_hash", hash.str()}};
        found_any = true;
    }
    if (!found_any) {
        throw mf::ConfigError("no artifacts found under " + cfg.out_dir.string() +
                              " (expected crossval_report.json, mcmc_summary.json or "
                              "dataset.bin)");
    }
    merged["all_pass"] = all_pass;
    std::ofstream out(cfg.out_dir / "report.json");
    if (!out) throw mf::ConfigError("cannot write report.json");
    out << merged.dump(2) << "\n";
    std::cout << "report: " << (cfg.out_dir / "report.json").string() << "\n"
              << merged.dump(2) << "\n";
    if (!all_pass) throw mf::ValidationError("aggregated report contains failing checks");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"marginal posterior estimation pipeline"};
    app.require_subcommand(1);
    CliArgs args;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "run configuration JSON");
        cmd->add_option("--seed", args.seed, "override the config seed")
            ->each([&](const std::string&) { args.seed_set = true; });
        cmd->add_option("--threads", args.threads, "worker thread count");
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--pairs", args.pairs_flag, "parameter pairs: \"a,b;c,d\" or \"all\"");
        cmd->add_flag("--force-all-pairs", args.force_all_pairs,
                      "allow all-pairs work on models with dim_theta > 24");
    };

    CLI::App* sim = app.add_subcommand("simulate", "generate a simulation dataset");
    add_common(sim);
    sim->add_option("--n-sims", args.n_sims, "number of simulations");
    sim->add_option("--obs-out", args.obs_out, "also write one observation JSON");

    CLI::App* train = app.add_subcommand("train", "train an estimator on a dataset");
    add_common(train);
    train->add_option("--method", args.method, "moments | flow")->required();
    train->add_option("--data", args.data_path, "dataset file")->required();

    CLI::App* mcmc = app.add_subcommand("mcmc", "reference ensemble MCMC on the analytic posterior");
    add_common(mcmc);
    mcmc->add_option("--obs", args.obs_path, "observation JSON")->required();
    mcmc->add_option("--mcmc-steps", args.mcmc_steps, "number of ensemble steps");
    mcmc->add_option("--mcmc-walkers", args.mcmc_walkers, "number of walkers (even, >= 2*dim)");

    CLI::App* corner = app.add_subcommand("corner", "emit corner-plot data files");
    add_common(corner);
    corner->add_option("--moments", args.moments_dir, "moments checkpoint directory")->required();
    corner->add_option("--flow", args.flow_dir, "flow checkpoints root directory")->required();
    corner->add_option("--obs", args.obs_path, "observation JSON")->required();
    corner->add_option("--grid-res", args.grid_res, "grid resolution per axis");

    CLI::App* crossval = app.add_subcommand("crossval", "cross-validate estimators");
    add_common(crossval);
    crossval->add_option("--moments", args.moments_dir, "moments checkpoint directory")
        ->required();
    crossval->add_option("--flow", args.flow_dir, "flow checkpoints root directory")->required();
    crossval->add_option("--obs", args.obs_path, "observation JSON")->required();
    crossval->add_option("--chain", args.chain_path, "optional MCMC chain file");

    CLI::App* report = app.add_subcommand("report", "aggregate run artifacts into report.json");
    add_common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(args);
        if (train->parsed()) return cmd_train(args);
        if (mcmc->parsed()) return cmd_mcmc(args);
        if (corner->parsed()) return cmd_corner(args);
        if (crossval->parsed()) return cmd_crossval(args);
        if (report->parsed()) return cmd_report(args);
    } catch (const mf::ValidationError& e) {
        std::cerr << "validation failure: " << e.what() << "\n";
        return 3;
    } catch (const mf::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const mf::TrainingError& e) {
        std::cerr << "training failure: " << e.what() << "\n";
        return 4;
    } catch (const mf::DiagnosticError& e) {
        std::cerr << "diagnostic failure: " << e.what() << "\n";
        return 4;
    } catch (const mf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mf::ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mf::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal failure: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
