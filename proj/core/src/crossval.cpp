#include "marginfer/crossval.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "marginfer/errors.hpp"

namespace marginfer {
namespace {

Eigen::Vector2d sample_mean(const Eigen::MatrixXd& rows) { return rows.colwise().mean(); }

Eigen::Matrix2d sample_cov(const Eigen::MatrixXd& rows) {
    const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
}

nlohmann::json json_vec2(const Eigen::Vector2d& v) { return {v(0), v(1)}; }

nlohmann::json json_mat2(const Eigen::Matrix2d& m) {
    return {{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}};
}

}  // namespace

PairRecord crossval_pair(const MomentNetworkHierarchy& h, const FlowEnsemble& flow,
                         const Eigen::VectorXd& x_obs, const GaussianDensity* analytic_full,
                         const MomentEstimates* mcmc, const CrossvalOptions& opts) {
    flow.validate();
    if (opts.n_flow_samples < 2) throw ArgumentError("crossval needs n_flow_samples >= 2");
    const auto [a, b] = flow.members.front().pair;

    PairRecord rec;
    rec.pair = {a, b};

    const MomentEstimates mn = estimate(h, x_obs);
    rec.mn_mean = {mn.means(a), mn.means(b)};
    rec.mn_cov(0, 0) = mn.variances(a);
    rec.mn_cov(1, 1) = mn.variances(b);
    double mn_off = 0.0;
    if (auto it = mn.pair_covs.find({a, b}); it != mn.pair_covs.end()) {
        mn_off = it->second;
    } else if (auto rit = mn.pair_covs.find({b, a}); rit != mn.pair_covs.end()) {
        mn_off = rit->second;
    }
    rec.mn_cov(0, 1) = rec.mn_cov(1, 0) = mn_off;

    const Eigen::MatrixXd draws =
        sample(flow, x_obs, opts.n_flow_samples, Rng::substream(opts.seed, 0xCF).next_u64());
    rec.flow_mean = sample_mean(draws);
    rec.flow_cov = sample_cov(draws);

    Eigen::Vector2d sigma_ref;
    if (analytic_full) {
        const GaussianDensity marg = marginalize(*analytic_full, {a, b});
        rec.has_analytic = true;
        rec.analytic_mean = marg.mean;
        rec.analytic_cov = marg.cov;
        sigma_ref = marg.cov.diagonal().array().sqrt();

        // KL(analytic || flow) by Monte Carlo from the analytic marginal.
        const Eigen::MatrixXd kl_draws =
            gaussian_sample(marg, opts.n_kl_samples, Rng::substream(opts.seed, 0x6B).next_u64());
        const Eigen::MatrixXd xrep = x_obs.transpose().replicate(kl_draws.rows(), 1);
        const Eigen::VectorXd log_q = log_prob_batch(flow, kl_draws, xrep);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < kl_draws.rows(); ++i) {
            acc += gaussian_log_pdf(marg, kl_draws.row(i).transpose()) - log_q(i);
        }
        rec.flow_vs_analytic_kl = acc / static_cast<double>(kl_draws.rows());
        rec.pass_kl = rec.flow_vs_analytic_kl < opts.tolerances.kl_max;
    } else {
        sigma_ref = rec.mn_cov.diagonal().array().sqrt();
    }

    if (mcmc) {
        const auto pos = [&](int idx) {
            for (std::size_t i = 0; i < mcmc->param_indices.size(); ++i) {
                if (mcmc->param_indices[i] == idx) return static_cast<int>(i);
            }
            throw ArgumentError("crossval: MCMC moments missing parameter " +
                                std::to_string(idx));
        };
        const int ia = pos(a), ib = pos(b);
        rec.has_mcmc = true;
        rec.mcmc_mean = {mcmc->means(ia), mcmc->means(ib)};
        rec.mcmc_cov(0, 0) = mcmc->variances(ia);
        rec.mcmc_cov(1, 1) = mcmc->variances(ib);
        double off = 0.0;
        if (auto it = mcmc->pair_covs.find({a, b}); it != mcmc->pair_covs.end()) {
            off = it->second;
        } else if (auto rit = mcmc->pair_covs.find({b, a}); rit != mcmc->pair_covs.end()) {
            off = rit->second;
        }
        rec.mcmc_cov(0, 1) = rec.mcmc_cov(1, 0) = off;
    }

    const Eigen::Vector2d sigma_flow = rec.flow_cov.diagonal().array().sqrt();
    const Eigen::Vector2d sigma_mn = rec.mn_cov.diagonal().array().sqrt();
    rec.sigma_delta = (sigma_flow - sigma_mn).cwiseAbs().cwiseQuotient(sigma_ref);
    rec.mean_delta = (rec.flow_mean - rec.mn_mean).cwiseAbs().cwiseQuotient(sigma_ref);
    rec.pass_sigma = rec.sigma_delta.maxCoeff() < opts.tolerances.sigma_rel;
    rec.pass_mean = rec.mean_delta.maxCoeff() < opts.tolerances.mean_rel;
    return rec;
}

ComparisonReport crossval(const MomentNetworkHierarchy& h,
                          const std::vector<FlowEnsemble>& flows, const Eigen::VectorXd& x_obs,
                          const GaussianDensity* analytic_full, const MomentEstimates* mcmc,
                          const CrossvalOptions& opts) {
    if (flows.empty()) throw ArgumentError("crossval: no flow ensembles supplied");
    ComparisonReport report;
    report.tolerances = opts.tolerances;
    for (const auto& flow : flows) {
        report.pairs.push_back(crossval_pair(h, flow, x_obs, analytic_full, mcmc, opts));
        report.all_pass = report.all_pass && report.pairs.back().passed();
    }
    return report;
}

std::string report_json(const ComparisonReport& report) {
    nlohmann::json j;
    j["schema_version"] = report.schema_version;
    j["model_tag"] = report.model_tag;
    j["tolerances"] = {{"sigma_rel", report.tolerances.sigma_rel},
                       {"mean_rel", report.tolerances.mean_rel},
                       {"kl_max", report.tolerances.kl_max}};
    j["all_pass"] = report.all_pass;
    j["runtime_seconds"] = report.runtime_seconds;
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& r : report.pairs) {
        nlohmann::json p;
        p["pair"] = {r.pair.first, r.pair.second};
        p["moment_net"] = {{"mean", json_vec2(r.mn_mean)}, {"cov", json_mat2(r.mn_cov)}};
        p["flow"] = {{"mean", json_vec2(r.flow_mean)}, {"cov", json_mat2(r.flow_cov)}};
        if (r.has_analytic) {
            p["analytic"] = {{"mean", json_vec2(r.analytic_mean)},
                             {"cov", json_mat2(r.analytic_cov)}};
            p["flow_vs_analytic_kl"] = r.flow_vs_analytic_kl;
        }
        if (r.has_mcmc) {
            p["mcmc"] = {{"mean", json_vec2(r.mcmc_mean)}, {"cov", json_mat2(r.mcmc_cov)}};
        }
        p["sigma_delta"] = json_vec2(r.sigma_delta);
        p["mean_delta"] = json_vec2(r.mean_delta);
        p["pass"] = {{"sigma", r.pass_sigma}, {"mean", r.pass_mean}, {"kl", r.pass_kl}};
        pairs.push_back(p);
    }
    j["pairs"] = pairs;
    return j.dump(2);
}

void write_report(const ComparisonReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << report_json(report) << "\n";
    if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace marginfer
