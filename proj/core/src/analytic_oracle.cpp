#include "marginfer/analytic_oracle.hpp"

#include <cmath>
#include <numbers>

#include "marginfer/errors.hpp"

namespace marginfer {
namespace {

Eigen::LLT<Eigen::MatrixXd> cholesky_or_throw(const Eigen::MatrixXd& m, const char* name) {
    if (m.rows() != m.cols()) {
        throw ArgumentError(std::string(name) + " is not square");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
        throw NumericError(std::string(name) + " is not symmetric positive definite");
    }
    return llt;
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

void GaussianDensity::validate() const {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
        throw ArgumentError("GaussianDensity: mean/cov dimensions disagree");
    }
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw NumericError("GaussianDensity: covariance is not symmetric");
    }
    cholesky_or_throw(cov, "GaussianDensity covariance");
}

GaussianDensity conjugate_posterior(const LinearGaussianModel& model,
                                    const Eigen::VectorXd& x_obs) {
    if (x_obs.size() != model.dim_x()) {
        throw ArgumentError("conjugate_posterior: x_obs has dimension " +
                            std::to_string(x_obs.size()) + ", expected " +
                            std::to_string(model.dim_x()));
    }
    const auto llt_noise = cholesky_or_throw(model.noise_cov, "noise_cov");
    const auto llt_prior = cholesky_or_throw(model.prior_cov, "prior_cov");

    const Eigen::MatrixXd ninv_a = llt_noise.solve(model.design);
    const Eigen::MatrixXd prior_prec =
        llt_prior.solve(Eigen::MatrixXd::Identity(model.dim_theta(), model.dim_theta()));
    Eigen::MatrixXd post_prec = model.design.transpose() * ninv_a + prior_prec;
    post_prec = 0.5 * (post_prec + post_prec.transpose()).eval();

    const auto llt_post = cholesky_or_throw(post_prec, "posterior precision");
    GaussianDensity post;
    post.cov = llt_post.solve(Eigen::MatrixXd::Identity(post_prec.rows(), post_prec.cols()));
    post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();

    const Eigen::VectorXd info =
        model.design.transpose() * llt_noise.solve(x_obs) + llt_prior.solve(model.prior_mean);
    post.mean = llt_post.solve(info);
    return post;
}

GaussianDensity marginalize(const GaussianDensity& g, const std::vector<int>& keep) {
    if (keep.empty()) {
        throw ArgumentError("marginalize: keep set is empty");
    }
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] < 0 || keep[i] >= g.dim()) {
            throw ArgumentError("marginalize: index " + std::to_string(keep[i]) +
                                " out of range for dimension " + std::to_string(g.dim()));
        }
        for (std::size_t j = i + 1; j < keep.size(); ++j) {
            if (keep[i] == keep[j]) {
                throw ArgumentError("marginalize: duplicate index " + std::to_string(keep[i]));
            }
        }
    }
    const int k = static_cast<int>(keep.size());
    GaussianDensity out;
    out.mean.resize(k);
    out.cov.resize(k, k);
    for (int i = 0; i < k; ++i) {
        out.mean(i) = g.mean(keep[i]);
        for (int j = 0; j < k; ++j) out.cov(i, j) = g.cov(keep[i], keep[j]);
    }
    return out;
}

double gaussian_kl(const GaussianDensity& p, const GaussianDensity& q) {
    if (p.dim() != q.dim()) {
        throw ArgumentError("gaussian_kl: dimension mismatch (" + std::to_string(p.dim()) +
                            " vs " + std::to_string(q.dim()) + ")");
    }
    const int d = p.dim();
    const auto llt_q = cholesky_or_throw(q.cov, "q covariance");
    const auto llt_p = cholesky_or_throw(p.cov, "p covariance");

    const double trace_term = llt_q.solve(p.cov).trace();
    const Eigen::VectorXd dm = q.mean - p.mean;
    const double maha = dm.dot(llt_q.solve(dm));
    const double log_det_ratio = log_det_from_llt(llt_q) - log_det_from_llt(llt_p);
    return 0.5 * (trace_term + maha - static_cast<double>(d) + log_det_ratio);
}

double gaussian_log_pdf(const GaussianDensity& g, const Eigen::VectorXd& v) {
    if (v.size() != g.dim()) {
        throw ArgumentError("gaussian_log_pdf: point has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(g.dim()));
    }
    const auto llt = cholesky_or_throw(g.cov, "covariance");
    const Eigen::VectorXd r = v - g.mean;
    const double maha = r.dot(llt.solve(r));
    return -0.5 * (g.dim() * std::log(2.0 * std::numbers::pi) + log_det_from_llt(llt) + maha);
}

Eigen::MatrixXd gaussian_sample(const GaussianDensity& g, int n, std::uint64_t seed) {
    if (n < 0) throw ArgumentError("gaussian_sample: negative count");
    const auto llt = cholesky_or_throw(g.cov, "covariance");
    const Eigen::MatrixXd chol_l = llt.matrixL();
    Eigen::MatrixXd out(n, g.dim());
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(i));
        Eigen::VectorXd z(g.dim());
        for (int k = 0; k < g.dim(); ++k) z(k) = rng.normal();
        out.row(i) = (g.mean + chol_l * z).transpose();
    }
    return out;
}

}  // namespace marginfer
