#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "doctest.h"
#include "marginfer/analytic_oracle.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/marginal_flow.hpp"
#include "marginfer/rng.hpp"
#include "marginfer/sim_models.hpp"
#include "test_util.hpp"

using namespace marginfer;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

FlowModel zero_flow(int dim_x, std::pair<int, int> pr = {0, 1}, int n_stages = 5) {
    auto flow = FlowModel::create(pr, dim_x, n_stages, {8}, 99);
    for (auto& net : flow.cond_first) zero_parameters(net);
    for (auto& net : flow.cond_second) zero_parameters(net);
    return flow;
}

/// Exchangeable 2d model, a trained 3-member ensemble on pair (0,1), and
/// the analytic posterior at one probe observation. Trained once.
struct FlowFixture {
    LinearGaussianModel model;
    FlowEnsemble ens;
    std::vector<TrainHistory> histories;
    Eigen::VectorXd x_obs;
    GaussianDensity post;
};

const FlowFixture& trained_fixture() {
    static const FlowFixture fx = [] {
        FlowFixture f;
        f.model.design = Eigen::MatrixXd::Identity(2, 2);
        f.model.prior_mean = Eigen::VectorXd::Zero(2);
        f.model.prior_cov.resize(2, 2);
        f.model.prior_cov << 1.0, 0.5, 0.5, 1.0;
        f.model.noise_cov = Eigen::MatrixXd::Identity(2, 2);
        f.model.validate();

        const auto batch = simulate_linear_gaussian(f.model, 8000, 2025);
        FlowTrainOptions opts;
        opts.n_stages = 5;
        opts.hidden = {32};
        opts.n_members = 3;
        opts.train.max_epochs = 60;
        opts.train.patience = 8;
        opts.train.learning_rate = 2e-3;
        opts.train.seed = 17;
        f.ens = train_flow({0, 1}, batch, opts, &f.histories);

        f.x_obs = Eigen::Vector2d(1.0, -0.5);
        f.post = conjugate_posterior(f.model, f.x_obs);
        return f;
    }();
    return fx;
}

/// 2x2 Jacobian determinant of theta -> u by central differences.
double fd_jacobian_det(const FlowModel& flow, const Eigen::Vector2d& theta,
                       const Eigen::VectorXd& x, double step) {
    Eigen::Matrix2d jac;
    const Eigen::MatrixXd xrow = x.transpose();
    for (int j = 0; j < 2; ++j) {
        Eigen::Vector2d up = theta, down = theta;
        up(j) += step;
        down(j) -= step;
        const Eigen::MatrixXd u_up = flow_transform(flow, up.transpose(), xrow);
        const Eigen::MatrixXd u_down = flow_transform(flow, down.transpose(), xrow);
        jac.col(j) = (u_up.row(0) - u_down.row(0)).transpose() / (2.0 * step);
    }
    return jac.determinant();
}

}  // namespace

TEST_CASE("zero-conditioner flow is the standard normal") {
    const auto flow = zero_flow(3);
    const Eigen::VectorXd x = Eigen::Vector3d(0.5, -1.0, 2.0);

    CHECK(log_prob(flow, Eigen::Vector2d(0.0, 0.0), x) ==
          doctest::Approx(-kLog2Pi).epsilon(1e-12));
    CHECK(log_prob(flow, Eigen::Vector2d(1.0, -1.0), x) ==
          doctest::Approx(-kLog2Pi - 1.0).epsilon(1e-12));

    // The conditioning observation is ignored when all conditioners are zero.
    CHECK(log_prob(flow, Eigen::Vector2d(0.7, 0.2), x) ==
          log_prob(flow, Eigen::Vector2d(0.7, 0.2), Eigen::Vector3d(9.0, 9.0, 9.0)));
}

TEST_CASE("zero-conditioner flow integrates to unit mass") {
    const auto flow = zero_flow(1);
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    for (double half_width : {5.0, 6.0}) {
        GridSpec spec;
        spec.alpha_lo = -half_width;
        spec.alpha_hi = half_width;
        spec.beta_lo = -half_width;
        spec.beta_hi = half_width;
        spec.res_alpha = 200;
        spec.res_beta = 200;
        const auto grid = grid_density(flow, x, spec);
        CHECK(grid.mass() == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(grid.alpha.size() == 200);
        CHECK(grid.beta.size() == 200);
        CHECK(grid.density.rows() == 200);
        CHECK(grid.density.minCoeff() >= 0.0);
    }
}

TEST_CASE("zero-conditioner sampling has standard-normal moments") {
    const auto flow = zero_flow(2);
    const Eigen::VectorXd x = Eigen::Vector2d(0.3, 0.3);
    const Eigen::MatrixXd draws = sample(flow, x, 100000, 4242);
    REQUIRE(draws.rows() == 100000);
    REQUIRE(draws.cols() == 2);

    const Eigen::VectorXd mean = draws.colwise().mean();
    CHECK(std::abs(mean(0)) < 0.02);
    CHECK(std::abs(mean(1)) < 0.02);
    const Eigen::MatrixXd centered = draws.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / (draws.rows() - 1.0);
    CHECK(cov(0, 0) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(cov(1, 1) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(std::abs(cov(0, 1)) < 0.02);

    // Same seed reproduces draws bitwise; distinct seeds agree in law.
    CHECK(testutil::exact_equal(sample(flow, x, 1000, 7), sample(flow, x, 1000, 7)));
    const Eigen::MatrixXd a = sample(flow, x, 4000, 1);
    const Eigen::MatrixXd b = sample(flow, x, 4000, 2);
    std::vector<double> a0(a.col(0).data(), a.col(0).data() + a.rows());
    std::vector<double> b0(b.col(0).data(), b.col(0).data() + b.rows());
    CHECK(testutil::ks_two_sample(a0, b0) <
          testutil::ks_two_sample_critical_1pct(a0.size(), b0.size()));
}

TEST_CASE("trained ensemble matches the analytic conditional") {
    const auto& fx = trained_fixture();
    REQUIRE(fx.ens.members.size() == 3);
    for (const auto& h : fx.histories) CHECK(h.best_epoch >= 1);

    // Monte Carlo KL(analytic || flow) with a fixed sample set.
    const Eigen::MatrixXd ref = gaussian_sample(fx.post, 4000, 31337);
    const Eigen::MatrixXd xrep = fx.x_obs.transpose().replicate(ref.rows(), 1);
    const Eigen::VectorXd logq = log_prob_batch(fx.ens, ref, xrep);
    double kl = 0.0;
    for (int i = 0; i < ref.rows(); ++i) {
        kl += gaussian_log_pdf(fx.post, ref.row(i).transpose()) - logq(i);
    }
    kl /= static_cast<double>(ref.rows());
    INFO("MC KL(analytic || flow) = " << kl);
    CHECK(kl < 0.1);
    CHECK(kl > -0.05);  // estimator noise only; KL itself is nonnegative
}

TEST_CASE("trained ensemble grid mass is calibrated on a +-6 sigma window") {
    const auto& fx = trained_fixture();
    const double s0 = std::sqrt(fx.post.cov(0, 0));
    const double s1 = std::sqrt(fx.post.cov(1, 1));
    GridSpec spec;
    spec.alpha_lo = fx.post.mean(0) - 6.0 * s0;
    spec.alpha_hi = fx.post.mean(0) + 6.0 * s0;
    spec.beta_lo = fx.post.mean(1) - 6.0 * s1;
    spec.beta_hi = fx.post.mean(1) + 6.0 * s1;
    spec.res_alpha = 200;
    spec.res_beta = 200;
    const auto grid = grid_density(fx.ens, fx.x_obs, spec);
    const double mass = grid.mass();
    INFO("grid mass = " << mass);
    CHECK(mass >= 0.99);
    CHECK(mass <= 1.001);

    // The density peak sits within half a marginal sigma of the mean.
    Eigen::Index imax = 0, jmax = 0;
    grid.density.maxCoeff(&imax, &jmax);
    CHECK(std::abs(grid.alpha(imax) - fx.post.mean(0)) < 0.5 * s0);
    CHECK(std::abs(grid.beta(jmax) - fx.post.mean(1)) < 0.5 * s1);
}

TEST_CASE("trained ensemble sample moments track the analytic posterior") {
    const auto& fx = trained_fixture();
    const Eigen::MatrixXd draws = sample(fx.ens, fx.x_obs, 20000, 606);
    const Eigen::VectorXd mean = draws.colwise().mean();
    const Eigen::MatrixXd centered = draws.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / (draws.rows() - 1.0);

    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(mean(i) - fx.post.mean(i)) < 0.05);
        for (int j = 0; j < 2; ++j) {
            const double scale = std::sqrt(fx.post.cov(i, i) * fx.post.cov(j, j));
            CHECK(std::abs(cov(i, j) - fx.post.cov(i, j)) < 0.10 * scale);
        }
    }
    CHECK(testutil::exact_equal(sample(fx.ens, fx.x_obs, 500, 9),
                                sample(fx.ens, fx.x_obs, 500, 9)));
}

TEST_CASE("mixing members never hurts the average log score") {
    const auto& fx = trained_fixture();
    const Eigen::MatrixXd ref = gaussian_sample(fx.post, 2000, 515);
    const Eigen::MatrixXd xrep = fx.x_obs.transpose().replicate(ref.rows(), 1);

    const double ens_score = log_prob_batch(fx.ens, ref, xrep).mean();
    double member_avg = 0.0;
    for (const auto& m : fx.ens.members) {
        member_avg += log_prob_batch(m, ref, xrep).mean();
    }
    member_avg /= static_cast<double>(fx.ens.members.size());
    CHECK(ens_score >= member_avg - 1e-12);
}

TEST_CASE("transform Jacobian is consistent with the reported density") {
    SUBCASE("zero-conditioner flow transforms by the identity") {
        const auto flow = zero_flow(2);
        const Eigen::VectorXd x = Eigen::Vector2d(1.0, 2.0);
        const Eigen::Vector2d theta(0.3, -1.2);
        const Eigen::MatrixXd u = flow_transform(flow, theta.transpose(), x.transpose());
        CHECK(u(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(u(0, 1) == doctest::Approx(-1.2).epsilon(1e-12));
        CHECK(fd_jacobian_det(flow, theta, x, 1e-5) == doctest::Approx(1.0).epsilon(1e-8));
    }

    SUBCASE("trained member: finite-difference determinant matches") {
        const auto& fx = trained_fixture();
        const auto& flow = fx.ens.members.front();
        const Eigen::MatrixXd pts = gaussian_sample(fx.post, 20, 888);
        const Eigen::MatrixXd xrow = fx.x_obs.transpose();
        for (int i = 0; i < pts.rows(); ++i) {
            const Eigen::Vector2d theta = pts.row(i).transpose();
            const Eigen::MatrixXd u = flow_transform(flow, theta.transpose(), xrow);
            const double lp = log_prob(flow, theta, fx.x_obs);
            const double det_from_density =
                std::exp(lp + kLog2Pi + 0.5 * u.row(0).squaredNorm());
            const double det_fd = std::abs(fd_jacobian_det(flow, theta, fx.x_obs, 1e-5));
            CHECK(std::abs(det_fd - det_from_density) / det_from_density < 1e-4);
        }
    }
}

TEST_CASE("uninformative observations reduce the flow to the prior marginal") {
    LinearGaussianModel model;
    model.design = Eigen::MatrixXd::Zero(2, 2);
    model.prior_mean = Eigen::Vector2d(0.3, -0.2);
    model.prior_cov.resize(2, 2);
    model.prior_cov << 1.0, 0.5, 0.5, 1.0;
    model.noise_cov = Eigen::MatrixXd::Identity(2, 2);
    model.validate();

    const auto batch = simulate_linear_gaussian(model, 4000, 99);
    FlowTrainOptions opts;
    opts.n_stages = 5;
    opts.hidden = {32};
    opts.n_members = 2;
    opts.train.max_epochs = 30;
    opts.train.patience = 6;
    opts.train.learning_rate = 2e-3;
    opts.train.seed = 5;
    const auto ens = train_flow({0, 1}, batch, opts);

    const GaussianDensity prior{model.prior_mean, model.prior_cov};
    const Eigen::VectorXd x = Eigen::Vector2d(0.4, -1.1);
    const Eigen::MatrixXd ref = gaussian_sample(prior, 4000, 2718);
    const Eigen::MatrixXd xrep = x.transpose().replicate(ref.rows(), 1);
    const Eigen::VectorXd logq = log_prob_batch(ens, ref, xrep);
    double kl = 0.0;
    for (int i = 0; i < ref.rows(); ++i) {
        kl += gaussian_log_pdf(prior, ref.row(i).transpose()) - logq(i);
    }
    kl /= static_cast<double>(ref.rows());
    INFO("MC KL(prior || flow) = " << kl);
    CHECK(kl < 0.1);
}

TEST_CASE("ensemble density is the exact average of member densities") {
    // Two zero-conditioner members that differ only in the output rescaling:
    // member B models N(0, 4 I) after de-standardization.
    auto a = zero_flow(1);
    auto b = zero_flow(1);
    b.theta_std.scale = Eigen::Vector2d(2.0, 2.0);
    FlowEnsemble ens;
    ens.members = {a, b};
    ens.validate();

    const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    for (const auto& pt : {Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 2.0),
                           Eigen::Vector2d(-3.0, 0.5)}) {
        const double qa = std::exp(-kLog2Pi - 0.5 * pt.squaredNorm());
        const double qb =
            std::exp(-kLog2Pi - 0.5 * (pt / 2.0).squaredNorm() - std::log(4.0));
        CHECK(log_prob(ens, pt, x) ==
              doctest::Approx(std::log(0.5 * (qa + qb))).epsilon(1e-12));
        CHECK(log_prob(a, pt, x) == doctest::Approx(std::log(qa)).epsilon(1e-12));
        CHECK(log_prob(b, pt, x) == doctest::Approx(std::log(qb)).epsilon(1e-12));
    }
}

TEST_CASE("ensemble sampling draws members uniformly") {
    auto a = zero_flow(1);
    auto b = zero_flow(1);
    b.theta_std.shift = Eigen::Vector2d(10.0, 10.0);
    FlowEnsemble ens;
    ens.members = {a, b};

    const Eigen::MatrixXd draws = sample(ens, Eigen::VectorXd::Zero(1), 10000, 321);
    const double frac_b =
        (draws.col(0).array() > 5.0).cast<double>().mean();
    CHECK(frac_b == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("flow checkpoints round-trip bitwise") {
    const auto& fx = trained_fixture();
    testutil::TempDir tmp;

    save_ensemble(fx.ens, tmp / "ens");
    const auto back = load_ensemble(tmp / "ens");
    REQUIRE(back.members.size() == fx.ens.members.size());
    CHECK(back.members.front().pair == fx.ens.members.front().pair);

    const Eigen::MatrixXd pts = gaussian_sample(fx.post, 5, 22);
    const Eigen::MatrixXd xrep = fx.x_obs.transpose().replicate(pts.rows(), 1);
    CHECK(testutil::exact_equal(log_prob_batch(back, pts, xrep),
                                log_prob_batch(fx.ens, pts, xrep)));
    CHECK(testutil::exact_equal(sample(back, fx.x_obs, 64, 5),
                                sample(fx.ens, fx.x_obs, 64, 5)));

    save_flow(fx.ens.members.front(), tmp / "member");
    const auto member = load_flow(tmp / "member");
    CHECK(testutil::exact_equal(log_prob_batch(member, pts, xrep),
                                log_prob_batch(fx.ens.members.front(), pts, xrep)));

    CHECK_THROWS_AS(load_ensemble(tmp / "missing"), ConfigError);
    CHECK_THROWS_AS(load_flow(tmp / "missing"), ConfigError);
}

TEST_CASE("flow argument validation") {
    const auto flow = zero_flow(2);
    const Eigen::VectorXd x = Eigen::Vector2d(0.0, 0.0);
    const double nan = std::numeric_limits<double>::quiet_NaN();

    CHECK_THROWS_AS(log_prob(flow, Eigen::Vector2d(nan, 0.0), x), ArgumentError);
    CHECK_THROWS_AS(log_prob(flow, Eigen::Vector2d(0.0, 0.0), Eigen::Vector3d(0, 0, 0)),
                    ArgumentError);
    CHECK_THROWS_AS(
        log_prob_batch(flow, Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(4, 2)),
        ArgumentError);
    CHECK_THROWS_AS(
        flow_transform(flow, Eigen::MatrixXd::Zero(3, 3), Eigen::MatrixXd::Zero(3, 2)),
        ArgumentError);
    CHECK_THROWS_AS(sample(flow, x, -1, 0), ArgumentError);
    CHECK_THROWS_AS(sample(flow, Eigen::Vector3d(0, 0, 0), 10, 0), ArgumentError);

    CHECK_THROWS_AS(FlowModel::create({1, 1}, 2, 5, {8}, 0), ArgumentError);
    CHECK_THROWS_AS(FlowModel::create({0, 1}, 2, 0, {8}, 0), ArgumentError);
    CHECK_THROWS_AS(FlowModel::create({0, 1}, 0, 5, {8}, 0), ArgumentError);

    GridSpec spec;
    spec.alpha_lo = -1.0;
    spec.alpha_hi = 1.0;
    spec.beta_lo = -1.0;
    spec.beta_hi = 1.0;
    spec.res_alpha = 1;
    spec.res_beta = 10;
    CHECK_THROWS_AS(spec.validate(), ArgumentError);
    spec.res_alpha = 10;
    spec.beta_lo = 2.0;
    CHECK_THROWS_AS(grid_density(flow, x, spec), ArgumentError);

    FlowEnsemble empty;
    CHECK_THROWS_AS(empty.validate(), ArgumentError);

    LinearGaussianModel model;
    model.design = Eigen::MatrixXd::Identity(2, 2);
    model.prior_mean = Eigen::VectorXd::Zero(2);
    model.prior_cov = Eigen::MatrixXd::Identity(2, 2);
    model.noise_cov = Eigen::MatrixXd::Identity(2, 2);
    const auto batch = simulate_linear_gaussian(model, 64, 3);
    FlowTrainOptions opts;
    opts.train.max_epochs = 1;
    CHECK_THROWS_AS(train_flow({1, 1}, batch, opts), ArgumentError);
    CHECK_THROWS_AS(train_flow({0, 5}, batch, opts), ArgumentError);
    opts.n_members = 0;
    CHECK_THROWS_AS(train_flow({0, 1}, batch, opts), ArgumentError);
}
