#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "marginfer/analytic_oracle.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/moment_net.hpp"
#include "marginfer/rng.hpp"
#include "marginfer/sim_models.hpp"
#include "test_util.hpp"

using namespace marginfer;

namespace {

LinearGaussianModel make_model(Eigen::MatrixXd design, Eigen::MatrixXd prior_cov,
                               Eigen::MatrixXd noise_cov, Eigen::VectorXd prior_mean) {
    LinearGaussianModel m;
    m.design = std::move(design);
    m.prior_cov = std::move(prior_cov);
    m.noise_cov = std::move(noise_cov);
    m.prior_mean = std::move(prior_mean);
    m.validate();
    return m;
}

TrainConfig quick_config(std::uint64_t seed, int max_epochs, int patience, double lr = 1e-3) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.max_epochs = max_epochs;
    cfg.patience = patience;
    cfg.learning_rate = lr;
    return cfg;
}

}  // namespace

TEST_CASE("1d conjugate model: F approaches x/2 and G approaches 1/2") {
    // design 1, prior N(0,1), noise N(0,1): posterior is N(x/2, 1/2).
    auto model = make_model(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1),
                            Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1));
    const auto batch = simulate_linear_gaussian(model, 20000, 101);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {32}, quick_config(5, 300, 40, 1e-3));
    train_var(h, batch, {32}, quick_config(6, 150, 20, 1e-3));
    CHECK(h.has_mean);
    CHECK(h.has_var);
    CHECK_FALSE(h.trained_on.empty());

    // Probe within ~1.4 prior-predictive sigma (x ~ N(0,2)); the tails are
    // data-starved and say nothing about the regression target.
    double max_mean_err = 0.0;
    double max_var_rel = 0.0;
    for (int i = 0; i <= 24; ++i) {
        Eigen::VectorXd x(1);
        x(0) = -2.0 + 4.0 * i / 24.0;
        const auto est = estimate(h, x);
        max_mean_err = std::max(max_mean_err, std::abs(est.means(0) - 0.5 * x(0)));
        max_var_rel = std::max(max_var_rel, std::abs(est.variances(0) - 0.5) / 0.5);
    }
    CHECK(max_mean_err < 0.05);
    CHECK(max_var_rel < 0.2);

    // Repeated estimation is bitwise stable.
    Eigen::VectorXd probe(1);
    probe(0) = 1.25;
    const auto e1 = estimate(h, probe);
    const auto e2 = estimate(h, probe);
    CHECK(testutil::exact_equal(e1.means, e2.means));
    CHECK(testutil::exact_equal(e1.variances, e2.variances));
}

TEST_CASE("retraining on the same batch reproduces the estimates bitwise") {
    auto model = make_model(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1),
                            Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1));
    const auto batch = simulate_linear_gaussian(model, 500, 11);
    Eigen::VectorXd probe(1);
    probe(0) = -0.5;

    MomentEstimates ests[2];
    for (int run = 0; run < 2; ++run) {
        MomentNetworkHierarchy h;
        train_mean(h, batch, {16}, quick_config(3, 25, 25));
        train_var(h, batch, {16}, quick_config(4, 25, 25));
        ests[run] = estimate(h, probe);
    }
    CHECK(testutil::exact_equal(ests[0].means, ests[1].means));
    CHECK(testutil::exact_equal(ests[0].variances, ests[1].variances));
}

TEST_CASE("uninformative design recovers the prior moments") {
    // design 0: x carries no information, so the posterior is the prior.
    auto model = make_model(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Ones(1, 1),
                            Eigen::MatrixXd::Ones(1, 1),
                            Eigen::VectorXd::Constant(1, 0.7));
    const auto batch = simulate_linear_gaussian(model, 6000, 42);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {16}, quick_config(1, 60, 10));
    train_var(h, batch, {16}, quick_config(2, 60, 10));

    Rng rng(900);
    double mean_err = 0.0, var_err = 0.0;
    const int n_probe = 20;
    for (int i = 0; i < n_probe; ++i) {
        Eigen::VectorXd x(1);
        x(0) = rng.normal();
        const auto est = estimate(h, x);
        mean_err += std::abs(est.means(0) - 0.7);
        var_err += std::abs(est.variances(0) - 1.0);
    }
    CHECK(mean_err / n_probe < 0.05);
    CHECK(var_err / n_probe < 0.15);
}

TEST_CASE("independent posterior yields a near-zero covariance head") {
    // Identity design, identity prior and noise: components decouple and
    // the posterior covariance between theta_0 and theta_1 is exactly 0.
    auto model = make_model(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                            Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
    const auto batch = simulate_linear_gaussian(model, 6000, 7);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {32}, quick_config(11, 80, 12));
    train_var(h, batch, {32}, quick_config(12, 80, 12));
    train_cov(h, batch, {{0, 1}}, {16}, quick_config(13, 40, 8));

    const auto held = simulate_linear_gaussian(model, 50, 7777);
    double mean_abs_cov = 0.0;
    for (int i = 0; i < held.n_sims; ++i) {
        const auto est = estimate(h, held.x.row(i).transpose());
        mean_abs_cov += std::abs(est.pair_covs.at({0, 1}));
    }
    mean_abs_cov /= static_cast<double>(held.n_sims);
    // True posterior sigma_a = sigma_b = sqrt(0.5).
    CHECK(mean_abs_cov < 0.05 * 0.5);

    SUBCASE("a doctored covariance head is clamped to the Cauchy-Schwarz bound") {
        h.cov_nets[0].biases.back()(0) = 1e6;
        const auto est = estimate(h, held.x.row(0).transpose());
        const double bound = 0.999 * std::sqrt(est.variances(0) * est.variances(1));
        CHECK(est.pair_covs.at({0, 1}) == bound);

        h.cov_nets[0].biases.back()(0) = -1e6;
        const auto neg = estimate(h, held.x.row(0).transpose());
        CHECK(neg.pair_covs.at({0, 1}) == -bound);
    }
}

TEST_CASE("correlated prior: covariance head recovers the constant 1/8") {
    // P = [[2,1],[1,2]], identity design and noise: posterior covariance is
    // [[5/8,1/8],[1/8,5/8]] independent of the observation.
    Eigen::MatrixXd P(2, 2);
    P << 2.0, 1.0, 1.0, 2.0;
    auto model = make_model(Eigen::MatrixXd::Identity(2, 2), P,
                            Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
    const auto batch = simulate_linear_gaussian(model, 6000, 21);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {32}, quick_config(31, 80, 12));
    train_var(h, batch, {32}, quick_config(32, 80, 12));
    train_cov(h, batch, {{0, 1}}, {24}, quick_config(33, 60, 10));

    const auto held = simulate_linear_gaussian(model, 50, 9999);
    double mean_cov = 0.0, mean_var0 = 0.0;
    for (int i = 0; i < held.n_sims; ++i) {
        const auto est = estimate(h, held.x.row(i).transpose());
        mean_cov += est.pair_covs.at({0, 1});
        mean_var0 += est.variances(0);
    }
    mean_cov /= static_cast<double>(held.n_sims);
    mean_var0 /= static_cast<double>(held.n_sims);
    CHECK(mean_cov == doctest::Approx(0.125).epsilon(0.20));
    CHECK(mean_var0 == doctest::Approx(0.625).epsilon(0.15));

    SUBCASE("hierarchy checkpoints round-trip to identical estimates") {
        testutil::TempDir tmp;
        save_hierarchy(h, tmp / "ckpt");
        const auto back = load_hierarchy(tmp / "ckpt");
        CHECK(back.pairs == h.pairs);
        CHECK(back.trained_on == h.trained_on);
        for (int i = 0; i < 5; ++i) {
            const auto a = estimate(h, held.x.row(i).transpose());
            const auto b = estimate(back, held.x.row(i).transpose());
            CHECK(testutil::exact_equal(a.means, b.means));
            CHECK(testutil::exact_equal(a.variances, b.variances));
            CHECK(a.pair_covs.at({0, 1}) == b.pair_covs.at({0, 1}));
        }
    }
}

TEST_CASE("nearly duplicated parameters drive the pair correlation toward one") {
    // Prior correlation 1 - 1e-6 makes theta_1 a copy of theta_0; the
    // posterior correlation stays essentially 1 for any observation.
    Eigen::MatrixXd P(2, 2);
    P << 1.0, 1.0 - 1e-6, 1.0 - 1e-6, 1.0;
    Eigen::MatrixXd A(1, 2);
    A << 1.0, 1.0;
    auto model = make_model(A, P, Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(2));
    const auto batch = simulate_linear_gaussian(model, 6000, 77);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {32}, quick_config(41, 80, 12));
    train_var(h, batch, {32}, quick_config(42, 80, 12));
    train_cov(h, batch, {{0, 1}}, {24}, quick_config(43, 60, 10));

    const auto held = simulate_linear_gaussian(model, 30, 555);
    double mean_rho = 0.0;
    for (int i = 0; i < held.n_sims; ++i) {
        const auto est = estimate(h, held.x.row(i).transpose());
        const double cov = est.pair_covs.at({0, 1});
        const double bound = std::sqrt(est.variances(0) * est.variances(1));
        CHECK(std::abs(cov) <= 0.999 * bound * (1.0 + 1e-12));
        mean_rho += cov / bound;
        // Both marginal variances should sit near the analytic 0.25.
        CHECK(est.variances(0) == doctest::Approx(0.25).epsilon(0.3));
        CHECK(est.variances(1) == doctest::Approx(0.25).epsilon(0.3));
    }
    CHECK(mean_rho / static_cast<double>(held.n_sims) > 0.9);
}

TEST_CASE("one-sigma intervals cover the truth at roughly the nominal rate") {
    const auto model = make_default_linear_gaussian(2);
    const auto batch = simulate_linear_gaussian(model, 6000, 301);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {48}, quick_config(51, 100, 12));
    train_var(h, batch, {48}, quick_config(52, 100, 12));

    const auto held = simulate_linear_gaussian(model, 600, 40404);
    long covered = 0, total = 0;
    for (int i = 0; i < held.n_sims; ++i) {
        const auto est = estimate(h, held.x.row(i).transpose());
        for (int j = 0; j < model.dim_theta(); ++j) {
            const double sigma = std::sqrt(est.variances(j));
            if (std::abs(held.theta(i, j) - est.means(j)) <= sigma) ++covered;
            ++total;
        }
    }
    const double coverage = static_cast<double>(covered) / static_cast<double>(total);
    CHECK(coverage > 0.60);
    CHECK(coverage < 0.76);
}

TEST_CASE("an independent nuisance block leaves the pair moments unchanged") {
    // Extending the model with a decoupled third parameter must not disturb
    // inference on the (0,1) pair; compare against the 2d analytic truth.
    Eigen::MatrixXd P2(2, 2);
    P2 << 1.0, 0.6, 0.6, 1.0;
    Eigen::MatrixXd N2 = Eigen::Vector2d(1.0, 1.5).asDiagonal();
    auto base = make_model(Eigen::MatrixXd::Identity(2, 2), P2, N2, Eigen::VectorXd::Zero(2));

    Eigen::MatrixXd P3 = Eigen::MatrixXd::Identity(3, 3);
    P3.topLeftCorner(2, 2) = P2;
    Eigen::MatrixXd N3 = Eigen::Vector3d(1.0, 1.5, 0.8).asDiagonal();
    auto extended =
        make_model(Eigen::MatrixXd::Identity(3, 3), P3, N3, Eigen::VectorXd::Zero(3));

    const auto batch = simulate_linear_gaussian(extended, 6000, 61);
    MomentNetworkHierarchy h;
    train_mean(h, batch, {48}, quick_config(71, 100, 12));
    train_var(h, batch, {48}, quick_config(72, 100, 12));
    train_cov(h, batch, {{0, 1}}, {24}, quick_config(73, 60, 10));

    const auto held = simulate_linear_gaussian(extended, 50, 808);
    double mean_err = 0.0, var_rel = 0.0, cov_err = 0.0;
    for (int i = 0; i < held.n_sims; ++i) {
        const auto est = estimate(h, held.x.row(i).transpose());
        const auto truth = conjugate_posterior(base, held.x.row(i).head(2).transpose());
        for (int j = 0; j < 2; ++j) {
            mean_err += std::abs(est.means(j) - truth.mean(j)) / 2.0;
            var_rel += std::abs(est.variances(j) - truth.cov(j, j)) / truth.cov(j, j) / 2.0;
        }
        cov_err += std::abs(est.pair_covs.at({0, 1}) - truth.cov(0, 1));
    }
    const double n = static_cast<double>(held.n_sims);
    CHECK(mean_err / n < 0.10);
    CHECK(var_rel / n < 0.20);
    CHECK(cov_err / n < 0.06);
}

TEST_CASE("mean accuracy does not degrade as the training set doubles") {
    const auto model = make_default_linear_gaussian(16);
    const auto held = simulate_linear_gaussian(model, 200, 123456);

    // Analytic posterior means for the held-out observations.
    Eigen::MatrixXd truth(held.n_sims, model.dim_theta());
    for (int i = 0; i < held.n_sims; ++i) {
        truth.row(i) = conjugate_posterior(model, held.x.row(i).transpose()).mean.transpose();
    }

    const std::vector<std::int64_t> sizes = {5000, 10000, 20000};
    std::vector<double> mean_rmse;
    for (std::size_t si = 0; si < sizes.size(); ++si) {
        double acc = 0.0;
        for (std::uint64_t rep = 0; rep < 5; ++rep) {
            const auto batch = simulate_linear_gaussian(model, sizes[si], 1000 + rep);
            MomentNetworkHierarchy h;
            train_mean(h, batch, {32}, quick_config(500 + rep, 30, 30));
            double sq = 0.0;
            for (int i = 0; i < held.n_sims; ++i) {
                const Eigen::VectorXd pred = h.theta_std.invert_vec(
                    forward(h.mean_net, h.x_std.transform_vec(held.x.row(i).transpose())));
                sq += (pred - truth.row(i).transpose()).squaredNorm();
            }
            acc += std::sqrt(sq / static_cast<double>(held.n_sims * model.dim_theta()));
        }
        mean_rmse.push_back(acc / 5.0);
    }
    INFO("rmse by size: " << mean_rmse[0] << " " << mean_rmse[1] << " " << mean_rmse[2]);
    CHECK(mean_rmse[1] <= mean_rmse[0] + 0.002);
    CHECK(mean_rmse[2] <= mean_rmse[1] + 0.002);
}

TEST_CASE("zero observation noise drives the variance head to the floor region") {
    auto model = make_model(Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Ones(1, 1),
                            Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1));
    const auto batch = simulate_linear_gaussian(model, 4000, 17);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {32}, quick_config(81, 150, 25, 3e-3));
    train_var(h, batch, {32}, quick_config(82, 150, 25, 3e-3));

    for (double xv : {-1.0, 0.0, 1.5}) {
        Eigen::VectorXd x(1);
        x(0) = xv;
        const auto est = estimate(h, x);
        CHECK(std::abs(est.means(0) - xv) < 0.05);
        // With zero noise the residual variance is F's own squared fitting
        // error: tiny against the prior variance of 1, but not exactly zero.
        CHECK(est.variances(0) < 5e-3);
        CHECK(est.variances(0) >= h.eps_var);
    }
}

TEST_CASE("moment hierarchy argument validation") {
    auto model = make_model(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                            Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
    const auto batch = simulate_linear_gaussian(model, 64, 1);

    MomentNetworkHierarchy fresh;
    CHECK_THROWS_AS(train_var(fresh, batch, {8}, quick_config(1, 5, 5)), ArgumentError);
    CHECK_THROWS_AS(train_cov(fresh, batch, {{0, 1}}, {8}, quick_config(1, 5, 5)),
                    ArgumentError);

    MomentNetworkHierarchy h;
    train_mean(h, batch, {8}, quick_config(1, 5, 5));
    CHECK_THROWS_AS(train_cov(h, batch, {{0, 2}}, {8}, quick_config(1, 5, 5)), ArgumentError);
    CHECK_THROWS_AS(train_cov(h, batch, {{1, 1}}, {8}, quick_config(1, 5, 5)), ArgumentError);

    // estimate needs both mean and variance heads, and a matching dimension.
    CHECK_THROWS_AS(estimate(h, Eigen::Vector2d(0.0, 0.0)), ArgumentError);
    train_var(h, batch, {8}, quick_config(2, 5, 5));
    CHECK_NOTHROW(estimate(h, Eigen::Vector2d(0.0, 0.0)));
    CHECK_THROWS_AS(estimate(h, Eigen::Vector3d(0.0, 0.0, 0.0)), ArgumentError);

    SimulationBatch tiny;
    tiny.n_sims = 1;
    tiny.theta = Eigen::MatrixXd::Zero(1, 2);
    tiny.x = Eigen::MatrixXd::Zero(1, 2);
    MomentNetworkHierarchy h2;
    CHECK_THROWS_AS(train_mean(h2, tiny, {8}, quick_config(1, 5, 5)), ArgumentError);

    CHECK_THROWS_AS(load_hierarchy("/nonexistent/marginfer/ckpt"), ConfigError);
}
