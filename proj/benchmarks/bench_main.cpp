// Microbenchmarks for the hot paths: network inference, flow evaluation and
// sampling, the ensemble sampler step and the simulators.
#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "marginfer/analytic_oracle.hpp"
#include "marginfer/marginal_flow.hpp"
#include "marginfer/mcmc_ref.hpp"
#include "marginfer/moment_net.hpp"
#include "marginfer/nn_core.hpp"
#include "marginfer/sim_models.hpp"

using namespace marginfer;

namespace {

/// Shared fixtures built once; training budgets are tiny because only the
/// inference paths are timed.
struct Fixture {
    LinearGaussianModel model = make_default_linear_gaussian(16);
    SimulationBatch batch = simulate_linear_gaussian(model, 2000, 7);
    MomentNetworkHierarchy h;
    FlowEnsemble flow;
    Eigen::VectorXd x_obs;
    GaussianDensity post;

    Fixture() {
        TrainConfig tc;
        tc.max_epochs = 3;
        tc.patience = 3;
        tc.seed = 7;
        train_mean(h, batch, {128, 128}, tc);
        train_var(h, batch, {128, 128}, tc);
        train_cov(h, batch, {{0, 1}}, {64}, tc);

        FlowTrainOptions fo;
        fo.n_members = 1;
        fo.train = tc;
        flow = train_flow({0, 1}, batch, fo);

        x_obs = batch.x.row(0).transpose();
        post = conjugate_posterior(model, x_obs);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

void BM_mlp_forward(benchmark::State& state) {
    const auto& f = fixture();
    const Eigen::VectorXd x = f.x_obs;
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(f.h.mean_net, x));
    }
}
BENCHMARK(BM_mlp_forward);

void BM_moment_estimate(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) {
        benchmark::DoNotOptimize(estimate(f.h, f.x_obs));
    }
}
BENCHMARK(BM_moment_estimate);

void BM_flow_log_prob_batch(benchmark::State& state) {
    const auto& f = fixture();
    const int n = static_cast<int>(state.range(0));
    const Eigen::MatrixXd pts = gaussian_sample(marginalize(f.post, {0, 1}), n, 11);
    const Eigen::MatrixXd xs = f.x_obs.transpose().replicate(n, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(log_prob_batch(f.flow, pts, xs));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_flow_log_prob_batch)->Arg(100)->Arg(1000);

void BM_flow_sample(benchmark::State& state) {
    const auto& f = fixture();
    const int n = static_cast<int>(state.range(0));
    std::uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(sample(f.flow, f.x_obs, n, ++seed));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_flow_sample)->Arg(1000);

void BM_mcmc_steps(benchmark::State& state) {
    const auto& f = fixture();
    const Eigen::MatrixXd init = gaussian_sample(f.post, 64, 3);
    McmcConfig mc;
    mc.seed = 3;
    const auto target = [&](const Eigen::VectorXd& theta) {
        return gaussian_log_pdf(f.post, theta);
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(run_chain(target, init, 100, mc));
    }
    state.SetItemsProcessed(state.iterations() * 100 * 64);
}
BENCHMARK(BM_mcmc_steps);

void BM_simulate_linear(benchmark::State& state) {
    const auto& f = fixture();
    std::uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate_linear_gaussian(f.model, 1000, ++seed));
    }
    state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_simulate_linear);

void BM_chirp_noise_fft(benchmark::State& state) {
    const ChirpModel chirp = make_default_chirp();
    Rng rng(5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(colored_noise(chirp, rng));
    }
}
BENCHMARK(BM_chirp_noise_fft);

}  // namespace

BENCHMARK_MAIN();
