#include "marginfer/marginal_flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/parallel.hpp"
#include "marginfer/rng.hpp"
#include "train_util.hpp"

namespace marginfer {
namespace {

constexpr double kLogScaleBound = 7.0;
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

// Stage s transforms coordinate idx_first(s) first, then the other one.
int idx_first(int stage) { return stage % 2 == 0 ? 0 : 1; }

struct StageCache {
    ForwardCache c1, c2;
    Eigen::ArrayXd a1, a2;          // clamped log-scales
    Eigen::ArrayXd mask1, mask2;    // 1 where the clamp is inactive
    Eigen::ArrayXd u_first, u_second;
};

struct FlowPass {
    std::vector<StageCache> stages;
    Eigen::MatrixXd u;        // base-space coordinates, n x 2
    Eigen::ArrayXd nll;       // per-row negative log q in standardized units
};

void clamp_log_scale(const Eigen::ArrayXd& raw, Eigen::ArrayXd& clamped, Eigen::ArrayXd& mask) {
    clamped = raw.min(kLogScaleBound).max(-kLogScaleBound);
    mask = (raw.abs() < kLogScaleBound).cast<double>();
}

// Forward through all stages on standardized coordinates. `ts` rows are
// (t_first-coordinate-0, t-coordinate-1) pairs; `xs` the standardized data.
FlowPass flow_forward(const FlowModel& flow, const Eigen::MatrixXd& ts, const Eigen::MatrixXd& xs,
                      bool keep_caches) {
    const Eigen::Index n = ts.rows();
    FlowPass pass;
    pass.stages.resize(static_cast<std::size_t>(flow.n_stages));
    pass.u = ts;
    Eigen::ArrayXd jac = Eigen::ArrayXd::Zero(n);

    Eigen::MatrixXd in2(n, xs.cols() + 1);
    in2.rightCols(xs.cols()) = xs;
    for (int s = 0; s < flow.n_stages; ++s) {
        StageCache& sc = pass.stages[static_cast<std::size_t>(s)];
        const int f = idx_first(s);
        const int sec = 1 - f;

        sc.c1 = forward_cached(flow.cond_first[static_cast<std::size_t>(s)], xs);
        const Eigen::ArrayXd mu1 = sc.c1.output().col(0).array();
        clamp_log_scale(sc.c1.output().col(1).array(), sc.a1, sc.mask1);
        const Eigen::ArrayXd t_first = pass.u.col(f).array();
        sc.u_first = (t_first - mu1) * (-sc.a1).exp();

        in2.col(0) = t_first.matrix();
        sc.c2 = forward_cached(flow.cond_second[static_cast<std::size_t>(s)], in2);
        const Eigen::ArrayXd mu2 = sc.c2.output().col(0).array();
        clamp_log_scale(sc.c2.output().col(1).array(), sc.a2, sc.mask2);
        sc.u_second = (pass.u.col(sec).array() - mu2) * (-sc.a2).exp();

        jac += sc.a1 + sc.a2;
        pass.u.col(f) = sc.u_first.matrix();
        pass.u.col(sec) = sc.u_second.matrix();
        if (!keep_caches) {
            sc.c1 = ForwardCache{};
            sc.c2 = ForwardCache{};
        }
    }
    pass.nll = kLog2Pi + 0.5 * (pass.u.col(0).array().square() + pass.u.col(1).array().square()) +
               jac;
    return pass;
}

struct FlowGrads {
    std::vector<ParamGrads> g1, g2;  // per stage
};

// Reverse pass for the batch-mean NLL. Fills per-conditioner parameter
// gradients; the gradient with respect to xs is discarded (data, not
// parameters).
void flow_backward(const FlowModel& flow, FlowPass& pass, FlowGrads& grads) {
    const Eigen::Index n = pass.u.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::MatrixXd g = pass.u * inv_n;  // d loss / d u at the base

    Eigen::MatrixXd d_out(n, 2);
    for (int s = flow.n_stages - 1; s >= 0; --s) {
        StageCache& sc = pass.stages[static_cast<std::size_t>(s)];
        const int f = idx_first(s);
        const int sec = 1 - f;
        const Eigen::ArrayXd g_f = g.col(f).array();
        const Eigen::ArrayXd g_s = g.col(sec).array();
        const Eigen::ArrayXd e1 = (-sc.a1).exp();
        const Eigen::ArrayXd e2 = (-sc.a2).exp();

        d_out.col(0) = (-(g_s * e2)).matrix();
        d_out.col(1) = ((-(g_s * sc.u_second) + inv_n) * sc.mask2).matrix();
        const Eigen::MatrixXd d_in2 = backward(flow.cond_second[static_cast<std::size_t>(s)],
                                               sc.c2, d_out, grads.g2[static_cast<std::size_t>(s)]);

        d_out.col(0) = (-(g_f * e1)).matrix();
        d_out.col(1) = ((-(g_f * sc.u_first) + inv_n) * sc.mask1).matrix();
        backward(flow.cond_first[static_cast<std::size_t>(s)], sc.c1, d_out,
                 grads.g1[static_cast<std::size_t>(s)]);

        g.col(f) = (g_f * e1 + d_in2.col(0).array()).matrix();
        g.col(sec) = (g_s * e2).matrix();
    }
}

void check_finite(const Eigen::MatrixXd& ab, const Eigen::MatrixXd& x) {
    if (!ab.allFinite() || !x.allFinite()) {
        throw ArgumentError("log_prob: non-finite input");
    }
}

// Per-row log q in standardized units plus the de-standardization term.
Eigen::VectorXd log_prob_rows(const FlowModel& flow, const Eigen::MatrixXd& ab,
                              const Eigen::MatrixXd& x) {
    check_finite(ab, x);
    if (ab.cols() != 2) throw ArgumentError("log_prob: alpha_beta must have 2 columns");
    if (x.cols() != flow.dim_x()) {
        throw ArgumentError("log_prob: x has " + std::to_string(x.cols()) +
                            " columns, expected " + std::to_string(flow.dim_x()));
    }
    if (ab.rows() != x.rows()) throw ArgumentError("log_prob: row counts differ");
    const Eigen::MatrixXd ts = flow.theta_std.transform(ab);
    const Eigen::MatrixXd xs = flow.x_std.transform(x);
    FlowPass pass = flow_forward(flow, ts, xs, /*keep_caches=*/false);
    const double log_scale = std::log(flow.theta_std.scale(0)) + std::log(flow.theta_std.scale(1));
    return (-pass.nll - log_scale).matrix();
}

TrainHistory train_member(FlowModel& flow, const Eigen::MatrixXd& ts, const Eigen::MatrixXd& xs,
                          const TrainConfig& cfg) {
    cfg.validate();
    TrainHistory history;
    if (cfg.max_epochs == 0) return history;

    const std::size_t n = static_cast<std::size_t>(ts.rows());
    std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * n));
    n_val = std::clamp<std::size_t>(n_val, 1, n > 0 ? n - 1 : 0);
    const std::size_t n_train = n - n_val;
    if (n_train < 2) {
        throw ArgumentError("train_flow: need at least 2 training rows after the validation split");
    }

    Rng rng = Rng::substream(cfg.seed, 0x666C6F77ULL);
    const std::vector<std::size_t> split = detail::shuffled_indices(n, rng);
    const Eigen::MatrixXd val_t = detail::gather_rows(ts, split, 0, n_val);
    const Eigen::MatrixXd val_x = detail::gather_rows(xs, split, 0, n_val);
    std::vector<std::size_t> train_idx(split.begin() + static_cast<std::ptrdiff_t>(n_val),
                                       split.end());

    const std::size_t n_stages = static_cast<std::size_t>(flow.n_stages);
    std::vector<AdamState> adam1, adam2;
    for (std::size_t s = 0; s < n_stages; ++s) {
        adam1.push_back(AdamState::init(flow.cond_first[s]));
        adam2.push_back(AdamState::init(flow.cond_second[s]));
    }
    std::vector<MlpNetwork> best1 = flow.cond_first, best2 = flow.cond_second;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int epochs_since_best = 0;

    FlowGrads grads;
    grads.g1.resize(n_stages);
    grads.g2.resize(n_stages);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        detail::reshuffle(train_idx, rng);
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (std::size_t begin = 0; begin < n_train;
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(n_train, begin + static_cast<std::size_t>(cfg.batch_size));
            const Eigen::MatrixXd bt = detail::gather_rows(ts, train_idx, begin, end);
            const Eigen::MatrixXd bx = detail::gather_rows(xs, train_idx, begin, end);

            FlowPass pass = flow_forward(flow, bt, bx, /*keep_caches=*/true);
            const double loss = pass.nll.mean();
            if (!std::isfinite(loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(n_batches));
            }
            for (std::size_t s = 0; s < n_stages; ++s) {
                grads.g1[s] = ParamGrads::zeros_like(flow.cond_first[s]);
                grads.g2[s] = ParamGrads::zeros_like(flow.cond_second[s]);
            }
            flow_backward(flow, pass, grads);
            for (std::size_t s = 0; s < n_stages; ++s) {
                adam_step(flow.cond_first[s], grads.g1[s], adam1[s], cfg.learning_rate);
                adam_step(flow.cond_second[s], grads.g2[s], adam2[s], cfg.learning_rate);
            }
            epoch_loss += loss;
            ++n_batches;
        }
        history.train_loss.push_back(epoch_loss / std::max(1, n_batches));

        const double val_loss =
            flow_forward(flow, val_t, val_x, /*keep_caches=*/false).nll.mean();
        if (!std::isfinite(val_loss)) {
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        history.val_loss.push_back(val_loss);

        if (val_loss < best_val) {
            best_val = val_loss;
            best1 = flow.cond_first;
            best2 = flow.cond_second;
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= cfg.patience) break;
        }
    }

    flow.cond_first = std::move(best1);
    flow.cond_second = std::move(best2);
    history.best_epoch = best_epoch;
    history.best_val_loss = best_val;
    return history;
}

}  // namespace

FlowModel FlowModel::create(std::pair<int, int> pair, int dim_x, int n_stages,
                            const std::vector<int>& hidden, std::uint64_t seed) {
    if (n_stages < 1) throw ArgumentError("FlowModel needs at least one stage");
    if (dim_x < 1) throw ArgumentError("FlowModel needs dim_x >= 1");
    if (pair.first == pair.second) {
        throw ArgumentError("flow pair indices must differ, got (" +
                            std::to_string(pair.first) + "," + std::to_string(pair.second) + ")");
    }
    FlowModel flow;
    flow.n_stages = n_stages;
    flow.pair = pair;
    flow.seed = seed;
    flow.theta_std = Standardizer::identity(2);
    flow.x_std = Standardizer::identity(dim_x);
    for (int s = 0; s < n_stages; ++s) {
        flow.cond_first.push_back(MlpNetwork::dense(
            dim_x, hidden, 2, Activation::kTanh,
            Rng::substream(seed, static_cast<std::uint64_t>(2 * s)).next_u64()));
        flow.cond_second.push_back(MlpNetwork::dense(
            dim_x + 1, hidden, 2, Activation::kTanh,
            Rng::substream(seed, static_cast<std::uint64_t>(2 * s + 1)).next_u64()));
    }
    return flow;
}

void FlowEnsemble::validate() const {
    if (members.empty()) throw ArgumentError("flow ensemble needs at least one member");
    for (const auto& m : members) {
        if (m.pair != members.front().pair) {
            throw ArgumentError("flow ensemble members disagree on the parameter pair");
        }
    }
}

double log_prob(const FlowModel& flow, const Eigen::Vector2d& alpha_beta,
                const Eigen::VectorXd& x) {
    return log_prob_rows(flow, alpha_beta.transpose(), x.transpose())(0);
}

Eigen::VectorXd log_prob_batch(const FlowModel& flow, const Eigen::MatrixXd& alpha_beta,
                               const Eigen::MatrixXd& x) {
    return log_prob_rows(flow, alpha_beta, x);
}

Eigen::MatrixXd flow_transform(const FlowModel& flow, const Eigen::MatrixXd& alpha_beta,
                               const Eigen::MatrixXd& x) {
    check_finite(alpha_beta, x);
    if (alpha_beta.cols() != 2) {
        throw ArgumentError("flow_transform: alpha_beta must have 2 columns");
    }
    if (x.cols() != flow.dim_x() || alpha_beta.rows() != x.rows()) {
        throw ArgumentError("flow_transform: input shapes do not match the flow");
    }
    const Eigen::MatrixXd ts = flow.theta_std.transform(alpha_beta);
    const Eigen::MatrixXd xs = flow.x_std.transform(x);
    return flow_forward(flow, ts, xs, /*keep_caches=*/false).u;
}

Eigen::VectorXd log_prob_batch(const FlowEnsemble& ensemble, const Eigen::MatrixXd& alpha_beta,
                               const Eigen::MatrixXd& x) {
    ensemble.validate();
    const std::size_t n_members = ensemble.members.size();
    Eigen::MatrixXd member_lp(alpha_beta.rows(), static_cast<Eigen::Index>(n_members));
    for (std::size_t m = 0; m < n_members; ++m) {
        member_lp.col(static_cast<Eigen::Index>(m)) =
            log_prob_rows(ensemble.members[m], alpha_beta, x);
    }
    // Equal-weight mixture: log-mean-exp across members, row-wise.
    const Eigen::ArrayXd row_max = member_lp.rowwise().maxCoeff().array();
    const Eigen::ArrayXd mean_exp =
        (member_lp.array().colwise() - row_max).exp().rowwise().mean();
    return (row_max + mean_exp.log()).matrix();
}

double log_prob(const FlowEnsemble& ensemble, const Eigen::Vector2d& alpha_beta,
                const Eigen::VectorXd& x) {
    return log_prob_batch(ensemble, alpha_beta.transpose(), x.transpose())(0);
}

FlowEnsemble train_flow(std::pair<int, int> pair, const SimulationBatch& batch,
                        const FlowTrainOptions& opts, std::vector<TrainHistory>* histories) {
    if (pair.first == pair.second) {
        throw ArgumentError("flow pair indices must differ, got (" +
                            std::to_string(pair.first) + "," + std::to_string(pair.second) + ")");
    }
    if (pair.first < 0 || pair.second < 0 || pair.first >= batch.dim_theta() ||
        pair.second >= batch.dim_theta()) {
        throw ArgumentError("flow pair index out of range for dim_theta = " +
                            std::to_string(batch.dim_theta()));
    }
    if (opts.n_members < 1) throw ArgumentError("flow ensemble needs n_members >= 1");
    if (batch.n_sims < 4) throw ArgumentError("flow training needs at least 4 simulations");

    Eigen::MatrixXd ab(batch.theta.rows(), 2);
    ab.col(0) = batch.theta.col(pair.first);
    ab.col(1) = batch.theta.col(pair.second);
    const Standardizer theta_std = Standardizer::fit(ab);
    const Standardizer x_std = Standardizer::fit(batch.x);
    const Eigen::MatrixXd ts = theta_std.transform(ab);
    const Eigen::MatrixXd xs = x_std.transform(batch.x);

    FlowEnsemble ensemble;
    ensemble.members.assign(static_cast<std::size_t>(opts.n_members), FlowModel{});
    std::vector<TrainHistory> hists(static_cast<std::size_t>(opts.n_members));
    parallel_for(static_cast<std::size_t>(opts.n_members), opts.threads, [&](std::size_t m) {
        const std::uint64_t member_seed = Rng::substream(opts.train.seed, 0xF10 + m).next_u64();
        FlowModel flow = FlowModel::create(pair, batch.dim_x(), opts.n_stages, opts.hidden,
                                           member_seed);
        flow.theta_std = theta_std;
        flow.x_std = x_std;
        TrainConfig cfg = opts.train;
        cfg.seed = member_seed;
        hists[m] = train_member(flow, ts, xs, cfg);
        ensemble.members[m] = std::move(flow);
    });
    if (histories) *histories = std::move(hists);
    return ensemble;
}

Eigen::MatrixXd sample(const FlowModel& flow, const Eigen::VectorXd& x, int n,
                       std::uint64_t seed) {
    if (n < 0) throw ArgumentError("sample: n must be nonnegative");
    if (x.size() != flow.dim_x()) {
        throw ArgumentError("sample: x has dimension " + std::to_string(x.size()) +
                            ", expected " + std::to_string(flow.dim_x()));
    }
    const Eigen::VectorXd xs = flow.x_std.transform_vec(x);
    Eigen::MatrixXd u(n, 2);
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(i));
        u(i, 0) = rng.normal();
        u(i, 1) = rng.normal();
    }

    Eigen::MatrixXd in2(n, xs.size() + 1);
    in2.rightCols(xs.size()) = xs.transpose().replicate(n, 1);
    for (int s = flow.n_stages - 1; s >= 0; --s) {
        const int f = idx_first(s);
        const int sec = 1 - f;
        const Eigen::Vector2d out1 = forward(flow.cond_first[static_cast<std::size_t>(s)], xs);
        const double a1 = std::clamp(out1(1), -kLogScaleBound, kLogScaleBound);
        const Eigen::ArrayXd t_first = u.col(f).array() * std::exp(a1) + out1(0);

        in2.col(0) = t_first.matrix();
        const Eigen::MatrixXd out2 =
            forward_batch(flow.cond_second[static_cast<std::size_t>(s)], in2);
        const Eigen::ArrayXd a2 =
            out2.col(1).array().min(kLogScaleBound).max(-kLogScaleBound);
        u.col(sec) = (u.col(sec).array() * a2.exp() + out2.col(0).array()).matrix();
        u.col(f) = t_first.matrix();
    }
    return (u.array().rowwise() * flow.theta_std.scale.transpose().array()).rowwise() +
           flow.theta_std.shift.transpose().array();
}

Eigen::MatrixXd sample(const FlowEnsemble& ensemble, const Eigen::VectorXd& x, int n,
                       std::uint64_t seed) {
    ensemble.validate();
    const std::size_t n_members = ensemble.members.size();
    if (n_members == 1) return sample(ensemble.members[0], x, n, seed);

    Rng pick = Rng::substream(seed, 0x656E73ULL);
    std::vector<std::vector<int>> rows_of(n_members);
    for (int i = 0; i < n; ++i) rows_of[pick.uniform_index(n_members)].push_back(i);

    Eigen::MatrixXd out(n, 2);
    for (std::size_t m = 0; m < n_members; ++m) {
        if (rows_of[m].empty()) continue;
        const std::uint64_t member_seed = Rng::substream(seed, 0xA000 + m).next_u64();
        const Eigen::MatrixXd draws =
            sample(ensemble.members[m], x, static_cast<int>(rows_of[m].size()), member_seed);
        for (std::size_t k = 0; k < rows_of[m].size(); ++k) {
            out.row(rows_of[m][k]) = draws.row(static_cast<Eigen::Index>(k));
        }
    }
    return out;
}

void GridSpec::validate() const {
    if (res_alpha < 2 || res_beta < 2) {
        throw ArgumentError("grid resolution must be at least 2 per axis");
    }
    if (!(alpha_lo < alpha_hi) || !(beta_lo < beta_hi)) {
        throw ArgumentError("grid bounds are inverted or empty");
    }
}

double GridDensity::mass() const {
    const double da = alpha(1) - alpha(0);
    const double db = beta(1) - beta(0);
    return density.sum() * da * db;
}

namespace {

template <typename LogProbFn>
GridDensity grid_density_impl(int dim_x_expected, const Eigen::VectorXd& x, const GridSpec& spec,
                              const LogProbFn& lp) {
    spec.validate();
    if (x.size() != dim_x_expected) {
        throw ArgumentError("grid_density: x has dimension " + std::to_string(x.size()) +
                            ", expected " + std::to_string(dim_x_expected));
    }
    GridDensity grid;
    grid.alpha = Eigen::VectorXd::LinSpaced(spec.res_alpha, spec.alpha_lo, spec.alpha_hi);
    grid.beta = Eigen::VectorXd::LinSpaced(spec.res_beta, spec.beta_lo, spec.beta_hi);

    const Eigen::Index n = static_cast<Eigen::Index>(spec.res_alpha) * spec.res_beta;
    Eigen::MatrixXd ab(n, 2);
    for (int ia = 0; ia < spec.res_alpha; ++ia) {
        for (int ib = 0; ib < spec.res_beta; ++ib) {
            const Eigen::Index k = static_cast<Eigen::Index>(ia) * spec.res_beta + ib;
            ab(k, 0) = grid.alpha(ia);
            ab(k, 1) = grid.beta(ib);
        }
    }
    const Eigen::MatrixXd xrep = x.transpose().replicate(n, 1);
    const Eigen::VectorXd logd = lp(ab, xrep);
    grid.density.resize(spec.res_alpha, spec.res_beta);
    for (int ia = 0; ia < spec.res_alpha; ++ia) {
        for (int ib = 0; ib < spec.res_beta; ++ib) {
            grid.density(ia, ib) =
                std::exp(logd(static_cast<Eigen::Index>(ia) * spec.res_beta + ib));
        }
    }
    return grid;
}

}  // namespace

GridDensity grid_density(const FlowModel& flow, const Eigen::VectorXd& x, const GridSpec& spec) {
    return grid_density_impl(flow.dim_x(), x, spec,
                             [&](const Eigen::MatrixXd& ab, const Eigen::MatrixXd& xr) {
                                 return log_prob_batch(flow, ab, xr);
                             });
}

GridDensity grid_density(const FlowEnsemble& ensemble, const Eigen::VectorXd& x,
                         const GridSpec& spec) {
    ensemble.validate();
    return grid_density_impl(ensemble.members.front().dim_x(), x, spec,
                             [&](const Eigen::MatrixXd& ab, const Eigen::MatrixXd& xr) {
                                 return log_prob_batch(ensemble, ab, xr);
                             });
}

namespace {

std::vector<double> json_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto vals = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

void save_flow(const FlowModel& flow, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["pair"] = {flow.pair.first, flow.pair.second};
    manifest["n_stages"] = flow.n_stages;
    manifest["dim_x"] = flow.dim_x();
    manifest["seed"] = flow.seed;
    manifest["theta_shift"] = json_vec(flow.theta_std.shift);
    manifest["theta_scale"] = json_vec(flow.theta_std.scale);
    manifest["x_shift"] = json_vec(flow.x_std.shift);
    manifest["x_scale"] = json_vec(flow.x_std.scale);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ConfigError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    out.close();
    for (int s = 0; s < flow.n_stages; ++s) {
        save_network(flow.cond_first[static_cast<std::size_t>(s)],
                     dir / ("stage_" + std::to_string(s) + "_first.net"));
        save_network(flow.cond_second[static_cast<std::size_t>(s)],
                     dir / ("stage_" + std::to_string(s) + "_second.net"));
    }
}

FlowModel load_flow(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ConfigError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed flow manifest: " + std::string(e.what()), 0);
    }
    FlowModel flow;
    try {
        flow.pair = {manifest.at("pair").at(0).get<int>(), manifest.at("pair").at(1).get<int>()};
        flow.n_stages = manifest.at("n_stages").get<int>();
        flow.seed = manifest.at("seed").get<std::uint64_t>();
        flow.theta_std.shift = vec_from_json(manifest.at("theta_shift"));
        flow.theta_std.scale = vec_from_json(manifest.at("theta_scale"));
        flow.x_std.shift = vec_from_json(manifest.at("x_shift"));
        flow.x_std.scale = vec_from_json(manifest.at("x_scale"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("flow manifest missing field: " + std::string(e.what()), 0);
    }
    for (int s = 0; s < flow.n_stages; ++s) {
        flow.cond_first.push_back(
            load_network(dir / ("stage_" + std::to_string(s) + "_first.net")));
        flow.cond_second.push_back(
            load_network(dir / ("stage_" + std::to_string(s) + "_second.net")));
    }
    return flow;
}

void save_ensemble(const FlowEnsemble& ensemble, const std::filesystem::path& dir) {
    ensemble.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["n_members"] = ensemble.members.size();
    manifest["pair"] = {ensemble.members.front().pair.first,
                        ensemble.members.front().pair.second};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ConfigError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    out.close();
    for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
        save_flow(ensemble.members[m], dir / ("member_" + std::to_string(m)));
    }
}

FlowEnsemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ConfigError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed ensemble manifest: " + std::string(e.what()), 0);
    }
    FlowEnsemble ensemble;
    const auto n_members = manifest.at("n_members").get<std::size_t>();
    for (std::size_t m = 0; m < n_members; ++m) {
        ensemble.members.push_back(load_flow(dir / ("member_" + std::to_string(m))));
    }
    ensemble.validate();
    return ensemble;
}

}  // namespace marginfer
