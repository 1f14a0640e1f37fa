#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "marginfer/marginal_flow.hpp"
#include "marginfer/nn_core.hpp"
#include "marginfer/sim_models.hpp"

namespace marginfer {

/// Parsed "model" block of a run config: either a linear-Gaussian model
/// (default generator when only "dim" is given, explicit matrices
/// otherwise) or a synthetic chirp model.
struct ModelConfig {
    enum class Type { kLinearGaussian, kChirp };
    Type type = Type::kLinearGaussian;
    LinearGaussianModel linear;
    ChirpModel chirp;
    std::string tag;

    int dim_theta() const;
    int dim_x() const;
};

struct MomentTrainOptions {
    std::vector<int> mean_hidden{128, 128};
    std::vector<int> var_hidden{128, 128};
    std::vector<int> cov_hidden{64};
    TrainConfig train;
};

/// Full run configuration with every field defaulted; JSON files override
/// fields, CLI flags override both.
struct RunConfig {
    ModelConfig model;
    std::filesystem::path out_dir = "out";
    std::uint64_t seed = 1;
    int threads = 1;
    std::int64_t n_sims = 20000;
    int mcmc_steps = 4000;
    int mcmc_walkers = 64;
    int mcmc_store_every = 1;
    double stretch_a = 2.0;
    bool all_pairs = false;
    std::vector<std::pair<int, int>> pairs{{0, 1}};
    MomentTrainOptions moments;
    FlowTrainOptions flow;
    int grid_res = 100;

    /// Pair list to operate on: the explicit list, or every (i, j) with
    /// i < j < dim_theta when all_pairs is set.
    std::vector<std::pair<int, int>> resolve_pairs() const;

    /// Resolved-configuration JSON echoed by every command.
    std::string resolved_json() const;
};

/// Built-in defaults (d=16 default linear-Gaussian model).
RunConfig default_run_config();

/// Loads a run config JSON; unknown fields are rejected and parse errors
/// report the file path and field. Missing fields keep their defaults.
RunConfig load_run_config(const std::filesystem::path& path);

/// Parses the --pairs flag value: "all" or "a,b;c,d;...".
/// Returns true for "all"; otherwise fills `pairs`.
bool parse_pairs_flag(const std::string& value, std::vector<std::pair<int, int>>& pairs);

}  // namespace marginfer
