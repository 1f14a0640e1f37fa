#include "marginfer/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "marginfer/errors.hpp"

namespace marginfer {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& context, const std::string& field,
                       const std::string& what) {
    throw ConfigError(context + ": field \"" + field + "\": " + what);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& context) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) fail(context, key, "unknown field");
    }
}

Eigen::VectorXd parse_vector(const json& j, const std::string& context,
                             const std::string& field) {
    if (!j.is_array()) fail(context, field, "expected an array of numbers");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) fail(context, field, "expected an array of numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

Eigen::MatrixXd parse_matrix(const json& j, const std::string& context,
                             const std::string& field) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) {
        fail(context, field, "expected an array of rows");
    }
    const std::size_t cols = j[0].size();
    Eigen::MatrixXd m(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols) fail(context, field, "ragged matrix rows");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[r][c].is_number()) fail(context, field, "expected numeric entries");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
        }
    }
    return m;
}

std::vector<int> parse_hidden(const json& j, const std::string& context,
                              const std::string& field) {
    if (!j.is_array()) fail(context, field, "expected an array of layer widths");
    std::vector<int> out;
    for (const auto& e : j) {
        if (!e.is_number_integer() || e.get<int>() < 1) {
            fail(context, field, "layer widths must be positive integers");
        }
        out.push_back(e.get<int>());
    }
    return out;
}

ModelConfig parse_model(const json& j, const std::string& context) {
    if (!j.is_object()) fail(context, "model", "expected an object");
    const std::string type = j.value("type", "linear_gaussian");
    ModelConfig mc;
    if (type == "linear_gaussian") {
        mc.type = ModelConfig::Type::kLinearGaussian;
        reject_unknown(j, {"type", "dim", "design", "prior_mean", "prior_cov", "noise_cov"},
                       context + ".model");
        if (j.contains("design") || j.contains("prior_cov") || j.contains("noise_cov")) {
            if (!j.contains("design") || !j.contains("prior_cov") || !j.contains("noise_cov")) {
                fail(context, "model",
                     "explicit linear-Gaussian models need design, prior_cov and noise_cov");
            }
            mc.linear.design = parse_matrix(j.at("design"), context, "model.design");
            mc.linear.prior_cov = parse_matrix(j.at("prior_cov"), context, "model.prior_cov");
            const json& nc = j.at("noise_cov");
            if (nc.is_array() && !nc.empty() && nc[0].is_number()) {
                mc.linear.noise_cov =
                    parse_vector(nc, context, "model.noise_cov").asDiagonal();
            } else {
                mc.linear.noise_cov = parse_matrix(nc, context, "model.noise_cov");
            }
            if (j.contains("prior_mean")) {
                mc.linear.prior_mean = parse_vector(j.at("prior_mean"), context,
                                                    "model.prior_mean");
            } else {
                mc.linear.prior_mean = Eigen::VectorXd::Zero(mc.linear.design.cols());
            }
            mc.tag = "linear_gaussian_custom_d" + std::to_string(mc.linear.dim_theta());
        } else {
            const int dim = j.value("dim", 16);
            if (dim < 1) fail(context, "model.dim", "must be positive");
            mc.linear = make_default_linear_gaussian(dim);
            mc.tag = "linear_gaussian_d" + std::to_string(dim);
        }
        mc.linear.validate();
    } else if (type == "chirp") {
        mc.type = ModelConfig::Type::kChirp;
        reject_unknown(j,
                       {"type", "n_samples", "dt", "mass_prior", "dist_prior", "t_after",
                        "psd_scale", "noise_psd"},
                       context + ".model");
        mc.chirp = make_default_chirp(j.value("psd_scale", 1.0));
        // Overriding n_samples without a matching noise_psd is caught by
        // validate() below (PSD length must stay n_samples/2 + 1).
        mc.chirp.n_samples = j.value("n_samples", mc.chirp.n_samples);
        mc.chirp.dt = j.value("dt", mc.chirp.dt);
        if (j.contains("mass_prior")) {
            const Eigen::VectorXd mp = parse_vector(j.at("mass_prior"), context,
                                                    "model.mass_prior");
            if (mp.size() != 2) fail(context, "model.mass_prior", "expected [lo, hi]");
            mc.chirp.mass_prior_lo = mp(0);
            mc.chirp.mass_prior_hi = mp(1);
        }
        if (j.contains("dist_prior")) {
            const Eigen::VectorXd dp = parse_vector(j.at("dist_prior"), context,
                                                    "model.dist_prior");
            if (dp.size() != 2) fail(context, "model.dist_prior", "expected [lo, hi]");
            mc.chirp.dist_prior_lo = dp(0);
            mc.chirp.dist_prior_hi = dp(1);
        }
        if (j.contains("t_after")) mc.chirp.t_after = j.at("t_after").get<double>();
        if (j.contains("noise_psd")) {
            mc.chirp.noise_psd = parse_vector(j.at("noise_psd"), context, "model.noise_psd");
        }
        mc.chirp.validate();
        mc.tag = "chirp_n" + std::to_string(mc.chirp.n_samples);
    } else {
        fail(context, "model.type", "must be \"linear_gaussian\" or \"chirp\"");
    }
    return mc;
}

TrainConfig parse_train(const json& j, const std::string& context, const TrainConfig& base) {
    reject_unknown(j,
                   {"learning_rate", "batch_size", "max_epochs", "patience",
                    "validation_fraction"},
                   context);
    TrainConfig cfg = base;
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
    try {
        cfg.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(context + ": " + e.what());
    }
    return cfg;
}

}  // namespace

int ModelConfig::dim_theta() const {
    return type == Type::kLinearGaussian ? linear.dim_theta() : chirp.n_samples;
}

int ModelConfig::dim_x() const {
    return type == Type::kLinearGaussian ? linear.dim_x() : chirp.n_samples;
}

std::vector<std::pair<int, int>> RunConfig::resolve_pairs() const {
    if (!all_pairs) return pairs;
    std::vector<std::pair<int, int>> out;
    const int d = model.dim_theta();
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) out.emplace_back(i, j);
    }
    return out;
}

std::string RunConfig::resolved_json() const {
    json j;
    j["model"] = {{"tag", model.tag},
                  {"type", model.type == ModelConfig::Type::kLinearGaussian ? "linear_gaussian"
                                                                            : "chirp"},
                  {"dim_theta", model.dim_theta()},
                  {"dim_x", model.dim_x()}};
    j["out_dir"] = out_dir.string();
    j["seed"] = seed;
    j["threads"] = threads;
    j["n_sims"] = n_sims;
    j["mcmc"] = {{"steps", mcmc_steps},
                 {"walkers", mcmc_walkers},
                 {"store_every", mcmc_store_every},
                 {"stretch_a", stretch_a}};
    if (all_pairs) {
        j["pairs"] = "all";
    } else {
        json jp = json::array();
        for (const auto& [a, b] : pairs) jp.push_back({a, b});
        j["pairs"] = jp;
    }
    auto train_json = [](const TrainConfig& t) {
        return json{{"learning_rate", t.learning_rate},
                    {"batch_size", t.batch_size},
                    {"max_epochs", t.max_epochs},
                    {"patience", t.patience},
                    {"validation_fraction", t.validation_fraction}};
    };
    j["moments"] = {{"mean_hidden", moments.mean_hidden},
                    {"var_hidden", moments.var_hidden},
                    {"cov_hidden", moments.cov_hidden},
                    {"train", train_json(moments.train)}};
    j["flow"] = {{"n_stages", flow.n_stages},
                 {"hidden", flow.hidden},
                 {"n_members", flow.n_members},
                 {"train", train_json(flow.train)}};
    j["grid_res"] = grid_res;
    return j.dump(2);
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.model.type = ModelConfig::Type::kLinearGaussian;
    cfg.model.linear = make_default_linear_gaussian(16);
    cfg.model.tag = "linear_gaussian_d16";
    cfg.moments.train.max_epochs = 80;
    cfg.moments.train.patience = 10;
    cfg.flow.train.max_epochs = 60;
    cfg.flow.train.patience = 8;
    cfg.flow.train.learning_rate = 2e-3;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    const std::string context = path.string();
    if (!j.is_object()) throw ConfigError(context + ": top level must be an object");
    reject_unknown(j,
                   {"model", "out_dir", "seed", "threads", "n_sims", "mcmc", "pairs", "moments",
                    "flow", "grid_res"},
                   context);

    RunConfig cfg = default_run_config();
    try {
        if (j.contains("model")) cfg.model = parse_model(j.at("model"), context);
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
        if (j.contains("n_sims")) cfg.n_sims = j.at("n_sims").get<std::int64_t>();
        if (j.contains("mcmc")) {
            const json& m = j.at("mcmc");
            reject_unknown(m, {"steps", "walkers", "store_every", "stretch_a"},
                           context + ".mcmc");
            cfg.mcmc_steps = m.value("steps", cfg.mcmc_steps);
            cfg.mcmc_walkers = m.value("walkers", cfg.mcmc_walkers);
            cfg.mcmc_store_every = m.value("store_every", cfg.mcmc_store_every);
            cfg.stretch_a = m.value("stretch_a", cfg.stretch_a);
        }
        if (j.contains("pairs")) {
            const json& p = j.at("pairs");
            if (p.is_string()) {
                if (p.get<std::string>() != "all") {
                    fail(context, "pairs", "string form must be \"all\"");
                }
                cfg.all_pairs = true;
            } else if (p.is_array()) {
                cfg.pairs.clear();
                for (const auto& e : p) {
                    if (!e.is_array() || e.size() != 2) {
                        fail(context, "pairs", "entries must be [a, b] index pairs");
                    }
                    cfg.pairs.emplace_back(e[0].get<int>(), e[1].get<int>());
                }
                cfg.all_pairs = false;
            } else {
                fail(context, "pairs", "expected \"all\" or an array of pairs");
            }
        }
        if (j.contains("moments")) {
            const json& m = j.at("moments");
            reject_unknown(m, {"mean_hidden", "var_hidden", "cov_hidden", "train"},
                           context + ".moments");
            if (m.contains("mean_hidden")) {
                cfg.moments.mean_hidden = parse_hidden(m.at("mean_hidden"), context,
                                                       "moments.mean_hidden");
            }
            if (m.contains("var_hidden")) {
                cfg.moments.var_hidden = parse_hidden(m.at("var_hidden"), context,
                                                      "moments.var_hidden");
            }
            if (m.contains("cov_hidden")) {
                cfg.moments.cov_hidden = parse_hidden(m.at("cov_hidden"), context,
                                                      "moments.cov_hidden");
            }
            if (m.contains("train")) {
                cfg.moments.train = parse_train(m.at("train"), context + ".moments.train",
                                                cfg.moments.train);
            }
        }
        if (j.contains("flow")) {
            const json& f = j.at("flow");
            reject_unknown(f, {"n_stages", "hidden", "n_members", "train"}, context + ".flow");
            cfg.flow.n_stages = f.value("n_stages", cfg.flow.n_stages);
            if (f.contains("hidden")) {
                cfg.flow.hidden = parse_hidden(f.at("hidden"), context, "flow.hidden");
            }
            cfg.flow.n_members = f.value("n_members", cfg.flow.n_members);
            if (f.contains("train")) {
                cfg.flow.train = parse_train(f.at("train"), context + ".flow.train",
                                             cfg.flow.train);
            }
        }
        if (j.contains("grid_res")) cfg.grid_res = j.at("grid_res").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(context + ": " + e.what());
    }

    if (cfg.n_sims < 0) throw ConfigError(context + ": field \"n_sims\": must be nonnegative");
    if (cfg.threads < 1) throw ConfigError(context + ": field \"threads\": must be >= 1");
    if (cfg.grid_res < 2) throw ConfigError(context + ": field \"grid_res\": must be >= 2");
    const int d = cfg.model.dim_theta();
    for (const auto& [a, b] : cfg.pairs) {
        if (a < 0 || b < 0 || a >= d || b >= d || a == b) {
            throw ConfigError(context + ": field \"pairs\": invalid pair (" + std::to_string(a) +
                              "," + std::to_string(b) + ") for dim_theta " + std::to_string(d));
        }
    }
    return cfg;
}

bool parse_pairs_flag(const std::string& value, std::vector<std::pair<int, int>>& pairs) {
    if (value == "all") return true;
    pairs.clear();
    std::stringstream ss(value);
    std::string entry;
    while (std::getline(ss, entry, ';')) {
        const auto comma = entry.find(',');
        if (comma == std::string::npos) {
            throw ConfigError("--pairs entries must look like a,b (got \"" + entry + "\")");
        }
        try {
            const int a = std::stoi(entry.substr(0, comma));
            const int b = std::stoi(entry.substr(comma + 1));
            pairs.emplace_back(a, b);
        } catch (const std::exception&) {
            throw ConfigError("--pairs entries must be integer pairs (got \"" + entry + "\")");
        }
    }
    if (pairs.empty()) throw ConfigError("--pairs must name at least one pair or \"all\"");
    return false;
}

}  // namespace marginfer
