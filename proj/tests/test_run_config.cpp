#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "marginfer/errors.hpp"
#include "marginfer/run_config.hpp"
#include "test_util.hpp"

using namespace marginfer;

namespace {

RunConfig load_text(const testutil::TempDir& tmp, const std::string& body,
                    const std::string& name = "cfg.json") {
    testutil::write_text(tmp / name, body);
    return load_run_config(tmp / name);
}

}  // namespace

TEST_CASE("default configuration") {
    const auto cfg = default_run_config();
    CHECK(cfg.model.type == ModelConfig::Type::kLinearGaussian);
    CHECK(cfg.model.dim_theta() == 16);
    CHECK(cfg.model.dim_x() == 16);
    CHECK(cfg.model.tag == "linear_gaussian_d16");
    CHECK(cfg.seed == 1);
    CHECK(cfg.threads == 1);
    CHECK(cfg.n_sims == 20000);
    CHECK(cfg.mcmc_steps == 4000);
    CHECK(cfg.mcmc_walkers == 64);
    CHECK(cfg.mcmc_store_every == 1);
    CHECK(cfg.stretch_a == 2.0);
    CHECK_FALSE(cfg.all_pairs);
    CHECK(cfg.pairs == std::vector<std::pair<int, int>>{{0, 1}});
    CHECK(cfg.grid_res == 100);
    CHECK(cfg.moments.mean_hidden == std::vector<int>{128, 128});
    CHECK(cfg.moments.var_hidden == std::vector<int>{128, 128});
    CHECK(cfg.moments.cov_hidden == std::vector<int>{64});
    CHECK(cfg.moments.train.max_epochs == 80);
    CHECK(cfg.flow.n_stages == 5);
    CHECK(cfg.flow.hidden == std::vector<int>{64});
    CHECK(cfg.flow.n_members == 3);
    CHECK(cfg.flow.train.learning_rate == 2e-3);
    CHECK(cfg.resolve_pairs() == std::vector<std::pair<int, int>>{{0, 1}});
}

TEST_CASE("full config file round-trips every field") {
    testutil::TempDir tmp;
    const auto cfg = load_text(tmp, R"({
        "model": {
            "type": "linear_gaussian",
            "design": [[1.0, 0.0], [0.5, 1.0]],
            "prior_cov": [[2.0, 0.5], [0.5, 2.0]],
            "noise_cov": [0.5, 1.5],
            "prior_mean": [0.1, -0.1]
        },
        "out_dir": "results/run1",
        "seed": 77,
        "threads": 3,
        "n_sims": 512,
        "mcmc": {"steps": 900, "walkers": 32, "store_every": 2, "stretch_a": 2.5},
        "pairs": [[0, 1]],
        "moments": {
            "mean_hidden": [16, 8],
            "var_hidden": [12],
            "cov_hidden": [10],
            "train": {"learning_rate": 0.01, "batch_size": 32, "max_epochs": 7,
                      "patience": 3, "validation_fraction": 0.2}
        },
        "flow": {"n_stages": 3, "hidden": [20], "n_members": 2,
                 "train": {"max_epochs": 9}},
        "grid_res": 50
    })");

    CHECK(cfg.model.tag == "linear_gaussian_custom_d2");
    Eigen::MatrixXd design(2, 2);
    design << 1.0, 0.0, 0.5, 1.0;
    CHECK(testutil::exact_equal(cfg.model.linear.design, design));
    Eigen::MatrixXd noise(2, 2);
    noise << 0.5, 0.0, 0.0, 1.5;  // flat noise arrays become diagonals
    CHECK(testutil::exact_equal(cfg.model.linear.noise_cov, noise));
    CHECK(cfg.model.linear.prior_mean(1) == -0.1);
    CHECK(cfg.out_dir == std::filesystem::path("results/run1"));
    CHECK(cfg.seed == 77);
    CHECK(cfg.threads == 3);
    CHECK(cfg.n_sims == 512);
    CHECK(cfg.mcmc_steps == 900);
    CHECK(cfg.mcmc_walkers == 32);
    CHECK(cfg.mcmc_store_every == 2);
    CHECK(cfg.stretch_a == 2.5);
    CHECK(cfg.moments.mean_hidden == std::vector<int>{16, 8});
    CHECK(cfg.moments.var_hidden == std::vector<int>{12});
    CHECK(cfg.moments.train.learning_rate == 0.01);
    CHECK(cfg.moments.train.batch_size == 32);
    CHECK(cfg.moments.train.max_epochs == 7);
    CHECK(cfg.moments.train.validation_fraction == 0.2);
    CHECK(cfg.flow.n_stages == 3);
    CHECK(cfg.flow.hidden == std::vector<int>{20});
    CHECK(cfg.flow.n_members == 2);
    CHECK(cfg.flow.train.max_epochs == 9);
    // Flow train fields not named keep their defaults.
    CHECK(cfg.flow.train.learning_rate == 2e-3);
    CHECK(cfg.grid_res == 50);
}

TEST_CASE("missing fields keep defaults and a default model is synthesized") {
    testutil::TempDir tmp;
    const auto cfg = load_text(tmp, R"({"model": {"dim": 4}, "seed": 9})");
    CHECK(cfg.model.tag == "linear_gaussian_d4");
    CHECK(cfg.model.dim_theta() == 4);
    CHECK(cfg.seed == 9);
    CHECK(cfg.n_sims == 20000);
    // Default model structure: unit prior diagonal, noise ramp 0.5 -> 2.0.
    CHECK(cfg.model.linear.prior_cov(0, 0) == doctest::Approx(1.0));
    CHECK(cfg.model.linear.noise_cov(0, 0) == doctest::Approx(0.5));
    CHECK(cfg.model.linear.noise_cov(3, 3) == doctest::Approx(2.0));
}

TEST_CASE("pairs accept the explicit list or the string all") {
    testutil::TempDir tmp;
    SUBCASE("explicit pair list") {
        const auto cfg = load_text(tmp, R"({"model": {"dim": 4},
                                            "pairs": [[0, 1], [2, 3]]})");
        CHECK_FALSE(cfg.all_pairs);
        CHECK(cfg.resolve_pairs() ==
              std::vector<std::pair<int, int>>{{0, 1}, {2, 3}});
    }
    SUBCASE("all expands to every i < j combination") {
        const auto cfg = load_text(tmp, R"({"model": {"dim": 4}, "pairs": "all"})");
        CHECK(cfg.all_pairs);
        CHECK(cfg.resolve_pairs() ==
              std::vector<std::pair<int, int>>{
                  {0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
    }
    SUBCASE("all on the default model gives 120 pairs") {
        const auto cfg = load_text(tmp, R"({"pairs": "all"})");
        CHECK(cfg.resolve_pairs().size() == 120);
    }
    SUBCASE("rejected forms") {
        CHECK_THROWS_WITH_AS(load_text(tmp, R"({"pairs": "some"})"),
                             doctest::Contains("pairs"), ConfigError);
        CHECK_THROWS_AS(load_text(tmp, R"({"pairs": 7})"), ConfigError);
        CHECK_THROWS_AS(load_text(tmp, R"({"pairs": [[0, 1, 2]]})"), ConfigError);
        CHECK_THROWS_WITH_AS(load_text(tmp, R"({"model": {"dim": 4},
                                                "pairs": [[0, 5]]})"),
                             doctest::Contains("invalid pair"), ConfigError);
        CHECK_THROWS_AS(load_text(tmp, R"({"model": {"dim": 4}, "pairs": [[1, 1]]})"),
                        ConfigError);
    }
}

TEST_CASE("unknown fields are rejected with their path") {
    testutil::TempDir tmp;
    CHECK_THROWS_WITH_AS(load_text(tmp, R"({"bogus": 1})"), doctest::Contains("bogus"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(
        load_text(tmp, R"({"model": {"type": "linear_gaussian", "frobnicate": 2}})"),
        doctest::Contains("frobnicate"), ConfigError);
    CHECK_THROWS_WITH_AS(load_text(tmp, R"({"mcmc": {"stepz": 10}})"),
                         doctest::Contains("stepz"), ConfigError);
    CHECK_THROWS_AS(load_text(tmp, R"({"moments": {"depth": 3}})"), ConfigError);
    CHECK_THROWS_AS(load_text(tmp, R"({"flow": {"width": 3}})"), ConfigError);
    CHECK_THROWS_WITH_AS(
        load_text(tmp, R"({"moments": {"train": {"momentum": 0.9}}})"),
        doctest::Contains("momentum"), ConfigError);
}

TEST_CASE("malformed model blocks are rejected") {
    testutil::TempDir tmp;
    CHECK_THROWS_WITH_AS(
        load_text(tmp, R"({"model": {"design": [[1.0]], "prior_cov": [[1.0]]}})"),
        doctest::Contains("noise_cov"), ConfigError);
    CHECK_THROWS_WITH_AS(
        load_text(tmp, R"({"model": {"design": [[1.0]],
                                     "prior_cov": [[1.0, 2.0], [3.0]],
                                     "noise_cov": [[1.0]]}})"),
        doctest::Contains("ragged"), ConfigError);
    // Indefinite prior: caught by model validation.
    CHECK_THROWS_WITH_AS(
        load_text(tmp, R"({"model": {"design": [[1.0, 0.0], [0.0, 1.0]],
                                     "prior_cov": [[1.0, 2.0], [2.0, 1.0]],
                                     "noise_cov": [1.0, 1.0]}})"),
        doctest::Contains("prior_cov"), ConfigError);
    CHECK_THROWS_AS(load_text(tmp, R"({"model": {"dim": 0}})"), ConfigError);
    CHECK_THROWS_AS(load_text(tmp, R"({"model": {"type": "quadratic"}})"), ConfigError);
    CHECK_THROWS_AS(load_text(tmp, R"({"model": 5})"), ConfigError);
}

TEST_CASE("chirp model configuration") {
    testutil::TempDir tmp;
    SUBCASE("psd_scale multiplies the default spectrum") {
        const auto cfg = load_text(tmp, R"({"model": {"type": "chirp", "psd_scale": 4.0}})");
        CHECK(cfg.model.type == ModelConfig::Type::kChirp);
        CHECK(cfg.model.tag == "chirp_n128");
        CHECK(cfg.model.dim_theta() == 128);
        CHECK(cfg.model.dim_x() == 128);
        const auto expected = make_default_chirp(4.0);
        CHECK(testutil::exact_equal(cfg.model.chirp.noise_psd, expected.noise_psd));
    }
    SUBCASE("priors and timing overrides") {
        const auto cfg = load_text(tmp, R"({"model": {"type": "chirp",
                                                      "mass_prior": [12.0, 20.0],
                                                      "dist_prior": [600.0, 900.0],
                                                      "t_after": 0.05}})");
        CHECK(cfg.model.chirp.mass_prior_lo == 12.0);
        CHECK(cfg.model.chirp.mass_prior_hi == 20.0);
        CHECK(cfg.model.chirp.dist_prior_lo == 600.0);
        CHECK(cfg.model.chirp.t_after == 0.05);
    }
    SUBCASE("n_samples override requires a matching spectrum") {
        CHECK_THROWS_AS(load_text(tmp, R"({"model": {"type": "chirp", "n_samples": 256}})"),
                        ConfigError);
        std::string psd = "[";
        for (int i = 0; i < 129; ++i) psd += (i ? ", 1.0" : "1.0");
        psd += "]";
        const auto cfg = load_text(
            tmp, R"({"model": {"type": "chirp", "n_samples": 256, "noise_psd": )" + psd + "}}");
        CHECK(cfg.model.tag == "chirp_n256");
        CHECK(cfg.model.chirp.noise_psd.size() == 129);
    }
    SUBCASE("prior shape errors") {
        CHECK_THROWS_WITH_AS(
            load_text(tmp, R"({"model": {"type": "chirp", "mass_prior": [1, 2, 3]}})"),
            doctest::Contains("mass_prior"), ConfigError);
        CHECK_THROWS_AS(
            load_text(tmp, R"({"model": {"type": "chirp", "mass_prior": [30.0, 10.0]}})"),
            ConfigError);
    }
}

TEST_CASE("scalar field validation") {
    testutil::TempDir tmp;
    CHECK_THROWS_WITH_AS(load_text(tmp, R"({"n_sims": -1})"), doctest::Contains("n_sims"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(load_text(tmp, R"({"threads": 0})"), doctest::Contains("threads"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(load_text(tmp, R"({"grid_res": 1})"), doctest::Contains("grid_res"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(
        load_text(tmp, R"({"moments": {"train": {"learning_rate": 0.0}}})"),
        doctest::Contains("moments.train"), ConfigError);
}

TEST_CASE("file-level errors") {
    testutil::TempDir tmp;
    CHECK_THROWS_WITH_AS(load_run_config(tmp / "absent.json"), doctest::Contains("cannot open"),
                         ConfigError);
    CHECK_THROWS_AS(load_text(tmp, "{ not json"), ConfigError);
    CHECK_THROWS_WITH_AS(load_text(tmp, "[1, 2]"), doctest::Contains("top level"), ConfigError);
}

TEST_CASE("resolved_json echoes the effective settings") {
    auto cfg = default_run_config();
    cfg.seed = 123;
    cfg.all_pairs = true;
    const auto j = nlohmann::json::parse(cfg.resolved_json());
    CHECK(j.at("seed").get<std::uint64_t>() == 123);
    CHECK(j.at("model").at("dim_theta").get<int>() == 16);
    CHECK(j.at("model").at("tag").get<std::string>() == "linear_gaussian_d16");
    CHECK(j.at("pairs").get<std::string>() == "all");
    CHECK(j.at("mcmc").at("walkers").get<int>() == 64);
    CHECK(j.at("moments").at("train").at("max_epochs").get<int>() == 80);
    CHECK(j.at("flow").at("n_stages").get<int>() == 5);

    cfg.all_pairs = false;
    const auto j2 = nlohmann::json::parse(cfg.resolved_json());
    CHECK(j2.at("pairs").is_array());
    CHECK(j2.at("pairs")[0][0].get<int>() == 0);
    CHECK(j2.at("pairs")[0][1].get<int>() == 1);
}

TEST_CASE("parse_pairs_flag grammar") {
    std::vector<std::pair<int, int>> pairs;
    CHECK(parse_pairs_flag("all", pairs));

    CHECK_FALSE(parse_pairs_flag("0,1;2,3", pairs));
    CHECK(pairs == std::vector<std::pair<int, int>>{{0, 1}, {2, 3}});

    CHECK_FALSE(parse_pairs_flag("4,7", pairs));
    CHECK(pairs == std::vector<std::pair<int, int>>{{4, 7}});

    CHECK_THROWS_WITH_AS(parse_pairs_flag("07", pairs), doctest::Contains("a,b"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_pairs_flag("x,y", pairs), doctest::Contains("integer"),
                         ConfigError);
    CHECK_THROWS_AS(parse_pairs_flag("", pairs), ConfigError);
}
