#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dca/cli.hpp"
#include "dca/errors.hpp"

using namespace dca;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("minimal config gets the default roster and seeds") {
    const auto s = cli::parse_config("scenario = saturated\n");
    CHECK(s.scenario == "saturated");
    CHECK(s.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(s.n_dqn == 2);
    CHECK(s.n_ppo == 2);
    CHECK(s.train.sim.n_stations == 4);
    REQUIRE(s.train.roster.size() == 4);
    CHECK(s.train.roster[0].kind == qpmix::StationSpec::Kind::Dqn);
    CHECK(s.train.roster[3].kind == qpmix::StationSpec::Kind::Ppo);
    CHECK(s.train.sim.traffic[0].kind == env::TrafficModel::Kind::Saturated);
    CHECK_FALSE(s.train.independent);
}

TEST_CASE("scenario defaults set traffic and training mode") {
    const auto unsat = cli::parse_config("scenario = unsaturated\n");
    CHECK(unsat.train.sim.traffic[0].kind == env::TrafficModel::Kind::Poisson);
    CHECK(unsat.train.sim.traffic[0].lambda_pps == 200.0);

    const auto voip = cli::parse_config("scenario = voip\n");
    CHECK(voip.train.sim.traffic[0].kind == env::TrafficModel::Kind::Periodic);
    CHECK(voip.train.sim.traffic[0].period_ms == 20.0);

    const auto coex = cli::parse_config("scenario = coexistence\nn_stations = 4\n");
    CHECK(coex.n_edca_be == 4);
    CHECK(coex.n_dqn == 0);

    const auto mixed = cli::parse_config("scenario = mixed-roster\nn_stations = 4\n");
    CHECK(mixed.n_dqn == 3);
    CHECK(mixed.n_ppo == 1);

    const auto indep = cli::parse_config("scenario = independent-learning\n");
    CHECK(indep.train.independent);
}

TEST_CASE("explicit roster counts override defaults") {
    const auto s = cli::parse_config(
        "scenario = saturated\nn_dqn = 3\nn_ppo = 1\nn_edca_be = 2\n");
    CHECK(s.train.sim.n_stations == 6);
    CHECK(s.train.roster[0].kind == qpmix::StationSpec::Kind::Dqn);
    CHECK(s.train.roster[4].kind == qpmix::StationSpec::Kind::EdcaBe);
}

TEST_CASE("comments and blank lines are ignored") {
    const auto s = cli::parse_config(
        "# a comment\n\nscenario = saturated  # trailing\n  slots = 1234\n");
    CHECK(s.train.total_slots == 1234);
}

TEST_CASE("config rejections") {
    CHECK_THROWS_AS(cli::parse_config("no_such_key = 1\n"), cli::UnknownKey);
    CHECK_THROWS_AS(cli::parse_config("not a key value line\n"), cli::UnknownKey);
    CHECK_THROWS_AS(cli::parse_config("lambda = -5\n"), cli::RangeViolation);
    CHECK_THROWS_AS(cli::parse_config("gamma = 1.5\n"), cli::RangeViolation);
    CHECK_THROWS_AS(cli::parse_config("slots = abc\n"), cli::RangeViolation);
    CHECK_THROWS_AS(cli::parse_config("scenario = bogus\n"), cli::RangeViolation);
    CHECK_THROWS_AS(cli::parse_config("traffic = fractal\n"), cli::RangeViolation);
    CHECK_THROWS_AS(cli::parse_config("n_stations = 5\nn_dqn = 2\nn_ppo = 2\n"),
                    cli::RosterMismatch);
    CHECK_THROWS_AS(cli::parse_config_file("definitely_missing.cfg"), ConfigError);
}

TEST_CASE("emit and parse round-trip") {
    const auto s = cli::parse_config(
        "scenario = unsaturated\nn_dqn = 1\nn_ppo = 1\nn_edca_vo = 1\nlambda = 350.5\n"
        "slots = 50000\ngamma = 0.4\nlr_actor = 2e-6\nseeds = 7,8\nlab_k = 5\n"
        "lab_bt_b0 = 12.5\n");
    const std::string text = cli::emit_config(s);
    const auto back = cli::parse_config(text);
    CHECK(cli::emit_config(back) == text);
    CHECK(back.seeds == s.seeds);
    CHECK(back.train.total_slots == 50000);
    CHECK(back.train.gamma == 0.4);
    CHECK(back.train.lr_actor == 2e-6);
    CHECK(back.lab.k == 5);
    CHECK(back.lab.beta_theta.b0 == 12.5);
    CHECK(back.train.sim.traffic[0].lambda_pps == 350.5);
    CHECK(back.train.roster.size() == 3);
}

TEST_CASE("convlab scenario writes trace and aggregate files") {
    TempDir dir("dca_cli_convlab");
    cli::ScenarioSpec s = cli::parse_config(
        "scenario = convlab\nlab_states = 2\nlab_iters = 20000\nseeds = 1,2\n");
    s.out_dir = dir.path.string();
    const auto res = cli::run_scenario(s);
    CHECK(res.seeds_ok == 2);
    CHECK(res.seeds_failed == 0);
    CHECK(fs::exists(dir.path / "config.resolved"));
    CHECK(fs::exists(dir.path / "seed1_lab.csv"));
    CHECK(fs::exists(dir.path / "seed2_lab.csv"));
    const std::string agg = slurp((dir.path / "aggregate.csv").string());
    CHECK(agg.find("omega_err") != std::string::npos);
    // Header plus one row per seed.
    CHECK(std::count(agg.begin(), agg.end(), '\n') == 3);
}

TEST_CASE("training scenario writes per-seed outputs and is byte deterministic") {
    auto make_spec = [](const std::string& out) {
        cli::ScenarioSpec s = cli::parse_config(
            "scenario = saturated\nn_dqn = 1\nn_ppo = 1\nslots = 4000\nseeds = 5\n");
        s.out_dir = out;
        return s;
    };
    TempDir a("dca_cli_run_a"), b("dca_cli_run_b");
    const auto ra = cli::run_scenario(make_spec(a.path.string()));
    CHECK(ra.seeds_ok == 1);
    for (const char* f : {"seed5_metrics.csv", "seed5_curve.csv", "seed5_delay_cdf.csv",
                          "seed5.ckpt", "aggregate.csv"})
        CHECK(fs::exists(a.path / f));

    const auto rb = cli::run_scenario(make_spec(b.path.string()));
    CHECK(rb.seeds_ok == 1);
    for (const char* f : {"seed5_metrics.csv", "seed5_curve.csv", "seed5_delay_cdf.csv",
                          "aggregate.csv"})
        CHECK(slurp((a.path / f).string()) == slurp((b.path / f).string()));
}

TEST_CASE("one bad seed does not sink the batch") {
    // An eval-only run pointing at a missing checkpoint fails per seed.
    TempDir dir("dca_cli_badseed");
    cli::ScenarioSpec s = cli::parse_config(
        "scenario = saturated\nn_dqn = 1\nn_ppo = 1\nslots = 1000\nseeds = 1\n"
        "checkpoint = missing.ckpt\neval_only = 1\n");
    s.out_dir = dir.path.string();
    const auto res = cli::run_scenario(s);
    CHECK(res.seeds_ok == 0);
    CHECK(res.seeds_failed == 1);
    CHECK(fs::exists(dir.path / "aggregate.csv"));  // batch still finishes
}
