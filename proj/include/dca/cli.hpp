#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dca/convlab.hpp"
#include "dca/errors.hpp"
#include "dca/qpmix.hpp"

namespace dca::cli {

struct UnknownKey : Error {
    explicit UnknownKey(const std::string& key) : Error("unknown config key: " + key) {}
};
struct RangeViolation : Error {
    explicit RangeViolation(const std::string& key) : Error("value out of range for key: " + key) {}
};
struct RosterMismatch : Error {
    explicit RosterMismatch(const std::string& key)
        : Error("roster does not match n_stations (key: " + key + ")") {}
};

// One batch experiment: scenario id, station roster, traffic, horizon,
// seeds, output directory, plus the embedded trainer/lab settings.
struct ScenarioSpec {
    std::string scenario = "saturated";
    qpmix::TrainConfig train;
    convlab::LabConfig lab;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "out";
    std::string checkpoint;  // eval input; empty = train from scratch
    bool eval_only = false;

    // roster counts, kept explicit so the resolved config round-trips
    int n_dqn = 0, n_ppo = 0, n_edca_vo = 0, n_edca_vi = 0, n_edca_be = 0;
};

// key = value lines, '#' comments. Unknown keys, out-of-range values and
// roster/station-count conflicts raise the errors above.
ScenarioSpec parse_config(const std::string& text);
ScenarioSpec parse_config_file(const std::string& path);

// Resolved key=value text; parse_config(emit_config(s)) == s.
std::string emit_config(const ScenarioSpec& spec);

struct ScenarioResult {
    int seeds_ok = 0;
    int seeds_failed = 0;
    std::vector<std::string> files;
};

// Executes all seeds (worker pool sized by DCA_WORKERS, default 1) and
// writes per-seed metric/curve CSVs, an aggregate CSV, checkpoints and
// the resolved config under out_dir. A NumericalError aborts only the
// offending seed.
ScenarioResult run_scenario(const ScenarioSpec& spec);

}  // namespace dca::cli
