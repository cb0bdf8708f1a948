#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dca/cli.hpp"

namespace {

void apply_overrides(dca::cli::ScenarioSpec& spec, const std::string& seeds,
                     const std::string& out_dir, long long slots) {
    if (!seeds.empty()) {
        spec.seeds.clear();
        std::string item;
        std::istringstream ss(seeds);
        while (std::getline(ss, item, ','))
            spec.seeds.push_back(std::stoull(item));
    }
    if (!out_dir.empty()) spec.out_dir = out_dir;
    if (slots > 0) spec.train.total_slots = slots;
}

int execute(const dca::cli::ScenarioSpec& spec) {
    const auto res = dca::cli::run_scenario(spec);
    std::printf("%d seed(s) ok, %d failed; outputs in %s\n", res.seeds_ok, res.seeds_failed,
                spec.out_dir.c_str());
    return res.seeds_failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed channel access experiment runner"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, seeds, out_dir;
    long long slots = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seeds", seeds, "comma-separated seed list");
        cmd->add_option("--out-dir", out_dir, "output directory");
        cmd->add_option("--slots", slots, "override total slots");
    };

    auto* run = app.add_subcommand("run", "train/simulate a scenario from a config file");
    run->add_option("config", config_path, "config file")->required();
    add_common(run);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under a config");
    eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("config", config_path, "config file")->required();
    add_common(eval);

    auto* lab = app.add_subcommand("convlab", "run the convergence laboratory");
    lab->add_option("config", config_path, "config file")->required();
    add_common(lab);

    CLI11_PARSE(app, argc, argv);

    try {
        auto spec = dca::cli::parse_config_file(config_path);
        apply_overrides(spec, seeds, out_dir, slots);
        if (app.got_subcommand(eval)) {
            spec.checkpoint = checkpoint_path;
            spec.eval_only = true;
        }
        if (app.got_subcommand(lab) && spec.scenario != "convlab") {
            std::fprintf(stderr, "convlab subcommand requires scenario = convlab\n");
            return 2;
        }
        return execute(spec);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
