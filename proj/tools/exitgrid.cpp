// Command-line front end: gen-data | train | calibrate | eval | sweep.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "exitgrid/harness.hpp"

namespace {

struct CommonArgs {
    std::string config;
    bool has_seed = false;
    uint64_t seed = 0;
};

exitgrid::AppConfig load_config(const CommonArgs& args) {
    exitgrid::AppConfig cfg;
    if (!args.config.empty()) cfg = exitgrid::load_app_config(exitgrid::IniFile::parse_file(args.config));
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "INI config file ([data] [grid] [train] [policy])");
    cmd->add_option("--seed", args.seed, "override the relevant seed")->each([&args](const std::string&) {
        args.has_seed = true;
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"budgeted early-exit engine for sequence classification"};
    app.require_subcommand(1);

    CommonArgs common;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic video dataset");
    std::string gen_out = "dataset.bin";
    add_common(gen, common);
    gen->add_option("--out", gen_out, "output dataset file")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    std::string train_dataset, train_out = "model.bin";
    std::string route_flag, permute_flag, shift_flag;
    int threads_flag = 0;
    add_common(train, common);
    train->add_option("--dataset", train_dataset, "dataset file")->required();
    train->add_option("--out", train_out, "output model file")->capture_default_str();
    train->add_option("--route", route_flag, "checkpoint route preset (overrides config checkpoints)")
        ->check(CLI::IsMember({"depth", "input", "joint"}));
    train->add_option("--permute", permute_flag, "feed frame-sets in the fixed two-group order")
        ->check(CLI::IsMember({"on", "off"}));
    train->add_option("--shift", shift_flag, "causal temporal shift between frames")
        ->check(CLI::IsMember({"on", "off"}));
    train->add_option("--threads", threads_flag, "gradient worker threads");

    // calibrate
    auto* calib = app.add_subcommand("calibrate", "fit exit thresholds to a FLOPs budget");
    std::string calib_model, calib_dataset, calib_split, calib_out = "policy.txt";
    double budget = 0.0;
    add_common(calib, common);
    calib->add_option("--model", calib_model, "model file")->required();
    calib->add_option("--dataset", calib_dataset, "dataset file")->required();
    calib->add_option("--budget", budget, "FLOPs budget Q (average per video)")->required();
    calib->add_option("--calib-split", calib_split, "calibration split (default from config: val)");
    calib->add_option("--out", calib_out, "output policy file")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "run a policy over a split and report");
    std::string eval_model, eval_policy, eval_dataset, eval_split;
    add_common(eval, common);
    eval->add_option("--model", eval_model, "model file")->required();
    eval->add_option("--policy", eval_policy, "policy file")->required();
    eval->add_option("--dataset", eval_dataset, "dataset file")->required();
    eval->add_option("--eval-split", eval_split, "evaluation split (default from config: test)");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "calibrate and evaluate a list of budgets");
    std::string sweep_model, sweep_dataset, sweep_budgets, sweep_calib_split, sweep_eval_split, sweep_csv;
    add_common(sweep, common);
    sweep->add_option("--model", sweep_model, "model file")->required();
    sweep->add_option("--dataset", sweep_dataset, "dataset file")->required();
    sweep->add_option("--budgets", sweep_budgets, "comma-separated budgets, or 'auto'");
    sweep->add_option("--calib-split", sweep_calib_split, "calibration split");
    sweep->add_option("--eval-split", sweep_eval_split, "evaluation split");
    sweep->add_option("--csv", sweep_csv, "write the report to this CSV file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        exitgrid::AppConfig cfg = load_config(common);

        if (gen->parsed()) {
            if (common.has_seed) cfg.data.seed = common.seed;
            exitgrid::run_gen_data(cfg, gen_out, std::cout);
        } else if (train->parsed()) {
            if (common.has_seed) cfg.train.seed = common.seed;
            if (!route_flag.empty()) {
                cfg.grid.route = route_flag;
                cfg.grid.checkpoints.clear();
            }
            if (!permute_flag.empty()) cfg.grid.permute = permute_flag == "on";
            if (!shift_flag.empty()) cfg.grid.shift = shift_flag == "on";
            if (threads_flag > 0) cfg.train.threads = threads_flag;
            exitgrid::TrainStats stats = exitgrid::run_train(cfg, train_dataset, train_out, std::cout);
            if (stats.aborted) {
                std::cerr << "error: " << stats.abort_reason << "\n";
                return 1;
            }
        } else if (calib->parsed()) {
            const std::string split = calib_split.empty() ? cfg.policy.calib_split : calib_split;
            exitgrid::run_calibrate(calib_model, calib_dataset, split, budget, calib_out, std::cout);
        } else if (eval->parsed()) {
            const std::string split = eval_split.empty() ? cfg.policy.eval_split : eval_split;
            exitgrid::run_eval(eval_model, eval_policy, eval_dataset, split, std::cout);
        } else if (sweep->parsed()) {
            const std::string cs = sweep_calib_split.empty() ? cfg.policy.calib_split : sweep_calib_split;
            const std::string es = sweep_eval_split.empty() ? cfg.policy.eval_split : sweep_eval_split;
            const std::string budgets = sweep_budgets.empty() ? cfg.policy.budgets : sweep_budgets;
            exitgrid::run_sweep(sweep_model, sweep_dataset, budgets, cs, es, cfg.policy.epsilon_points,
                                sweep_csv, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
