#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "riskrank/commands.hpp"
#include "riskrank/errors.hpp"

namespace {

using riskrank::commands::CommandOptions;

struct CliArgs {
    std::string config_path;
    std::string run_name;
    std::string measure;
    std::string loss;
    std::string mode = "words";
    std::string k_grid = "0,0.1,0.3";
    std::string compare_a, compare_b;
    std::vector<std::string> doc_ids;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

CommandOptions to_options(const CliArgs& args) {
    CommandOptions opts;
    opts.run_name = args.run_name;
    if (args.seed_set) opts.seed = args.seed;
    if (!args.measure.empty()) {
        opts.measure = riskrank::riskmeasures::risk_measure_from_string(args.measure);
    }
    if (!args.loss.empty()) opts.loss = riskrank::losses::loss_kind_from_string(args.loss);
    if (args.mode == "words") opts.ablation_mode = riskrank::explain::AblationMode::Words;
    else if (args.mode == "sentences") opts.ablation_mode = riskrank::explain::AblationMode::Sentences;
    else throw riskrank::Error(riskrank::ErrorKind::ConfigError, "mode must be words or sentences");

    opts.k_grid.clear();
    std::stringstream ss(args.k_grid);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) opts.k_grid.push_back(std::stod(item));
    }
    opts.doc_ids = args.doc_ids;
    opts.compare_a = args.compare_a;
    opts.compare_b = args.compare_b;
    return opts;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Explainable financial risk ranking pipeline"};
    app.require_subcommand(1);

    CliArgs args;
    std::string command;
    for (const char* name : {"label", "split", "train", "eval", "explain", "ablate"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", args.config_path, "run configuration file")->required();
        sub->add_option("--run-name", args.run_name, "run directory name (default: config hash + timestamp)");
        sub->add_option_function<std::uint64_t>(
            "--seed", [&args](std::uint64_t v) { args.seed = v; args.seed_set = true; },
            "restrict to one seed");
        sub->add_option("--measure", args.measure, "override risk measure (std|skew|kurt|sortino)");
        sub->add_option("--loss", args.loss, "override loss (triplet|pairwise|cross_entropy)");
        if (std::string(name) == "ablate") {
            sub->add_option("--k-grid", args.k_grid, "comma-separated removal fractions");
            sub->add_option("--mode", args.mode, "words|sentences");
        }
        if (std::string(name) == "explain") {
            sub->add_option("--doc-id", args.doc_ids, "emit a top-5 sentence heatmap for this document");
        }
        if (std::string(name) == "eval") {
            sub->add_option("--compare-a", args.compare_a, "eval run directory A for paired Cohen's d");
            sub->add_option("--compare-b", args.compare_b, "eval run directory B for paired Cohen's d");
        }
        sub->callback([&command, name] { command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage errors exit 1
    }

    try {
        const riskrank::config::RunConfig cfg = riskrank::config::parse_config_file(args.config_path);
        const CommandOptions opts = to_options(args);
        std::string run_dir;
        if (command == "label") run_dir = riskrank::commands::cmd_label(cfg, opts);
        else if (command == "split") run_dir = riskrank::commands::cmd_split(cfg, opts);
        else if (command == "train") run_dir = riskrank::commands::cmd_train(cfg, opts);
        else if (command == "eval") run_dir = riskrank::commands::cmd_eval(cfg, opts);
        else if (command == "explain") run_dir = riskrank::commands::cmd_explain(cfg, opts);
        else if (command == "ablate") run_dir = riskrank::commands::cmd_ablate(cfg, opts);
        std::cout << run_dir << "\n";
    } catch (const riskrank::Error& e) {
        std::cerr << "riskrank: " << e.what() << "\n";
        return 2; // data errors exit 2
    } catch (const std::exception& e) {
        std::cerr << "riskrank: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
