// osr: generate synthetic spectra, train open-set ensembles, evaluate them.
#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "osr/osr.hpp"

namespace {

struct Overrides {
    std::string config;
    std::string output;
    std::string manifest;
    std::optional<std::uint64_t> seed;
    std::string strategy;
    std::optional<double> threshold;
    bool quiet = false;
};

osr::RunConfig resolve(const Overrides& o) {
    osr::RunConfig c = o.config.empty() ? osr::RunConfig{} : osr::RunConfig::load(o.config);
    if (!o.output.empty()) c.output = o.output;
    if (!o.manifest.empty()) c.manifest = o.manifest;
    if (o.seed) c.seed = *o.seed;
    if (!o.strategy.empty()) c.train.loss.strategy = osr::parse_strategy(o.strategy);
    if (o.threshold) c.eval.threshold = *o.threshold;
    return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "run config (INI)");
    cmd->add_option("-o,--output", o.output, "output directory");
    cmd->add_option("-s,--seed", o.seed, "seed override");
    cmd->add_flag("-q,--quiet", o.quiet, "no progress output");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-set classification of 1D spectra"};
    app.require_subcommand(1);
    Overrides o;

    auto* generate = app.add_subcommand("generate", "write a synthetic benchmark dataset and manifest");
    add_common(generate, o);
    std::optional<std::size_t> per_class, bins;
    generate->add_option("--per-class", per_class, "spectra per class");
    generate->add_option("--bins", bins, "wavenumber bins per spectrum");

    std::vector<CLI::App*> model_cmds;
    model_cmds.push_back(app.add_subcommand("train", "train an ensemble on the train split"));
    model_cmds.push_back(app.add_subcommand("evaluate", "evaluate checkpoints on the test split"));
    model_cmds.push_back(app.add_subcommand("sweep", "sweep the cutoff and select an operating point"));
    model_cmds.push_back(app.add_subcommand("compare", "train and evaluate all four strategies"));
    for (auto* cmd : model_cmds) {
        add_common(cmd, o);
        cmd->add_option("-m,--manifest", o.manifest, "dataset manifest");
        if (cmd->get_name() != "compare") cmd->add_option("--strategy", o.strategy, "strategy override");
        if (cmd->get_name() == "evaluate") cmd->add_option("--threshold", o.threshold, "fixed cutoff in [0, 1]");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        auto config = resolve(o);
        std::ostream* log = o.quiet ? nullptr : &std::cerr;
        if (generate->parsed()) {
            if (per_class) config.generate.per_class = *per_class;
            if (bins) config.generate.bins = *bins;
            osr::cmd_generate(config, log);
        } else if (app.got_subcommand("train")) {
            osr::cmd_train(config, log);
        } else if (app.got_subcommand("evaluate")) {
            osr::cmd_evaluate(config, log);
        } else if (app.got_subcommand("sweep")) {
            osr::cmd_sweep(config, log);
        } else if (app.got_subcommand("compare")) {
            osr::cmd_compare(config, log);
        }
    } catch (const std::exception& e) {
        std::cerr << "osr: " << e.what() << '\n';
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
