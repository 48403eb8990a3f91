#include "hcg/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"hcg: coarse-graining and regularity experiments for high-contrast elliptic coefficients"};
    app.require_subcommand(1);
    hcg::cli::Options opt;
    std::string harness;

    auto add_common = [&opt](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "experiment configuration file")->required();
        sub->add_option("--out", opt.out, "output directory (overrides run.out)");
        sub->add_option("--threads", opt.threads, "worker threads (overrides run.threads)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--seed-offset", opt.seed_offset, "added to every seed of the config")
            ->check(CLI::NonNegativeNumber);
    };
    auto* field = app.add_subcommand("field", "generate and write CGF1 field snapshots");
    auto* coarsen = app.add_subcommand("coarsen", "multiscale coarse-grained matrices and scale reports");
    auto* verify = app.add_subcommand("verify", "run a verification harness");
    verify->add_option("harness", harness, "caccioppoli | approx | liouville | excess | dims")
        ->required()
        ->check(CLI::IsMember({"caccioppoli", "approx", "liouville", "excess", "dims"}));
    auto* report = app.add_subcommand("report", "aggregate the reports of an output directory");
    for (auto* sub : {field, coarsen, verify, report}) {
        add_common(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : hcg::cli::kValidation;
    }
    const std::string verb = app.get_subcommands().front()->get_name();
    return hcg::cli::run(verb, harness, opt, std::cout, std::cerr);
}
