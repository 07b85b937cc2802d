#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nsfx/errors.hpp"
#include "nsfx/experiment.hpp"

namespace {

void add_common(CLI::App* cmd, nsfx::CommandOptions& o, std::uint64_t& seed, std::string& out) {
    cmd->add_option("--config", o.config, "Experiment config file")->required();
    cmd->add_option("--seed", seed, "Override the config seed");
    cmd->add_option("--out", out, "Output directory (overrides output.dir)");
    cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noisy softmax training and experiments"};
    app.require_subcommand(1);

    nsfx::CommandOptions opts;
    std::uint64_t seed = 0;
    std::string out;
    auto* train = app.add_subcommand("train", "Train one model");
    auto* compare = app.add_subcommand("noise-compare", "Sweep noise variants and alpha^2 with paired seeds");
    auto* saturation = app.add_subcommand("saturation-study", "Average prediction curves per variant");
    for (auto* cmd : {train, compare, saturation}) add_common(cmd, opts, seed, out);

    nsfx::GradcheckOptions gc;
    std::vector<std::string> variant_names;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradients");
    gradcheck->add_option("--variants", variant_names, "Variants to check (default: all)")->delimiter(',');
    gradcheck->add_option("--seeds", gc.seeds, "Random cases per variant and alpha^2")->check(CLI::PositiveNumber);
    gradcheck->add_option("--alpha-squared", gc.alpha_squared, "alpha^2 values")->delimiter(',');
    gradcheck->add_option("--tolerance", gc.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
    gradcheck->add_flag("--quiet", gc.quiet, "Suppress progress output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : nsfx::kExitConfig;
    }

    for (auto* cmd : {train, compare, saturation}) {
        if (cmd->count("--seed")) opts.seed = seed;
        if (cmd->count("--out")) opts.out = out;
    }

    return nsfx::run_guarded([&] {
        if (*train) return nsfx::cmd_train(opts);
        if (*compare) return nsfx::cmd_noise_compare(opts);
        if (*saturation) return nsfx::cmd_saturation_study(opts);
        if (!variant_names.empty()) {
            gc.variants.clear();
            for (const auto& name : variant_names) {
                try {
                    gc.variants.push_back(nsfx::parse_variant(name));
                } catch (const nsfx::InvalidInput& e) {
                    throw nsfx::ConfigError(e.what());
                }
            }
        }
        for (double a2 : gc.alpha_squared) {
            if (!(a2 >= 0.0)) throw nsfx::ConfigError("alpha^2 must be non-negative");
        }
        return nsfx::cmd_gradcheck(gc);
    });
}
