#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bdsp/bdsp.hpp"

namespace {

bdsp::KeyValues load_file(const std::string& path) {
    return path.empty() ? bdsp::KeyValues{} : bdsp::parse_config_file(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated data-sharing simulator: FedAvg, SMOTE, Shapley valuation and a simulated ledger"};
    app.require_subcommand(1);

    std::string config_path, out;
    std::optional<std::uint64_t> seed;

    auto* gen = app.add_subcommand("generate", "write a synthetic credit-card-schema CSV");
    std::optional<std::size_t> n;
    std::optional<double> minority, separation;
    gen->add_option("--config", config_path, "config file (synthetic_* keys)");
    gen->add_option("--seed", seed, "generator seed (overrides synthetic_seed)");
    gen->add_option("--out", out, "output CSV path")->required();
    gen->add_option("--n", n, "number of rows");
    gen->add_option("--minority", minority, "fraction of label-1 rows, in (0, 0.5)");
    gen->add_option("--separation", separation, "distance between class means");

    auto* run = app.add_subcommand("run", "run the configured experiment sweep");
    std::string policy, epochs, batch;
    bool parallel = false;
    run->add_option("--config", config_path, "config file");
    run->add_option("--seed", seed, "master seed");
    run->add_option("--out", out, "output directory")->default_val("bdsp-out");
    run->add_option("--policy", policy, "comma list of random, greedy, contribution");
    run->add_option("--epochs", epochs, "local epochs (comma list sweeps)");
    run->add_option("--batch", batch, "batch size (comma list sweeps)");
    run->add_flag("--parallel", parallel, "run sweep points and local training on several threads");

    auto* validate = app.add_subcommand("validate", "check a chain export");
    std::string chain_path;
    validate->add_option("chain", chain_path, "chain export (.chain.jsonl)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            bdsp::KeyValues flags;
            if (seed) flags["synthetic_seed"] = std::to_string(*seed);
            if (n) flags["synthetic_n"] = std::to_string(*n);
            if (minority) flags["synthetic_minority_fraction"] = std::to_string(*minority);
            if (separation) flags["synthetic_separation"] = std::to_string(*separation);
            const auto spec = bdsp::make_experiment(bdsp::resolve_config(load_file(config_path), flags), out, false);
            bdsp::cmd_generate(spec.synthetic, out);
            std::cout << "wrote " << spec.synthetic.n << " rows to " << out << '\n';
            return 0;
        }
        if (*run) {
            bdsp::KeyValues flags;
            if (seed) flags["seed"] = std::to_string(*seed);
            if (!policy.empty()) flags["policies"] = policy;
            if (!epochs.empty()) flags["epochs"] = epochs;
            if (!batch.empty()) flags["batch_size"] = batch;
            const auto spec = bdsp::make_experiment(bdsp::resolve_config(load_file(config_path), flags), out, parallel);
            for (const auto& p : bdsp::cmd_run(spec)) {
                const auto& last = p.result.reports.back();
                std::cout << p.stem << ": rounds=" << p.result.reports.size()
                          << " accuracy=" << last.global_metrics.accuracy << " f1=" << last.global_metrics.f1
                          << " org_accuracy=" << last.org_accuracy() << " rounds_to_threshold="
                          << (p.result.rounds_to_threshold ? std::to_string(*p.result.rounds_to_threshold) : "NA")
                          << '\n';
            }
            std::cout << "outputs in " << spec.output_dir.string() << '\n';
            return 0;
        }
        const auto outcome = bdsp::cmd_validate(chain_path);
        (outcome.exit_code == 0 ? std::cout : std::cerr) << outcome.message << '\n';
        return outcome.exit_code;
    } catch (const bdsp::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
