// longheads: command-line front end.
//
//   longheads run         encode + greedy decode, writes trace/counters/heatmap/metrics
//   longheads equivalence compare against full attention in the saturated regime
//   longheads passkey     engineered retrieval instances
//   longheads ablate      selection-policy, K and chunk-size sweeps
//   longheads scaling     per-step load counters across prompt lengths
//
// Exit status: 0 success, 1 failed assertion, 2 configuration error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "longheads/commands.hpp"

namespace lh = longheads;

namespace {

constexpr int kPass = 0;
constexpr int kAssertionFailed = 1;
constexpr int kConfigError = 2;

struct EngineOverrides {
    std::optional<std::size_t> k;
    std::optional<std::size_t> chunk_size;
    std::optional<std::string> policy;
    std::optional<std::uint64_t> seed;

    void apply(lh::EngineConfig& config) const {
        if (k) {
            config.num_selected = *k;
        }
        if (chunk_size) {
            config.chunk_size = *chunk_size;
        }
        if (policy) {
            config.policy = lh::parse_policy(*policy);
        }
        if (seed) {
            config.seed = *seed;
        }
        config.validate();
    }
};

void add_engine_flags(CLI::App* cmd, std::string& model_path, std::string& engine_path, EngineOverrides& o) {
    cmd->add_option("--model-config", model_path, "Model config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--engine-config", engine_path, "Engine config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--k", o.k, "Chunks selected per query (overrides the engine config)");
    cmd->add_option("--chunk-size", o.chunk_size, "Chunk size l (overrides the engine config)");
    cmd->add_option("--policy", o.policy, "Selection policy (overrides the engine config)");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

void write_json(const std::string& out_dir, const std::string& name, const nlohmann::json& j) {
    if (out_dir.empty()) {
        return;
    }
    std::filesystem::create_directories(out_dir);
    lh::write_text_file(std::filesystem::path(out_dir) / name, j.dump(2) + "\n");
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const std::string& w : warnings) {
        std::cerr << "warning: " << w << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chunk-selecting long-context inference engine"};
    app.require_subcommand(1);

    // run
    std::string run_model;
    std::string run_engine;
    std::string run_descriptor;
    EngineOverrides run_over;
    lh::RunDescriptor run_desc;
    std::string run_residency = "hot";
    auto* run = app.add_subcommand("run", "Encode a seeded prompt and decode greedily");
    add_engine_flags(run, run_model, run_engine, run_over);
    run->add_option("--descriptor", run_descriptor, "Run descriptor JSON (flags override it)")
        ->check(CLI::ExistingFile);
    run->add_option("--n", run_desc.n, "Prompt length")->capture_default_str();
    run->add_option("--steps", run_desc.steps, "Decode steps")->capture_default_str();
    run->add_option("--seed", run_over.seed, "Seed for the prompt and the random policy");
    run->add_option("--residency", run_residency, "hot, offload or budget:N")->capture_default_str();
    run->add_option("--out", run_desc.out, "Output directory")->capture_default_str();

    // equivalence
    std::string eq_model;
    std::string eq_engine;
    std::string eq_out;
    EngineOverrides eq_over;
    lh::EquivalenceParams eq_params;
    auto* eq = app.add_subcommand("equivalence", "Compare against full attention (saturated regime only)");
    add_engine_flags(eq, eq_model, eq_engine, eq_over);
    eq->add_option("--n", eq_params.n, "Prompt length")->capture_default_str();
    eq->add_option("--steps", eq_params.steps, "Greedy tokens to compare")->capture_default_str();
    eq->add_option("--seed", eq_params.seed, "Prompt seed")->capture_default_str();
    eq->add_option("--out", eq_out, "Output directory for equivalence.json");

    // passkey
    lh::PasskeyCommandParams pk;
    std::optional<std::size_t> pk_target;
    std::string pk_policy = "top-k";
    std::string pk_residency = "offload";
    std::string pk_out;
    auto* passkey = app.add_subcommand("passkey", "Engineered retrieval instances");
    passkey->add_option("--m", pk.m, "Chunks per instance")->capture_default_str();
    passkey->add_option("--target", pk_target, "Target chunk (random in [1, m-2] when omitted)");
    passkey->add_option("--gap", pk.gap, "Score margin of the target chunk")->capture_default_str();
    passkey->add_option("--k", pk.k, "Chunks selected per query")->capture_default_str();
    passkey->add_option("--chunk-size", pk.chunk_size, "Chunk size l")->capture_default_str();
    passkey->add_option("--layers", pk.n_layers, "Layers per instance")->capture_default_str();
    passkey->add_option("--heads", pk.n_heads, "Heads per layer")->capture_default_str();
    passkey->add_option("--trials", pk.trials, "Number of instances")->capture_default_str();
    passkey->add_option("--policy", pk_policy, "Selection policy")->capture_default_str();
    passkey->add_option("--seed", pk.seed, "Seed")->capture_default_str();
    passkey->add_option("--residency", pk_residency, "hot, offload or budget:N")->capture_default_str();
    passkey->add_option("--out", pk_out, "Output directory for metrics.json");

    // ablate
    lh::AblationParams ab;
    std::string ab_policies = "top-k,random,last-k,no-first,fix-head,fix-layer,fix-head-and-layer";
    std::string ab_out;
    ab.base.m = 16;
    ab.base.k = 6;
    ab.base.trials = 200;
    auto* ablate = app.add_subcommand("ablate", "Policy, K and chunk-size sweeps on passkey instances");
    ablate->add_option("--policies", ab_policies, "Comma-separated policy tags")->capture_default_str();
    ablate->add_option("--m", ab.base.m, "Chunks per instance")->capture_default_str();
    ablate->add_option("--gap", ab.base.gap, "Score margin of the target chunk")->capture_default_str();
    ablate->add_option("--k", ab.base.k, "Chunks selected per query")->capture_default_str();
    ablate->add_option("--chunk-size", ab.base.chunk_size, "Chunk size l")->capture_default_str();
    ablate->add_option("--trials", ab.base.trials, "Instances per policy")->capture_default_str();
    ablate->add_option("--seed", ab.base.seed, "Seed")->capture_default_str();
    ablate->add_option("--out", ab_out, "Output directory for ablation.json");

    // scaling
    std::string sc_model;
    std::string sc_engine;
    std::string sc_residency = "offload";
    std::string sc_out;
    std::string sc_n_list = "1024,4096,16384";
    EngineOverrides sc_over;
    lh::ScalingParams sc;
    auto* scaling = app.add_subcommand("scaling", "Per-step load counters across prompt lengths");
    add_engine_flags(scaling, sc_model, sc_engine, sc_over);
    scaling->add_option("--n-list", sc_n_list, "Comma-separated prompt lengths")->capture_default_str();
    scaling->add_option("--n", sc_n_list, "Alias of --n-list");
    scaling->add_option("--steps", sc.steps, "Decode steps per length")->capture_default_str();
    scaling->add_option("--seed", sc.seed, "Prompt seed")->capture_default_str();
    scaling->add_option("--residency", sc_residency, "hot, offload or budget:N")->capture_default_str();
    scaling->add_option("--out", sc_out, "Output directory for counters.json and timing.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfigError;
    }

    try {
        if (*run) {
            if (!run_descriptor.empty()) {
                const lh::RunDescriptor from_file = lh::RunDescriptor::from_json(lh::load_json_file(run_descriptor));
                const lh::RunDescriptor flags = run_desc;
                run_desc = from_file;
                if (run->count("--n")) run_desc.n = flags.n;
                if (run->count("--steps")) run_desc.steps = flags.steps;
                if (run->count("--out")) run_desc.out = flags.out;
                if (run->count("--residency")) run_desc.residency = lh::ResidencyPolicy::parse(run_residency);
                if (!run->count("--model-config")) run_model = run_desc.model_config;
                if (!run->count("--engine-config")) run_engine = run_desc.engine_config;
            } else {
                run_desc.residency = lh::ResidencyPolicy::parse(run_residency);
            }
            run_desc.model_config = run_model;
            run_desc.engine_config = run_engine;
            if (run_over.seed) {
                run_desc.seed = *run_over.seed;
            }
            const lh::ModelConfig model = lh::load_model_config(run_model);
            lh::EngineConfig engine = lh::load_engine_config(run_engine);
            run_over.apply(engine);
            const lh::RunSummary summary = lh::run_descriptor(model, engine, run_desc);
            std::cout << summary.metrics.to_json().dump(2) << '\n';
            return kPass;
        }

        if (*eq) {
            const lh::ModelConfig model = lh::load_model_config(eq_model);
            lh::EngineConfig engine = lh::load_engine_config(eq_engine);
            eq_over.apply(engine);
            const lh::EquivalenceReport report = lh::run_equivalence(model, engine, eq_params);
            write_json(eq_out, "equivalence.json", report.to_json());
            std::cout << "max_abs_diff " << report.max_abs_diff << " tokens_match "
                      << (report.tokens_match ? "true" : "false") << " -> " << (report.pass ? "PASS" : "FAIL")
                      << '\n';
            return report.pass ? kPass : kAssertionFailed;
        }

        if (*passkey) {
            pk.target = pk_target;
            pk.policy = lh::parse_policy(pk_policy);
            pk.residency = lh::ResidencyPolicy::parse(pk_residency);
            const lh::PasskeyReport report = lh::run_passkey(pk);
            print_warnings(report.warnings);
            write_json(pk_out, "metrics.json", report.to_json());
            std::cout << report.to_json().dump(2) << '\n';
            return kPass;
        }

        if (*ablate) {
            ab.policies.clear();
            for (const std::string& tag : split_list(ab_policies)) {
                ab.policies.push_back(lh::parse_policy(tag));
            }
            const lh::AblationReport report = lh::run_ablation(ab);
            for (const lh::AblationRow& row : report.policies) {
                std::cout << row.variant << "\tselected " << row.report.selected_rate << "\ttop1 "
                          << row.report.hit_rate_top1 << "\tcover " << row.report.cover_rate << "\tgini "
                          << row.report.gini << (row.degenerate ? "\t(degenerate)" : "") << '\n';
            }
            for (const lh::SweepRow& s : report.k_sweep) {
                std::cout << "K=" << s.k << "\tl=" << s.chunk_size << "\tloaded/unit " << s.loaded_rows_per_unit << '\n';
            }
            for (const lh::SweepRow& s : report.l_sweep) {
                std::cout << "l=" << s.chunk_size << "\tK=" << s.k << "\twindow " << s.window << "\tmax gathered "
                          << s.max_gathered_rows << '\n';
            }
            write_json(ab_out, "ablation.json", report.to_json());
            return report.k_sweep_exact && report.l_sweep_bounded ? kPass : kAssertionFailed;
        }

        if (*scaling) {
            const lh::ModelConfig model = lh::load_model_config(sc_model);
            lh::EngineConfig engine = lh::load_engine_config(sc_engine);
            sc_over.apply(engine);
            sc.residency = lh::ResidencyPolicy::parse(sc_residency);
            sc.n_list.clear();
            for (const std::string& item : split_list(sc_n_list)) {
                sc.n_list.push_back(std::stoull(item));
            }
            const lh::ScalingReport report = lh::run_scaling(model, engine, sc);
            for (const lh::ScalingRow& r : report.rows) {
                std::cout << "n=" << r.n << "\tgathered/step " << r.gathered_rows.front() << "\toracle/step "
                          << r.oracle_rows.front() << "\tsec/step " << r.seconds_per_step << '\n';
            }
            write_json(sc_out, "counters.json", report.to_json());
            write_json(sc_out, "timing.json", report.timing_json());
            const bool ok = report.gathered_constant && report.positions_in_range && report.positions_exact;
            return ok ? kPass : kAssertionFailed;
        }
    } catch (const lh::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfigError;
    } catch (const lh::CapacityError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kAssertionFailed;
    }
    return kPass;
}
