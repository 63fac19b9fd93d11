#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "longheads/analysis.hpp"
#include "longheads/config.hpp"
#include "longheads/kv_cache.hpp"

namespace longheads {

// Seeded uniform prompt over the vocabulary.
TokenSequence random_prompt(std::size_t n, std::size_t vocab_size, std::uint64_t seed);

void write_text_file(const std::filesystem::path& path, const std::string& text);

// ---- equivalence ----------------------------------------------------------

struct EquivalenceParams {
    std::size_t n = 512;
    std::size_t steps = 32;
    std::uint64_t seed = 0;
};

struct EquivalenceReport {
    double max_abs_diff = 0.0;  // over prompt rows and every decode step
    bool tokens_match = false;
    std::vector<Token> tokens;         // engine's greedy continuation
    std::vector<Token> oracle_tokens;  // argmax of the oracle rows
    bool pass = false;
    nlohmann::json to_json() const;
};

// Throws ConfigError unless the whole run stays saturated: n + steps <= L and
// at most k sealed chunks are visible to any query.
EquivalenceReport run_equivalence(const ModelConfig& model, const EngineConfig& engine, const EquivalenceParams& params);

// ---- passkey --------------------------------------------------------------

struct PasskeyCommandParams {
    std::size_t m = 64;
    std::optional<std::size_t> target;  // random in [1, m-2] per trial when unset
    double gap = 10.0;
    std::size_t k = 8;
    std::size_t chunk_size = 16;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t trials = 50;
    Policy policy = Policy::TopK;
    std::uint64_t seed = 0;
    ResidencyPolicy residency = ResidencyPolicy::all_offloaded();
};

struct PasskeyReport {
    PasskeyCommandParams params;
    double hit_rate_top1 = 0.0;  // mean over trials
    double hit_rate_top5 = 0.0;
    double selected_rate = 0.0;       // target inside P, mean over trials
    double selected_rate_sd = 0.0;    // sample sd of the per-trial rates
    double retrieval_success = 0.0;   // trials where every unit selected the target
    double cover_rate = 0.0;          // pooled over all trials
    double gini = 0.0;
    std::uint64_t loaded_rows_per_step = 0;  // max over trials
    std::size_t max_gathered_rows = 0;
    std::vector<std::size_t> targets;
    std::vector<double> per_trial_selected;
    std::vector<std::string> warnings;
    nlohmann::json to_json() const;
};

PasskeyReport run_passkey(const PasskeyCommandParams& params);

// ---- ablation -------------------------------------------------------------

struct AblationParams {
    std::vector<Policy> policies{Policy::TopK, Policy::Random, Policy::LastK, Policy::NoFirst,
                                 Policy::FixHead, Policy::FixLayer, Policy::FixHeadAndLayer};
    PasskeyCommandParams base;
    std::vector<std::size_t> k_sweep{4, 8, 16};
    std::vector<std::size_t> l_sweep{128, 256, 512};
    std::size_t fixed_window = 2048;
};

struct AblationRow {
    std::string variant;
    PasskeyReport report;
    bool degenerate = false;
    std::string note;
};

struct SweepRow {
    std::size_t k = 0;
    std::size_t chunk_size = 0;
    std::size_t window = 0;
    std::uint64_t loaded_rows_per_unit = 0;  // per decode step
    std::size_t max_gathered_rows = 0;
};

struct AblationReport {
    std::vector<AblationRow> policies;
    std::vector<SweepRow> k_sweep;
    std::vector<SweepRow> l_sweep;
    bool k_sweep_exact = false;  // loaded rows == k*l for every K
    bool l_sweep_bounded = false;  // identical k*l and gathers within it
    nlohmann::json to_json() const;
};

AblationReport run_ablation(const AblationParams& params);

// ---- scaling --------------------------------------------------------------

struct ScalingParams {
    std::vector<std::size_t> n_list{1024, 4096, 16384};
    std::size_t steps = 4;
    std::uint64_t seed = 0;
    ResidencyPolicy residency = ResidencyPolicy::all_offloaded();
};

struct ScalingRow {
    std::size_t n = 0;
    std::vector<std::uint64_t> gathered_rows;       // per decode step
    std::vector<std::uint64_t> loaded_rows;         // per decode step
    std::vector<std::uint64_t> attended_rows;       // per decode step
    std::vector<std::uint64_t> oracle_rows;         // full attention, per decode step
    std::vector<std::size_t> query_positions;       // per decode step
    std::vector<std::size_t> recent_lens;           // per decode step, before the token
    std::size_t max_rotary_position = 0;
    double seconds_per_step = 0.0;                  // wall time, never asserted
};

struct ScalingReport {
    std::vector<ScalingRow> rows;
    bool gathered_constant = false;
    bool positions_in_range = false;  // no rotary position >= L
    bool positions_exact = false;     // query position == k*l + recent_len
    // Deterministic part only; wall times are kept in timing_json().
    nlohmann::json to_json() const;
    nlohmann::json timing_json() const;
};

ScalingReport run_scaling(const ModelConfig& model, const EngineConfig& engine, const ScalingParams& params);

// ---- run descriptor -------------------------------------------------------

// A plain encode + greedy decode run whose outputs are written to `out`:
// tokens.txt, trace.json, counters.json, heatmap.csv (+ heatmap.json) and
// metrics.json.
struct RunDescriptor {
    std::string model_config;   // path, empty for defaults
    std::string engine_config;  // path, empty for defaults
    std::size_t n = 256;
    std::size_t steps = 16;
    std::uint64_t seed = 0;
    ResidencyPolicy residency = ResidencyPolicy::all_hot();
    std::string out = "out";

    // Unknown fields are rejected; paths must exist.
    static RunDescriptor from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct RunSummary {
    std::vector<Token> generated;
    MetricsReport metrics;
};

RunSummary run_descriptor(const ModelConfig& model, const EngineConfig& engine, const RunDescriptor& descriptor);

// Loads the configs named by a descriptor (defaults when empty).
ModelConfig load_model_config(const std::string& path);
EngineConfig load_engine_config(const std::string& path);

}  // namespace longheads
