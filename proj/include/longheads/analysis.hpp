#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "longheads/engine.hpp"
#include "longheads/host_model.hpp"
#include "longheads/kv_cache.hpp"

namespace longheads {

struct MetricsReport {
    double cover_rate = 0.0;
    double gini = 0.0;
    std::optional<double> hit_rate_top1;
    std::optional<double> hit_rate_top5;
    std::vector<std::uint64_t> selection_counts;

    // Hit rates are written only when present.
    nlohmann::json to_json() const;
};

// Number of records selecting each chunk 0..m-1. Chunks >= m are ignored.
std::vector<std::uint64_t> selection_counts(const SelectionTrace& trace, std::size_t m);

// Fraction of the m chunks selected by at least one record.
double cover_rate(const SelectionTrace& trace, std::size_t m);

// Mean-absolute-difference Gini: sum_i sum_j |x_i - x_j| / (2 m^2 mean).
double gini(std::span<const double> counts);
double gini(std::span<const std::uint64_t> counts);

// Fraction of records whose `top` best-scoring candidates (ties to the lower
// chunk index) include `target`. Throws std::invalid_argument when a record
// lacks scores for its candidates.
double hit_rate(const SelectionTrace& trace, std::size_t target, std::size_t top);

MetricsReport compute_metrics(const SelectionTrace& trace, std::size_t m, std::optional<std::size_t> target);

// Rows = (layer, head), columns = chunk ids, cells = selection counts.
std::string heatmap_csv(const SelectionTrace& trace, std::size_t m);
// Writes <csv_path> and, next to it, a .json file with the run metadata.
void export_heatmap(const SelectionTrace& trace, std::size_t m, const std::string& csv_path);

// Synthetic retrieval instance built directly at the key-state level: every
// (layer, head) gets seeded Gaussian Q/K/V for m chunks of chunk_size tokens
// and a unit probe query; the target chunk's keys are shifted by gap * probe.
// Since the shift is shared by every key of the chunk, its softmax weights are
// unchanged and probe . c_target gains exactly `gap`.
struct PasskeyParams {
    std::size_t m = 64;
    std::size_t target = 1;
    double gap = 10.0;
    std::uint64_t noise_seed = 0;
    std::size_t chunk_size = 16;
    std::size_t d_head = 16;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    double noise_scale = 0.5;
};

struct PasskeyInstance {
    PasskeyParams params;
    std::vector<HeadStates> heads;  // n_layers * n_heads, each m*chunk_size rows
    std::vector<Vector> probes;     // one unit query per (layer, head)
    bool mandatory_collision = false;  // target is the first or last chunk

    const HeadStates& unit(std::size_t layer, std::size_t head) const { return heads[layer * params.n_heads + head]; }
    const Vector& probe(std::size_t layer, std::size_t head) const { return probes[layer * params.n_heads + head]; }
};

// Throws std::invalid_argument for m < 3 or target >= m. A target on a
// mandatory chunk is allowed and flagged.
PasskeyInstance build_passkey(const PasskeyParams& params);

struct PasskeyRunOptions {
    std::size_t k = 8;
    Policy policy = Policy::TopK;
    std::uint64_t seed = 0;
    ResidencyPolicy residency = ResidencyPolicy::all_offloaded();
    std::size_t queries = 1;
};

struct PasskeyTrialResult {
    SelectionTrace trace;
    std::vector<std::uint64_t> loaded_rows_per_step;    // summed over units
    std::vector<std::uint64_t> gathered_rows_per_step;  // summed over units
    std::size_t max_gathered_rows = 0;                  // largest single gather
    std::size_t max_query_position = 0;
};

// Streams the instance through a KvCache (sealing computes the chunk
// representations), then for each query step selects, gathers and remaps for
// every (layer, head) with the probe as the query.
PasskeyTrialResult run_passkey_trial(const PasskeyInstance& instance, const PasskeyRunOptions& options);

// Fraction of records whose selected set contains `target`.
double selected_rate(const SelectionTrace& trace, std::size_t target);

}  // namespace longheads
