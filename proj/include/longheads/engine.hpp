#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"
#include "longheads/chunker.hpp"
#include "longheads/config.hpp"
#include "longheads/host_model.hpp"
#include "longheads/kv_cache.hpp"
#include "longheads/selector.hpp"

namespace longheads {

enum class Phase { Encode, Decode };

struct SelectionRecord {
    Phase phase = Phase::Decode;
    std::size_t step = 0;  // decode step, or the query token during encoding
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query_token = 0;
    std::vector<std::size_t> chunks;
    std::vector<std::size_t> candidates;
    std::vector<double> scores;
};

struct RunMetadata {
    std::size_t n = 0;  // prompt length
    std::size_t chunk_size = 0;
    std::size_t num_selected = 0;
    Policy policy = Policy::TopK;
    std::uint64_t seed = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
};

struct SelectionTrace {
    RunMetadata meta;
    std::vector<SelectionRecord> records;

    nlohmann::json to_json() const;
};

// Instrumentation of every rotary application and attention call.
struct EngineStats {
    std::uint64_t rotary_applications = 0;
    std::size_t max_rotary_position = 0;
    std::uint64_t attention_calls = 0;
    std::size_t max_attended_rows = 0;  // keys seen by one query, own key included

    nlohmann::json to_json() const;
};

struct StepCounters {
    std::size_t step = 0;
    std::uint64_t gathered_rows = 0;  // summed over layers and heads
    std::uint64_t loaded_rows = 0;    // fetched from the offload tier
    std::uint64_t attended_rows = 0;  // gathered rows plus the current token, summed
    std::size_t recent_len = 0;       // unsealed tokens before this step's token
    std::size_t query_position = 0;   // largest remapped query position of the step

    nlohmann::json to_json() const;
};

struct EngineOptions {
    bool trace_encode = false;
    bool trace_decode = true;
};

// Chunk-selecting inference over a HostModel. Every token attends the
// selected sealed chunks of its (layer, head) plus the unsealed tail of the
// stream (its own chunk's causal prefix), at remapped positions.
class Engine {
public:
    Engine(std::shared_ptr<const HostModel> model, const EngineConfig& config, EngineOptions options = {});

    // Processes a prompt on a fresh engine and returns its logits (n x vocab).
    Matrix encode(const TokenSequence& seq);
    // Feeds one token and returns the logits for the next position.
    Vector decode_step(Token token);
    // Greedy continuation of `steps` tokens. Each emitted token is fed back.
    std::vector<Token> generate(std::size_t steps);
    // Plain causal attention over `seq`, for equivalence checks.
    Matrix oracle_forward(const TokenSequence& seq) const;

    void set_residency(const ResidencyPolicy& policy) { cache_.set_residency(policy); }

    const HostModel& model() const { return *model_; }
    const EngineConfig& config() const { return config_; }
    const KvCache& cache() const { return cache_; }
    const SelectionTrace& trace() const { return trace_; }
    const EngineStats& stats() const { return stats_; }
    const ChunkLayout& layout() const { return layout_; }
    std::size_t steps_done() const { return steps_done_; }
    const std::vector<StepCounters>& step_counters() const { return step_counters_; }
    const std::vector<Token>& tokens() const { return tokens_; }

private:
    void rotate(std::span<double> row, std::size_t position);
    Vector attend(std::span<const double> query, std::span<const Matrix* const> keys,
                  std::span<const Matrix* const> values);
    void record(Phase phase, std::size_t step, const SelectionSet& set);

    std::shared_ptr<const HostModel> model_;
    EngineConfig config_;
    EngineOptions options_;
    KvCache cache_;
    ChunkLayout layout_;
    SelectionPlanner planner_;
    SelectionTrace trace_;
    EngineStats stats_;
    std::vector<StepCounters> step_counters_;
    std::vector<Token> tokens_;
    Vector last_logits_;
    std::size_t steps_done_ = 0;
};

}  // namespace longheads
