#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "longheads/chunk_repr.hpp"
#include "longheads/matrix.hpp"

namespace longheads {

enum class Residency { Hot, Offloaded };

struct ResidencyPolicy {
    enum class Kind { AllHot, AllOffloaded, Budget };

    Kind kind = Kind::AllHot;
    std::size_t max_hot_tokens = 0;  // per (layer, head), Budget only

    static ResidencyPolicy all_hot() { return {Kind::AllHot, 0}; }
    static ResidencyPolicy all_offloaded() { return {Kind::AllOffloaded, 0}; }
    static ResidencyPolicy budget(std::size_t max_hot_tokens) { return {Kind::Budget, max_hot_tokens}; }

    // "hot", "offload" or "budget:N".
    static ResidencyPolicy parse(std::string_view text);
    std::string to_string() const;
};

// Copyable relaxed atomic counter.
class Counter {
public:
    Counter() = default;
    Counter(const Counter& other) : value_(other.load()) {}
    Counter& operator=(const Counter& other) {
        value_.store(other.load(), std::memory_order_relaxed);
        return *this;
    }

    std::uint64_t load() const { return value_.load(std::memory_order_relaxed); }
    void add(std::uint64_t n) { value_.fetch_add(n, std::memory_order_relaxed); }
    void set(std::uint64_t n) { value_.store(n, std::memory_order_relaxed); }
    void reset() { set(0); }
    void raise_to(std::uint64_t n) {
        std::uint64_t cur = load();
        while (cur < n && !value_.compare_exchange_weak(cur, n, std::memory_order_relaxed)) {
        }
    }

private:
    std::atomic<std::uint64_t> value_{0};
};

struct CacheCounters {
    std::uint64_t gathered_rows_this_step = 0;
    std::uint64_t tokens_loaded_this_step = 0;
    std::uint64_t gathered_rows_total = 0;
    std::uint64_t tokens_loaded_total = 0;
    std::uint64_t hot_tokens = 0;
    std::uint64_t peak_hot_tokens = 0;
    std::uint64_t evictions = 0;

    nlohmann::json to_json() const;
};

// Marks gathered rows that come from the recent buffer.
inline constexpr std::size_t kRecentRow = std::numeric_limits<std::size_t>::max();

struct GatherResult {
    Matrix keys;
    Matrix values;
    std::vector<std::size_t> row_chunk;  // chunk id per row, kRecentRow for recent rows
    std::size_t loaded_rows = 0;          // rows fetched from the offload tier
};

struct EvictionEvent {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t chunk = 0;

    friend bool operator==(const EvictionEvent&, const EvictionEvent&) = default;
};

// Per-(layer, head) chunked KV store. Sealed chunks become immutable slabs
// with a representation; slabs may live in the hot tier or in the offload
// tier (an in-process byte store). Representations are always hot.
class KvCache {
public:
    KvCache(std::size_t n_layers, std::size_t n_heads, std::size_t d_head, std::size_t chunk_size,
            std::size_t num_selected);

    std::size_t chunk_size() const { return chunk_size_; }

    // Appends one token's unrotated states to the recent buffer. When the
    // buffer reaches chunk_size it is sealed: the representation is computed,
    // the Q rows are dropped and the new chunk id is returned.
    std::optional<std::size_t> append_token(std::size_t layer, std::size_t head, std::span<const double> q,
                                            std::span<const double> k, std::span<const double> v);

    // Concatenates the slabs of `chunks` (in the given order) and optionally
    // the recent buffer. Offloaded slabs are fetched; under a budget policy
    // they are promoted and least-recently-gathered slabs are evicted.
    // Throws std::out_of_range for an unknown chunk id.
    GatherResult gather(std::size_t layer, std::size_t head, std::span<const std::size_t> chunks, bool recent);

    // Throws ConfigError for a budget below k*l tokens.
    void set_residency(const ResidencyPolicy& policy);
    const ResidencyPolicy& residency_policy() const { return policy_; }

    // Resets the per-step counters.
    void begin_step();
    CacheCounters counters() const;
    const std::vector<EvictionEvent>& evictions() const { return evictions_; }

    std::span<const ChunkRepr> representations(std::size_t layer, std::size_t head) const;
    std::size_t sealed_chunks(std::size_t layer, std::size_t head) const;
    std::size_t recent_len(std::size_t layer, std::size_t head) const;
    std::size_t stored_q_rows(std::size_t layer, std::size_t head) const;
    Residency residency(std::size_t layer, std::size_t head, std::size_t chunk) const;
    // Checksum of the slab contents, read from whichever tier holds them.
    std::uint64_t slab_checksum(std::size_t layer, std::size_t head, std::size_t chunk) const;

private:
    struct Slab {
        std::size_t rows = 0;
        Matrix k;  // empty while offloaded
        Matrix v;
        Residency residency = Residency::Hot;
        std::vector<std::byte> offloaded;
        std::uint64_t last_used = 0;
    };

    struct HeadStore {
        std::vector<Slab> slabs;
        std::vector<ChunkRepr> reprs;
        Matrix recent_q;
        Matrix recent_k;
        Matrix recent_v;
        std::uint64_t clock = 0;
        std::size_t hot_slab_rows = 0;
    };

    HeadStore& store(std::size_t layer, std::size_t head);
    const HeadStore& store(std::size_t layer, std::size_t head) const;
    const Slab& slab(std::size_t layer, std::size_t head, std::size_t chunk) const;

    void offload(HeadStore& hs, Slab& slab);
    void promote(HeadStore& hs, Slab& slab);
    void enforce_budget(HeadStore& hs, std::size_t layer, std::size_t head, std::span<const std::size_t> pinned);
    void note_hot_change();

    std::size_t n_layers_;
    std::size_t n_heads_;
    std::size_t d_head_;
    std::size_t chunk_size_;
    std::size_t num_selected_;
    ResidencyPolicy policy_;
    std::vector<HeadStore> stores_;
    std::vector<EvictionEvent> evictions_;

    Counter gathered_step_;
    Counter loaded_step_;
    Counter gathered_total_;
    Counter loaded_total_;
    Counter hot_tokens_;
    Counter peak_hot_;
};

}  // namespace longheads
