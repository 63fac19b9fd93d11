#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "longheads/chunk_repr.hpp"
#include "longheads/config.hpp"

namespace longheads {

// Chunks one (layer, head) attends for one query token.
struct SelectionSet {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query_token = 0;
    std::vector<std::size_t> chunks;      // strictly ascending
    std::vector<std::size_t> candidates;  // ranked pool (non-mandatory chunks), ascending
    std::vector<double> scores;           // q . c for each candidate

    friend bool operator==(const SelectionSet&, const SelectionSet&) = default;
};

struct SelectionKey {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query_token = 0;
};

// Chooses P for one query from the sealed chunks 0..visible.size()-1, where
// visible[i] is the representation of chunk i and the last visible chunk is
// the mandatory local chunk.
//
//   top-k (and the fix-* variants): {0} + best k-2 candidates + {last}
//   random:   {0} + k-2 candidates drawn without replacement + {last}
//   last-k:   {0} + the k-2 lowest-scoring candidates + {last}
//   no-first: best k-1 of chunks 0..last-1 + {last}
//
// Ranking ties go to the lower chunk index. Scores use the unrotated query.
// Throws std::invalid_argument for k < 2, empty or mismatched vectors.
SelectionSet select(std::span<const double> query, std::span<const ChunkRepr> visible, std::size_t k, Policy policy,
                    std::mt19937_64& rng, SelectionKey key = {});

enum class HeadConstraint {
    None,
    FixHead,
    FixLayer,
    FixHeadAndLayer,
};

HeadConstraint constraint_for(Policy policy);

// Replaces the chunk set of `base` with the reference unit's set. The
// reference is head 0 of the same layer (fix-head), the same head in layer 0
// (fix-layer) or head 0 of layer 0 (fix-head-and-layer). Throws
// std::invalid_argument when a constrained mode gets no reference.
SelectionSet apply_head_constraints(const SelectionSet& base, HeadConstraint mode, const SelectionSet* reference);

// Deterministic per-(layer, head, step) stream for the random policy.
std::mt19937_64 selection_rng(std::uint64_t seed, std::size_t layer, std::size_t head, std::size_t step);

// Runs `select` under a policy for every (layer, head) unit of a run and
// applies the fix-* constraints. Reference units (head 0, layer 0) must be
// chosen before the units that copy them for the same query token.
class SelectionPlanner {
public:
    SelectionPlanner(std::size_t k, Policy policy, std::uint64_t seed);

    SelectionSet choose(SelectionKey key, std::span<const double> query, std::span<const ChunkRepr> visible);

private:
    std::size_t k_;
    Policy policy_;
    std::uint64_t seed_;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<std::size_t>> references_;
};

}  // namespace longheads
