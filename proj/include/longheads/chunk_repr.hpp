#pragma once

#include <cstddef>
#include <span>

#include "json.hpp"
#include "longheads/matrix.hpp"

namespace longheads {

// Summary of one sealed chunk for one (layer, head).
struct ChunkRepr {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t chunk = 0;
    Vector c;    // representation: softmax(q_c K^T / sqrt(d)) K
    Vector q_c;  // chunk query, kept for diagnostics
};

// Bidirectional (unmasked) scaled attention over the chunk's own tokens,
// mean-pooled over rows. No positional encoding is involved.
Vector chunk_query(const Matrix& q, const Matrix& k, const Matrix& v);

// Weighted average of the key rows, weights = softmax of q_c against each key.
Vector chunk_representation(std::span<const double> q_c, const Matrix& k);

// Same as chunk_representation, also returning the softmax weights.
struct WeightedRepresentation {
    Vector c;
    Vector weights;

    nlohmann::json to_json() const;
};
WeightedRepresentation chunk_representation_debug(std::span<const double> q_c, const Matrix& k);

// Column-wise mean of the keys. Kept as the comparison baseline.
Vector mean_pool_baseline(const Matrix& k);

ChunkRepr compute_chunk_repr(std::size_t layer, std::size_t head, std::size_t chunk, const Matrix& q, const Matrix& k,
                             const Matrix& v);

}  // namespace longheads
