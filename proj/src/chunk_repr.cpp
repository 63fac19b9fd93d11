#include "longheads/chunk_repr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace longheads {

namespace {

void require_nonempty(const Matrix& m, const char* what) {
    if (m.rows() == 0 || m.cols() == 0) {
        throw std::invalid_argument(std::string(what) + ": empty chunk");
    }
}

// Softmax of (query . key_r) / sqrt(d) over the rows of `keys`.
Vector softmax_weights(std::span<const double> query, const Matrix& keys) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
    Vector w(keys.rows());
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < keys.rows(); ++r) {
        w[r] = dot(query, keys.row(r)) * scale;
        max_score = std::max(max_score, w[r]);
    }
    double denom = 0.0;
    for (double& x : w) {
        x = std::exp(x - max_score);
        denom += x;
    }
    for (double& x : w) {
        x /= denom;
    }
    return w;
}

Vector weighted_rows(std::span<const double> weights, const Matrix& rows) {
    Vector out(rows.cols(), 0.0);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        const auto row = rows.row(r);
        for (std::size_t c = 0; c < rows.cols(); ++c) {
            out[c] += weights[r] * row[c];
        }
    }
    return out;
}

}  // namespace

Vector chunk_query(const Matrix& q, const Matrix& k, const Matrix& v) {
    require_nonempty(q, "chunk_query");
    if (q.rows() != k.rows() || k.rows() != v.rows()) {
        throw std::invalid_argument("chunk_query: Q, K, V row counts differ");
    }
    if (q.cols() != k.cols()) {
        throw std::invalid_argument("chunk_query: Q and K widths differ");
    }
    Vector mean(v.cols(), 0.0);
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const Vector o = weighted_rows(softmax_weights(q.row(r), k), v);
        for (std::size_t c = 0; c < mean.size(); ++c) {
            mean[c] += o[c];
        }
    }
    for (double& x : mean) {
        x /= static_cast<double>(q.rows());
    }
    return mean;
}

WeightedRepresentation chunk_representation_debug(std::span<const double> q_c, const Matrix& k) {
    require_nonempty(k, "chunk_representation");
    if (q_c.size() != k.cols()) {
        throw std::invalid_argument("chunk_representation: query width does not match keys");
    }
    WeightedRepresentation out;
    out.weights = softmax_weights(q_c, k);
    out.c = weighted_rows(out.weights, k);
    return out;
}

Vector chunk_representation(std::span<const double> q_c, const Matrix& k) {
    return chunk_representation_debug(q_c, k).c;
}

nlohmann::json WeightedRepresentation::to_json() const {
    return {{"c", c}, {"weights", weights}};
}

Vector mean_pool_baseline(const Matrix& k) {
    require_nonempty(k, "mean_pool_baseline");
    Vector mean(k.cols(), 0.0);
    for (std::size_t r = 0; r < k.rows(); ++r) {
        const auto row = k.row(r);
        for (std::size_t c = 0; c < k.cols(); ++c) {
            mean[c] += row[c];
        }
    }
    for (double& x : mean) {
        x /= static_cast<double>(k.rows());
    }
    return mean;
}

ChunkRepr compute_chunk_repr(std::size_t layer, std::size_t head, std::size_t chunk, const Matrix& q, const Matrix& k,
                             const Matrix& v) {
    ChunkRepr r{layer, head, chunk, {}, chunk_query(q, k, v)};
    r.c = chunk_representation(r.q_c, k);
    return r;
}

}  // namespace longheads
