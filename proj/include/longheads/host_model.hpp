#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "longheads/config.hpp"
#include "longheads/matrix.hpp"

namespace longheads {

using Token = std::uint32_t;

struct TokenSequence {
    std::vector<Token> tokens;

    std::size_t size() const { return tokens.size(); }
    // Throws std::invalid_argument if any token is >= vocab_size.
    void validate(std::size_t vocab_size) const;
};

// Per-head projections for a run of tokens. K is stored before rotation;
// positions are assigned only at attention time.
struct HeadStates {
    std::size_t layer = 0;
    std::size_t head = 0;
    Matrix q;
    Matrix k;
    Matrix v;
};

// Rotary position table covering positions [0, max_positions). Uses the
// half-split pairing (dim i rotates with dim i + d/2).
class Rotary {
public:
    Rotary(std::size_t max_positions, std::size_t dim, double base = 10000.0);

    std::size_t max_positions() const { return max_positions_; }
    std::size_t dim() const { return dim_; }

    // Rotates one row in place. Throws std::out_of_range for position >=
    // max_positions.
    void apply_row(std::span<double> row, std::size_t position) const;

    Matrix apply(const Matrix& states, std::span<const std::size_t> positions) const;

private:
    std::size_t max_positions_;
    std::size_t dim_;
    std::vector<double> cos_;
    std::vector<double> sin_;
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;  // d_model x d_model
    Vector bq, bk, bv, bo;
    Matrix w_up;             // d_model x 4*d_model
    Vector b_up;
    Matrix w_down;           // 4*d_model x d_model
    Vector b_down;
};

// Untrained decoder-only transformer: token embedding, pre-norm blocks of
// multi-head attention + GELU MLP, final norm and an untied output head.
// Immutable after construction.
class HostModel {
public:
    explicit HostModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const Rotary& rotary() const { return rotary_; }
    const LayerWeights& layer(std::size_t i) const { return layers_.at(i); }

    Matrix embed(std::span<const Token> tokens) const;
    // Parameter-free RMS normalisation, row-wise.
    Matrix norm(const Matrix& hidden) const;
    std::vector<HeadStates> project_qkv(std::size_t layer, const Matrix& normed) const;
    // hidden += concat(head_outputs) * Wo + bo
    void add_attention_output(std::size_t layer, std::span<const Matrix> head_outputs, Matrix& hidden) const;
    // hidden += MLP(norm(hidden))
    void add_mlp(std::size_t layer, Matrix& hidden) const;
    Matrix logits(const Matrix& hidden) const;

    std::uint64_t weight_checksum() const;

private:
    ModelConfig config_;
    Rotary rotary_;
    Matrix embedding_;  // vocab x d_model
    std::vector<LayerWeights> layers_;
    Matrix w_out_;       // d_model x vocab
};

HostModel build_model(const ModelConfig& config);

// hidden (tokens x d_model) -> one HeadStates per head, no rotation.
std::vector<HeadStates> project_qkv(const HostModel& model, std::size_t layer, const Matrix& hidden);

Matrix apply_rotary(const HostModel& model, const Matrix& states, std::span<const std::size_t> positions);

// Vanilla causal attention over the whole sequence at positions 0..n-1.
// Throws std::invalid_argument for an empty sequence and CapacityError for
// n > pretrain_length.
Matrix full_attention_forward(const HostModel& model, const TokenSequence& seq);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace longheads
