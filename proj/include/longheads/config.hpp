#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace longheads {

// Raised for any configuration that violates a documented invariant.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a selection plus recent region cannot be laid out inside the
// pre-training length.
class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_head = 16;
    std::size_t d_model = 64;
    std::size_t vocab_size = 64;
    std::size_t pretrain_length = 1024;
    std::uint64_t seed = 0;

    // Throws ConfigError when a field is zero, d_head is odd, or
    // d_model != n_heads * d_head.
    void validate() const;
};

enum class Policy {
    TopK,
    Random,
    LastK,
    NoFirst,
    FixHead,
    FixLayer,
    FixHeadAndLayer,
};

std::string_view to_string(Policy policy);
Policy parse_policy(std::string_view tag);

struct EngineConfig {
    std::size_t chunk_size = 64;
    std::size_t num_selected = 8;
    Policy policy = Policy::TopK;
    std::uint64_t seed = 0;

    std::size_t attention_window() const { return chunk_size * num_selected; }

    void validate() const;
    // Checks the pairing with a model: k*l < L, L >= 2l, and room for the
    // recent region so that k*l + l <= L.
    void validate_against(const ModelConfig& model) const;
};

// JSON binding. Unknown fields are rejected with ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& config);
EngineConfig engine_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EngineConfig& config);

// Reads and parses a JSON file. Parse failures become ConfigError carrying
// the parser's line/column message.
nlohmann::json load_json_file(const std::string& path);

}  // namespace longheads
