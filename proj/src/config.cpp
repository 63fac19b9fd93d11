#include "longheads/config.hpp"

#include <array>
#include <fstream>
#include <set>

namespace longheads {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, std::string_view what) {
    if (!j.is_object()) {
        throw ConfigError(std::string(what) + ": expected a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError(std::string(what) + ": unknown field '" + key + "'");
        }
    }
}

template <typename T>
T required(const nlohmann::json& j, const char* key, std::string_view what) {
    if (!j.contains(key)) {
        throw ConfigError(std::string(what) + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(what) + ": field '" + key + "': " + e.what());
    }
}

template <typename T>
T optional_field(const nlohmann::json& j, const char* key, T fallback, std::string_view what) {
    return j.contains(key) ? required<T>(j, key, what) : fallback;
}

constexpr std::array<std::pair<Policy, std::string_view>, 7> kPolicyNames{{
    {Policy::TopK, "top-k"},
    {Policy::Random, "random"},
    {Policy::LastK, "last-k"},
    {Policy::NoFirst, "no-first"},
    {Policy::FixHead, "fix-head"},
    {Policy::FixLayer, "fix-layer"},
    {Policy::FixHeadAndLayer, "fix-head-and-layer"},
}};

}  // namespace

void ModelConfig::validate() const {
    if (n_layers == 0 || n_heads == 0 || d_head == 0 || vocab_size == 0 || pretrain_length == 0) {
        throw ConfigError("ModelConfig: all counts must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("ModelConfig: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (d_model != n_heads * d_head) {
        throw ConfigError("ModelConfig: d_model must equal n_heads * d_head");
    }
    if (d_head % 2 != 0) {
        throw ConfigError("ModelConfig: d_head must be even for rotary encoding");
    }
}

std::string_view to_string(Policy policy) {
    for (const auto& [p, name] : kPolicyNames) {
        if (p == policy) {
            return name;
        }
    }
    return "unknown";
}

Policy parse_policy(std::string_view tag) {
    for (const auto& [p, name] : kPolicyNames) {
        if (name == tag) {
            return p;
        }
    }
    throw ConfigError("unknown selection policy '" + std::string(tag) + "'");
}

void EngineConfig::validate() const {
    if (chunk_size == 0) {
        throw ConfigError("EngineConfig: chunk_size must be positive");
    }
    if (num_selected < 2) {
        throw ConfigError("EngineConfig: num_selected must be at least 2 (first and last chunks are mandatory)");
    }
}

void EngineConfig::validate_against(const ModelConfig& model) const {
    validate();
    const std::size_t L = model.pretrain_length;
    if (attention_window() >= L) {
        throw ConfigError("EngineConfig: k*l = " + std::to_string(attention_window()) +
                          " must be below the pre-training length " + std::to_string(L));
    }
    if (L < 2 * chunk_size) {
        throw ConfigError("EngineConfig: pre-training length must be at least twice the chunk size");
    }
    if (attention_window() + chunk_size > L) {
        throw ConfigError("EngineConfig: k*l + l = " + std::to_string(attention_window() + chunk_size) +
                          " exceeds the pre-training length; the recent region would reach out-of-range positions");
    }
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    constexpr std::string_view what = "ModelConfig";
    reject_unknown(j, {"n_layers", "n_heads", "d_head", "d_model", "vocab_size", "pretrain_length", "seed"}, what);
    ModelConfig c;
    c.n_layers = required<std::size_t>(j, "n_layers", what);
    c.n_heads = required<std::size_t>(j, "n_heads", what);
    c.d_head = required<std::size_t>(j, "d_head", what);
    c.d_model = optional_field<std::size_t>(j, "d_model", c.n_heads * c.d_head, what);
    c.vocab_size = required<std::size_t>(j, "vocab_size", what);
    c.pretrain_length = required<std::size_t>(j, "pretrain_length", what);
    c.seed = optional_field<std::uint64_t>(j, "seed", 0, what);
    c.validate();
    return c;
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},       {"d_head", c.d_head},
            {"d_model", c.d_model},     {"vocab_size", c.vocab_size}, {"pretrain_length", c.pretrain_length},
            {"seed", c.seed}};
}

EngineConfig engine_config_from_json(const nlohmann::json& j) {
    constexpr std::string_view what = "EngineConfig";
    reject_unknown(j, {"chunk_size", "num_selected", "attention_window", "policy", "seed"}, what);
    EngineConfig c;
    c.chunk_size = required<std::size_t>(j, "chunk_size", what);
    c.num_selected = required<std::size_t>(j, "num_selected", what);
    c.policy = parse_policy(optional_field<std::string>(j, "policy", "top-k", what));
    c.seed = optional_field<std::uint64_t>(j, "seed", 0, what);
    if (j.contains("attention_window") &&
        required<std::size_t>(j, "attention_window", what) != c.attention_window()) {
        throw ConfigError("EngineConfig: attention_window must equal num_selected * chunk_size");
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const EngineConfig& c) {
    return {{"chunk_size", c.chunk_size},
            {"num_selected", c.num_selected},
            {"attention_window", c.attention_window()},
            {"policy", std::string(to_string(c.policy))},
            {"seed", c.seed}};
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open '" + path + "'");
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace longheads
