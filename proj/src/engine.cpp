#include "longheads/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "longheads/remapper.hpp"

namespace longheads {

namespace {

std::string_view phase_name(Phase phase) {
    return phase == Phase::Encode ? "encode" : "decode";
}

const EngineConfig& validated(const EngineConfig& config, const HostModel& model) {
    config.validate_against(model.config());
    return config;
}

}  // namespace

nlohmann::json SelectionTrace::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const SelectionRecord& r : records) {
        recs.push_back({{"phase", phase_name(r.phase)},
                        {"step", r.step},
                        {"layer", r.layer},
                        {"head", r.head},
                        {"query_token", r.query_token},
                        {"chunks", r.chunks},
                        {"candidates", r.candidates},
                        {"scores", r.scores}});
    }
    return {{"meta",
             {{"n", meta.n},
              {"chunk_size", meta.chunk_size},
              {"num_selected", meta.num_selected},
              {"policy", std::string(to_string(meta.policy))},
              {"seed", meta.seed},
              {"n_layers", meta.n_layers},
              {"n_heads", meta.n_heads}}},
            {"records", std::move(recs)}};
}

nlohmann::json EngineStats::to_json() const {
    return {{"rotary_applications", rotary_applications},
            {"max_rotary_position", max_rotary_position},
            {"attention_calls", attention_calls},
            {"max_attended_rows", max_attended_rows}};
}

nlohmann::json StepCounters::to_json() const {
    return {{"step", step}, {"gathered_rows", gathered_rows}, {"loaded_rows", loaded_rows},
            {"attended_rows", attended_rows},
            {"recent_len", recent_len}, {"query_position", query_position}};
}

Engine::Engine(std::shared_ptr<const HostModel> model, const EngineConfig& config, EngineOptions options)
    : model_(std::move(model)),
      config_(validated(config, *model_)),
      options_(options),
      cache_(model_->config().n_layers, model_->config().n_heads, model_->config().d_head, config_.chunk_size,
             config_.num_selected),
      layout_(0, config.chunk_size),
      planner_(config_.num_selected, config_.policy, config_.seed) {
    const ModelConfig& mc = model_->config();
    trace_.meta = {0, config_.chunk_size, config_.num_selected, config_.policy, config_.seed, mc.n_layers, mc.n_heads};
}

void Engine::rotate(std::span<double> row, std::size_t position) {
    model_->rotary().apply_row(row, position);
    ++stats_.rotary_applications;
    stats_.max_rotary_position = std::max(stats_.max_rotary_position, position);
}

Vector Engine::attend(std::span<const double> query, std::span<const Matrix* const> keys,
                      std::span<const Matrix* const> values) {
    const std::size_t d = query.size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::size_t rows = 0;
    double max_score = -std::numeric_limits<double>::infinity();
    std::vector<double> scores;
    for (const Matrix* block : keys) {
        for (std::size_t r = 0; r < block->rows(); ++r) {
            scores.push_back(dot(query, block->row(r)) * scale);
            max_score = std::max(max_score, scores.back());
        }
        rows += block->rows();
    }
    double denom = 0.0;
    for (double& s : scores) {
        s = std::exp(s - max_score);
        denom += s;
    }
    Vector out(d, 0.0);
    std::size_t i = 0;
    for (const Matrix* block : values) {
        for (std::size_t r = 0; r < block->rows(); ++r, ++i) {
            const double w = scores[i] / denom;
            const auto v = block->row(r);
            for (std::size_t c = 0; c < d; ++c) {
                out[c] += w * v[c];
            }
        }
    }
    ++stats_.attention_calls;
    stats_.max_attended_rows = std::max(stats_.max_attended_rows, rows);
    return out;
}

void Engine::record(Phase phase, std::size_t step, const SelectionSet& set) {
    if ((phase == Phase::Encode && !options_.trace_encode) || (phase == Phase::Decode && !options_.trace_decode)) {
        return;
    }
    trace_.records.push_back(
        {phase, step, set.layer, set.head, set.query_token, set.chunks, set.candidates, set.scores});
}

Matrix Engine::encode(const TokenSequence& seq) {
    if (seq.size() == 0) {
        throw std::invalid_argument("encode: empty sequence");
    }
    if (layout_.n() != 0) {
        throw std::logic_error("encode: engine already holds a sequence");
    }
    const ModelConfig& mc = model_->config();
    seq.validate(mc.vocab_size);
    const std::size_t n = seq.size();
    const std::size_t l = config_.chunk_size;
    const std::size_t L = mc.pretrain_length;
    const std::size_t dh = mc.d_head;

    Matrix hidden = model_->embed(seq.tokens);
    for (std::size_t layer = 0; layer < mc.n_layers; ++layer) {
        const auto heads = model_->project_qkv(layer, model_->norm(hidden));
        for (const HeadStates& hs : heads) {
            for (std::size_t t = 0; t < n; ++t) {
                cache_.append_token(layer, hs.head, hs.q.row(t), hs.k.row(t), hs.v.row(t));
            }
        }

        std::vector<Matrix> outputs(mc.n_heads, Matrix(n, dh));
        for (const HeadStates& hs : heads) {
            const std::size_t head = hs.head;
            const auto reprs = cache_.representations(layer, head);

            // Rotated rows of the current selection, reused while P is unchanged.
            std::vector<std::size_t> cached_chunks;
            bool have_cached = false;
            Matrix selected_keys(0, dh);
            Matrix selected_values(0, dh);
            // Rotated causal prefix of the token's own chunk.
            Matrix own_keys(0, dh);
            Matrix own_values(0, dh);
            std::size_t own_chunk = std::numeric_limits<std::size_t>::max();
            std::size_t own_base = 0;

            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t chunk = t / l;
                const std::size_t recent_len = t - chunk * l;
                std::vector<std::size_t> chunks;
                if (chunk > 0) {
                    SelectionSet set = planner_.choose({layer, head, t}, hs.q.row(t), reprs.first(chunk));
                    record(Phase::Encode, t, set);
                    chunks = std::move(set.chunks);
                }
                const PositionMap map = remap(chunks, ChunkLayout(t, l), recent_len, L);

                if (!have_cached || chunks != cached_chunks) {
                    GatherResult g = cache_.gather(layer, head, chunks, false);
                    for (std::size_t r = 0; r < g.keys.rows(); ++r) {
                        rotate(g.keys.row(r), r);
                    }
                    selected_keys = std::move(g.keys);
                    selected_values = std::move(g.values);
                    cached_chunks = chunks;
                    have_cached = true;
                }

                const std::size_t base = selected_keys.rows();
                if (own_chunk != chunk || own_base != base) {
                    own_keys = Matrix(0, dh);
                    own_values = Matrix(0, dh);
                    for (std::size_t r = chunk * l; r < t; ++r) {
                        Vector key(hs.k.row(r).begin(), hs.k.row(r).end());
                        rotate(key, base + (r - chunk * l));
                        own_keys.append_row(key);
                        own_values.append_row(hs.v.row(r));
                    }
                    own_chunk = chunk;
                    own_base = base;
                }
                Vector key(hs.k.row(t).begin(), hs.k.row(t).end());
                rotate(key, map.query_position);
                own_keys.append_row(key);
                own_values.append_row(hs.v.row(t));

                Vector query(hs.q.row(t).begin(), hs.q.row(t).end());
                rotate(query, map.query_position);
                const Matrix* key_blocks[] = {&selected_keys, &own_keys};
                const Matrix* value_blocks[] = {&selected_values, &own_values};
                const Vector out = attend(query, key_blocks, value_blocks);
                std::copy(out.begin(), out.end(), outputs[head].row(t).begin());
            }
        }
        model_->add_attention_output(layer, outputs, hidden);
        model_->add_mlp(layer, hidden);
    }

    tokens_ = seq.tokens;
    layout_ = ChunkLayout(n, l);
    trace_.meta.n = n;
    Matrix logits = model_->logits(hidden);
    const auto last = logits.row(n - 1);
    last_logits_.assign(last.begin(), last.end());
    return logits;
}

Vector Engine::decode_step(Token token) {
    const ModelConfig& mc = model_->config();
    if (token >= mc.vocab_size) {
        throw std::invalid_argument("decode_step: token outside the vocabulary");
    }
    const std::size_t position = layout_.n();
    const std::size_t dh = mc.d_head;
    const std::size_t L = mc.pretrain_length;
    cache_.begin_step();
    std::uint64_t attended = 0;
    std::size_t query_position = 0;
    const std::size_t recent_before = cache_.recent_len(0, 0);

    const Token input[] = {token};
    Matrix hidden = model_->embed(input);
    for (std::size_t layer = 0; layer < mc.n_layers; ++layer) {
        const auto heads = model_->project_qkv(layer, model_->norm(hidden));
        std::vector<Matrix> outputs;
        outputs.reserve(mc.n_heads);
        for (const HeadStates& hs : heads) {
            const std::size_t head = hs.head;
            const std::size_t sealed = cache_.sealed_chunks(layer, head);
            const std::size_t recent_len = cache_.recent_len(layer, head);
            std::vector<std::size_t> chunks;
            if (sealed > 0) {
                SelectionSet set =
                    planner_.choose({layer, head, position}, hs.q.row(0), cache_.representations(layer, head));
                record(Phase::Decode, steps_done_, set);
                chunks = std::move(set.chunks);
            }
            GatherResult g = cache_.gather(layer, head, chunks, true);
            const PositionMap map = remap(chunks, layout_, recent_len, L);
            if (g.keys.rows() != map.query_position) {
                throw std::logic_error("decode_step: gathered rows do not match the position map");
            }
            for (std::size_t r = 0; r < g.keys.rows(); ++r) {
                rotate(g.keys.row(r), r);
            }
            Matrix current_key = hs.k;
            Vector query(hs.q.row(0).begin(), hs.q.row(0).end());
            rotate(current_key.row(0), map.query_position);
            rotate(query, map.query_position);
            const Matrix* key_blocks[] = {&g.keys, &current_key};
            const Matrix* value_blocks[] = {&g.values, &hs.v};
            Vector out = attend(query, key_blocks, value_blocks);
            attended += g.keys.rows() + 1;
            query_position = std::max(query_position, map.query_position);
            Matrix row(1, dh);
            std::copy(out.begin(), out.end(), row.row(0).begin());
            outputs.push_back(std::move(row));
        }
        for (const HeadStates& hs : heads) {
            cache_.append_token(layer, hs.head, hs.q.row(0), hs.k.row(0), hs.v.row(0));
        }
        model_->add_attention_output(layer, outputs, hidden);
        model_->add_mlp(layer, hidden);
    }

    layout_ = advance(layout_, position).layout;
    tokens_.push_back(token);
    const CacheCounters counters = cache_.counters();
    step_counters_.push_back({steps_done_, counters.gathered_rows_this_step, counters.tokens_loaded_this_step, attended,
                              recent_before, query_position});
    ++steps_done_;

    const Matrix logits = model_->logits(hidden);
    last_logits_.assign(logits.row(0).begin(), logits.row(0).end());
    return last_logits_;
}

std::vector<Token> Engine::generate(std::size_t steps) {
    if (layout_.n() == 0) {
        throw std::logic_error("generate: encode a prompt first");
    }
    std::vector<Token> out;
    out.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const auto next = static_cast<Token>(argmax(last_logits_));
        out.push_back(next);
        decode_step(next);
    }
    return out;
}

Matrix Engine::oracle_forward(const TokenSequence& seq) const {
    return full_attention_forward(*model_, seq);
}

}  // namespace longheads
