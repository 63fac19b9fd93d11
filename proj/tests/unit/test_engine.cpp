#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "longheads/commands.hpp"
#include "longheads/engine.hpp"
#include "test_util.hpp"

using namespace longheads;

namespace {

ModelConfig model_config(std::size_t L = 256) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_head = 8;
    c.d_model = 16;
    c.vocab_size = 32;
    c.pretrain_length = L;
    c.seed = 3;
    return c;
}

EngineConfig engine_config(std::size_t l, std::size_t k, Policy p = Policy::TopK) {
    EngineConfig e;
    e.chunk_size = l;
    e.num_selected = k;
    e.policy = p;
    e.seed = 5;
    return e;
}

std::shared_ptr<const HostModel> shared_model(std::size_t L = 256) {
    return std::make_shared<const HostModel>(model_config(L));
}

}  // namespace

TEST(Engine, PromptWithinOneChunkEqualsOracleExactly) {
    auto model = shared_model();
    Engine eng(model, engine_config(16, 4));
    const TokenSequence seq = random_prompt(12, 32, 1);
    EXPECT_EQ(eng.encode(seq), eng.oracle_forward(seq));
    EXPECT_TRUE(eng.trace().records.empty());
}

TEST(Engine, SaturatedRunMatchesOracle) {
    auto model = shared_model();
    Engine eng(model, engine_config(16, 8));
    const TokenSequence prompt = random_prompt(100, 32, 2);
    Matrix rows = eng.encode(prompt);
    const std::vector<Token> out = eng.generate(20);
    TokenSequence full = prompt;
    full.tokens.insert(full.tokens.end(), out.begin(), out.end());
    const Matrix oracle = full_attention_forward(*model, full);
    EXPECT_LT(testutil::max_abs_diff(rows, oracle.slice_rows(0, 100)), 1e-5);
    for (std::size_t s = 0; s < out.size(); ++s) {
        EXPECT_EQ(out[s], argmax(oracle.row(99 + s))) << "step " << s;
    }
}

TEST(Engine, ShortContextGenerationMatchesOracleGreedy) {
    auto model = shared_model();
    Engine eng(model, engine_config(16, 4));
    TokenSequence seq = random_prompt(5, 32, 3);
    eng.encode(seq);
    const std::vector<Token> got = eng.generate(9);
    for (Token t : got) {
        const Matrix logits = full_attention_forward(*model, seq);
        const auto expect = static_cast<Token>(argmax(logits.row(seq.size() - 1)));
        EXPECT_EQ(t, expect);
        seq.tokens.push_back(expect);
    }
}

TEST(Engine, AttentionWindowBound) {
    auto model = shared_model();
    for (std::size_t n : {128u, 200u, 333u}) {
        Engine eng(model, engine_config(16, 4));
        eng.encode(random_prompt(n, 32, n));
        eng.generate(20);
        EXPECT_LE(eng.stats().max_attended_rows, 4u * 16 + 16) << n;
        for (const StepCounters& sc : eng.step_counters()) {
            EXPECT_LE(sc.gathered_rows, 4u * (4 * 16 + 16));
        }
    }
}

TEST(Engine, CausalUnderEveryPolicy) {
    auto model = shared_model();
    for (Policy p : {Policy::TopK, Policy::Random, Policy::LastK, Policy::NoFirst, Policy::FixHead,
                     Policy::FixLayer, Policy::FixHeadAndLayer}) {
        TokenSequence seq = random_prompt(96, 32, 4);
        Engine a(model, engine_config(16, 3, p));
        const Matrix base = a.encode(seq);
        const std::size_t t = 70;
        seq.tokens[t] = (seq.tokens[t] + 5) % 32;
        Engine b(model, engine_config(16, 3, p));
        const Matrix changed = b.encode(seq);
        for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t c = 0; c < base.cols(); ++c) {
                ASSERT_EQ(base(r, c), changed(r, c)) << to_string(p) << " row " << r;
            }
        }
    }
}

TEST(Engine, DeterministicTraceAndTokens) {
    auto model = shared_model();
    for (Policy p : {Policy::TopK, Policy::Random}) {
        Engine a(model, engine_config(16, 4, p));
        Engine b(model, engine_config(16, 4, p));
        a.encode(random_prompt(150, 32, 9));
        b.encode(random_prompt(150, 32, 9));
        EXPECT_EQ(a.generate(12), b.generate(12));
        EXPECT_EQ(a.trace().to_json().dump(), b.trace().to_json().dump());
    }
}

TEST(Engine, ResidencyDoesNotChangeOutputs) {
    auto model = shared_model();
    std::vector<std::vector<Token>> outs;
    for (const ResidencyPolicy& r :
         {ResidencyPolicy::all_hot(), ResidencyPolicy::all_offloaded(), ResidencyPolicy::budget(64)}) {
        Engine eng(model, engine_config(16, 4));
        eng.set_residency(r);
        eng.encode(random_prompt(180, 32, 10));
        outs.push_back(eng.generate(10));
    }
    EXPECT_EQ(outs[0], outs[1]);
    EXPECT_EQ(outs[0], outs[2]);
}

TEST(Engine, PositionsStayBelowPretrainLength) {
    const std::size_t L = 128;
    auto model = shared_model(L);
    const std::size_t l = 16;
    const std::size_t k = 4;
    Engine eng(model, engine_config(l, k));
    eng.encode(random_prompt(8 * L, 32, 11));
    eng.generate(2 * l);
    EXPECT_LT(eng.stats().max_rotary_position, L);
    for (const StepCounters& sc : eng.step_counters()) {
        EXPECT_EQ(sc.query_position, k * l + sc.recent_len);
    }
}

TEST(Engine, DecodeRecordsKeepMandatoryChunks) {
    auto model = shared_model();
    Engine eng(model, engine_config(16, 4));
    eng.encode(random_prompt(160, 32, 12));
    eng.generate(40);
    ASSERT_FALSE(eng.trace().records.empty());
    for (const SelectionRecord& r : eng.trace().records) {
        const std::size_t sealed = r.query_token / 16;
        EXPECT_EQ(r.phase, Phase::Decode);
        EXPECT_EQ(r.chunks.front(), 0u);
        EXPECT_EQ(r.chunks.back(), sealed - 1);
        EXPECT_LE(r.chunks.size(), 4u);
    }
}

TEST(Engine, EncodeTracingIsOptIn) {
    auto model = shared_model();
    EngineOptions opts;
    opts.trace_encode = true;
    Engine eng(model, engine_config(16, 4), opts);
    eng.encode(random_prompt(64, 32, 13));
    // Tokens 16..63 each select once per (layer, head).
    EXPECT_EQ(eng.trace().records.size(), 48u * 4);
    EXPECT_EQ(eng.trace().records.front().phase, Phase::Encode);
}

TEST(Engine, CacheReleasesQueriesAfterSealing) {
    auto model = shared_model();
    Engine eng(model, engine_config(16, 4));
    eng.encode(random_prompt(100, 32, 14));
    eng.generate(7);
    for (std::size_t layer = 0; layer < 2; ++layer) {
        for (std::size_t head = 0; head < 2; ++head) {
            EXPECT_EQ(eng.cache().sealed_chunks(layer, head), 107u / 16);
            EXPECT_EQ(eng.cache().stored_q_rows(layer, head), 107u % 16);
        }
    }
}

TEST(Engine, RejectsMisuse) {
    auto model = shared_model();
    EXPECT_THROW(Engine(model, engine_config(64, 4)), ConfigError);   // k*l = L
    EXPECT_THROW(Engine(model, engine_config(16, 1)), ConfigError);   // k < 2
    EXPECT_THROW(Engine(model, engine_config(48, 5)), ConfigError);   // k*l + l > L
    EXPECT_NO_THROW(Engine(model, engine_config(64, 3)));             // k*l + l == L
    Engine eng(model, engine_config(16, 4));
    EXPECT_THROW(eng.generate(1), std::logic_error);
    EXPECT_THROW(eng.encode(TokenSequence{}), std::invalid_argument);
    eng.encode(random_prompt(20, 32, 1));
    EXPECT_THROW(eng.encode(random_prompt(20, 32, 1)), std::logic_error);
    EXPECT_THROW(eng.decode_step(32), std::invalid_argument);
}
