#include "longheads/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "longheads/engine.hpp"
#include "longheads/host_model.hpp"

namespace longheads {

namespace fs = std::filesystem;

namespace {

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    return s / static_cast<double>(xs.size());
}

double sample_sd(const std::vector<double>& xs) {
    if (xs.size() < 2) {
        return 0.0;
    }
    const double mu = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mu) * (x - mu);
    }
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw ConfigError("cannot create output directory '" + dir.string() + "'");
    }
}

std::string pass_fail(bool ok) {
    return ok ? "PASS" : "FAIL";
}

}  // namespace

TokenSequence random_prompt(std::size_t n, std::size_t vocab_size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Token> dist(0, static_cast<Token>(vocab_size - 1));
    TokenSequence seq;
    seq.tokens.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        seq.tokens.push_back(dist(rng));
    }
    return seq;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed for '" + path.string() + "'");
    }
}

ModelConfig load_model_config(const std::string& path) {
    if (path.empty()) {
        ModelConfig c;
        c.validate();
        return c;
    }
    return model_config_from_json(load_json_file(path));
}

EngineConfig load_engine_config(const std::string& path) {
    if (path.empty()) {
        EngineConfig c;
        c.validate();
        return c;
    }
    return engine_config_from_json(load_json_file(path));
}

// ---- equivalence ----------------------------------------------------------

nlohmann::json EquivalenceReport::to_json() const {
    return {{"max_abs_diff", max_abs_diff},
            {"tolerance", 1e-5},
            {"tokens_match", tokens_match},
            {"tokens", tokens},
            {"oracle_tokens", oracle_tokens},
            {"result", pass_fail(pass)}};
}

EquivalenceReport run_equivalence(const ModelConfig& model, const EngineConfig& engine, const EquivalenceParams& p) {
    model.validate();
    engine.validate_against(model);
    const std::size_t l = engine.chunk_size;
    const std::size_t k = engine.num_selected;
    if (p.n == 0) {
        throw ConfigError("equivalence: n must be positive");
    }
    if (p.n + p.steps > model.pretrain_length) {
        throw ConfigError("equivalence: n + steps = " + std::to_string(p.n + p.steps) +
                          " exceeds the pre-training length " + std::to_string(model.pretrain_length));
    }
    const std::size_t prompt_chunks = (p.n + l - 1) / l;
    const std::size_t max_sealed = (p.n + p.steps - 1) / l;
    if (prompt_chunks > k || max_sealed > k) {
        throw ConfigError("equivalence: not saturated (" + std::to_string(std::max(prompt_chunks, max_sealed)) +
                          " chunks for k = " + std::to_string(k) +
                          "); selection drops chunks and equivalence is not expected");
    }

    auto host = std::make_shared<const HostModel>(model);
    Engine eng(host, engine);
    const TokenSequence prompt = random_prompt(p.n, model.vocab_size, p.seed);
    Matrix rows = eng.encode(prompt);

    EquivalenceReport report;
    for (std::size_t s = 0; s < p.steps; ++s) {
        const Token next = static_cast<Token>(argmax(rows.row(rows.rows() - 1)));
        report.tokens.push_back(next);
        rows.append_row(eng.decode_step(next));
    }

    // One causal pass over the final sequence yields every prefix's logits.
    TokenSequence full = prompt;
    full.tokens.insert(full.tokens.end(), report.tokens.begin(), report.tokens.end());
    const Matrix oracle = full_attention_forward(*host, full);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        for (std::size_t c = 0; c < rows.cols(); ++c) {
            report.max_abs_diff = std::max(report.max_abs_diff, std::abs(rows(r, c) - oracle(r, c)));
        }
    }
    for (std::size_t s = 0; s < p.steps; ++s) {
        report.oracle_tokens.push_back(static_cast<Token>(argmax(oracle.row(p.n - 1 + s))));
    }
    report.tokens_match = report.tokens == report.oracle_tokens;
    report.pass = report.tokens_match && report.max_abs_diff <= 1e-5;
    return report;
}

// ---- passkey --------------------------------------------------------------

nlohmann::json PasskeyReport::to_json() const {
    nlohmann::json j = {{"m", params.m},
                        {"gap", params.gap},
                        {"k", params.k},
                        {"chunk_size", params.chunk_size},
                        {"n_layers", params.n_layers},
                        {"n_heads", params.n_heads},
                        {"trials", params.trials},
                        {"policy", std::string(to_string(params.policy))},
                        {"seed", params.seed},
                        {"residency", params.residency.to_string()},
                        {"hit_rate_top1", hit_rate_top1},
                        {"hit_rate_top5", hit_rate_top5},
                        {"selected_rate", selected_rate},
                        {"selected_rate_sd", selected_rate_sd},
                        {"retrieval_success", retrieval_success},
                        {"cover_rate", cover_rate},
                        {"gini", gini},
                        {"loaded_rows_per_step", loaded_rows_per_step},
                        {"max_gathered_rows", max_gathered_rows},
                        {"targets", targets},
                        {"warnings", warnings}};
    return j;
}

PasskeyReport run_passkey(const PasskeyCommandParams& p) {
    if (p.m < 3) {
        throw ConfigError("passkey: m must be at least 3");
    }
    if (p.k < 2) {
        throw ConfigError("passkey: k must be at least 2");
    }
    if (p.trials == 0) {
        throw ConfigError("passkey: trials must be positive");
    }
    if (p.chunk_size == 0 || p.n_layers == 0 || p.n_heads == 0) {
        throw ConfigError("passkey: chunk size, layers and heads must be positive");
    }
    if (p.target && *p.target >= p.m) {
        throw ConfigError("passkey: target " + std::to_string(*p.target) + " outside 0.." + std::to_string(p.m - 1));
    }

    PasskeyReport report;
    report.params = p;
    if (p.target && (*p.target == 0 || *p.target == p.m - 1)) {
        report.warnings.push_back("target chunk " + std::to_string(*p.target) +
                                  " is mandatory and always selected; hit rates are not informative");
    }

    std::vector<double> top1;
    std::vector<double> top5;
    std::vector<std::uint64_t> pooled(p.m, 0);
    std::size_t successes = 0;
    for (std::size_t trial = 0; trial < p.trials; ++trial) {
        std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                          static_cast<std::uint32_t>(trial)};
        std::mt19937_64 rng(seq);
        std::size_t target = 0;
        if (p.target) {
            target = *p.target;
        } else {
            std::uniform_int_distribution<std::size_t> pick(1, p.m - 2);
            target = pick(rng);
        }
        PasskeyParams inst_params;
        inst_params.m = p.m;
        inst_params.target = target;
        inst_params.gap = p.gap;
        inst_params.noise_seed = rng();
        inst_params.chunk_size = p.chunk_size;
        inst_params.n_layers = p.n_layers;
        inst_params.n_heads = p.n_heads;
        const PasskeyInstance inst = build_passkey(inst_params);

        PasskeyRunOptions opts;
        opts.k = p.k;
        opts.policy = p.policy;
        opts.seed = rng();
        opts.residency = p.residency;
        const PasskeyTrialResult res = run_passkey_trial(inst, opts);

        report.targets.push_back(target);
        top1.push_back(hit_rate(res.trace, target, 1));
        top5.push_back(hit_rate(res.trace, target, 5));
        const double sel = selected_rate(res.trace, target);
        report.per_trial_selected.push_back(sel);
        if (sel == 1.0) {
            ++successes;
        }
        const auto counts = selection_counts(res.trace, p.m);
        for (std::size_t c = 0; c < p.m; ++c) {
            pooled[c] += counts[c];
        }
        for (std::uint64_t rows : res.loaded_rows_per_step) {
            report.loaded_rows_per_step = std::max(report.loaded_rows_per_step, rows);
        }
        report.max_gathered_rows = std::max(report.max_gathered_rows, res.max_gathered_rows);
    }

    report.hit_rate_top1 = mean_of(top1);
    report.hit_rate_top5 = mean_of(top5);
    report.selected_rate = mean_of(report.per_trial_selected);
    report.selected_rate_sd = sample_sd(report.per_trial_selected);
    report.retrieval_success = static_cast<double>(successes) / static_cast<double>(p.trials);
    report.cover_rate = static_cast<double>(std::count_if(pooled.begin(), pooled.end(),
                                                          [](std::uint64_t c) { return c > 0; })) /
                        static_cast<double>(p.m);
    report.gini = gini(std::span<const std::uint64_t>(pooled));
    return report;
}

// ---- ablation -------------------------------------------------------------

nlohmann::json AblationReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const AblationRow& r : policies) {
        nlohmann::json j = r.report.to_json();
        j["variant"] = r.variant;
        j["degenerate"] = r.degenerate;
        if (!r.note.empty()) {
            j["note"] = r.note;
        }
        rows.push_back(std::move(j));
    }
    auto sweep = [](const std::vector<SweepRow>& xs) {
        nlohmann::json a = nlohmann::json::array();
        for (const SweepRow& s : xs) {
            a.push_back({{"k", s.k},
                         {"chunk_size", s.chunk_size},
                         {"window", s.window},
                         {"loaded_rows_per_unit", s.loaded_rows_per_unit},
                         {"max_gathered_rows", s.max_gathered_rows}});
        }
        return a;
    };
    return {{"policies", std::move(rows)},
            {"k_sweep", sweep(k_sweep)},
            {"k_sweep_exact", k_sweep_exact},
            {"l_sweep", sweep(l_sweep)},
            {"l_sweep_bounded", l_sweep_bounded}};
}

AblationReport run_ablation(const AblationParams& params) {
    if (params.policies.empty()) {
        throw ConfigError("ablate: no policies given");
    }
    AblationReport report;
    for (Policy policy : params.policies) {
        PasskeyCommandParams p = params.base;
        p.policy = policy;
        AblationRow row{std::string(to_string(policy)), run_passkey(p), false, {}};
        if (policy == Policy::NoFirst) {
            row.degenerate = true;
            row.note = "drops the first chunk; the collapse seen with trained weights does not occur with "
                       "random weights, so this row is not comparable";
        }
        report.policies.push_back(std::move(row));
    }

    const std::uint64_t units = params.base.n_layers * params.base.n_heads;
    auto sweep_point = [&](std::size_t k, std::size_t l, std::size_t m) {
        PasskeyCommandParams p = params.base;
        p.k = k;
        p.chunk_size = l;
        p.m = m;
        p.trials = 1;
        p.target.reset();
        p.residency = ResidencyPolicy::all_offloaded();
        const PasskeyReport r = run_passkey(p);
        return SweepRow{k, l, k * l, r.loaded_rows_per_step / units, r.max_gathered_rows};
    };

    report.k_sweep_exact = true;
    for (std::size_t k : params.k_sweep) {
        const SweepRow row = sweep_point(k, params.base.chunk_size, std::max(params.base.m, k));
        report.k_sweep_exact = report.k_sweep_exact && row.loaded_rows_per_unit == k * row.chunk_size;
        report.k_sweep.push_back(row);
    }

    report.l_sweep_bounded = true;
    for (std::size_t l : params.l_sweep) {
        if (l == 0 || params.fixed_window % l != 0 || params.fixed_window / l < 2) {
            throw ConfigError("ablate: chunk size " + std::to_string(l) + " does not divide the window " +
                              std::to_string(params.fixed_window) + " into at least 2 chunks");
        }
        const std::size_t k = params.fixed_window / l;
        const SweepRow row = sweep_point(k, l, 2 * k);
        report.l_sweep_bounded = report.l_sweep_bounded && row.window == params.fixed_window &&
                                 row.max_gathered_rows <= params.fixed_window;
        report.l_sweep.push_back(row);
    }
    return report;
}

// ---- scaling --------------------------------------------------------------

nlohmann::json ScalingReport::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const ScalingRow& r : rows) {
        rs.push_back({{"n", r.n},
                      {"gathered_rows", r.gathered_rows},
                      {"loaded_rows", r.loaded_rows},
                      {"attended_rows", r.attended_rows},
                      {"oracle_rows", r.oracle_rows},
                      {"query_positions", r.query_positions},
                      {"recent_lens", r.recent_lens},
                      {"max_rotary_position", r.max_rotary_position}});
    }
    return {{"rows", std::move(rs)},
            {"gathered_constant", gathered_constant},
            {"positions_in_range", positions_in_range},
            {"positions_exact", positions_exact}};
}

nlohmann::json ScalingReport::timing_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const ScalingRow& r : rows) {
        rs.push_back({{"n", r.n}, {"seconds_per_step", r.seconds_per_step}});
    }
    return rs;
}

ScalingReport run_scaling(const ModelConfig& model, const EngineConfig& engine, const ScalingParams& params) {
    model.validate();
    engine.validate_against(model);
    if (params.n_list.empty() || params.steps == 0) {
        throw ConfigError("scaling: need at least one n and one step");
    }
    const std::size_t k = engine.num_selected;
    const std::size_t l = engine.chunk_size;
    const std::uint64_t units = model.n_layers * model.n_heads;
    auto host = std::make_shared<const HostModel>(model);

    ScalingReport report;
    report.positions_in_range = true;
    report.positions_exact = true;
    for (std::size_t n : params.n_list) {
        if (n < k * l) {
            throw ConfigError("scaling: n = " + std::to_string(n) + " is below the window k*l = " +
                              std::to_string(k * l));
        }
        Engine eng(host, engine);
        eng.set_residency(params.residency);
        eng.encode(random_prompt(n, model.vocab_size, params.seed));
        const auto start = std::chrono::steady_clock::now();
        eng.generate(params.steps);
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

        ScalingRow row;
        row.n = n;
        for (const StepCounters& sc : eng.step_counters()) {
            row.gathered_rows.push_back(sc.gathered_rows);
            row.loaded_rows.push_back(sc.loaded_rows);
            row.attended_rows.push_back(sc.attended_rows);
            row.oracle_rows.push_back(units * (n + sc.step + 1));
            row.query_positions.push_back(sc.query_position);
            row.recent_lens.push_back(sc.recent_len);
            report.positions_exact = report.positions_exact && sc.query_position == k * l + sc.recent_len;
        }
        row.max_rotary_position = eng.stats().max_rotary_position;
        row.seconds_per_step = elapsed.count() / static_cast<double>(params.steps);
        report.positions_in_range = report.positions_in_range && row.max_rotary_position < model.pretrain_length;
        report.rows.push_back(std::move(row));
    }
    report.gathered_constant = std::all_of(report.rows.begin(), report.rows.end(), [&](const ScalingRow& r) {
        return r.gathered_rows == report.rows.front().gathered_rows;
    });
    return report;
}

// ---- run descriptor -------------------------------------------------------

RunDescriptor RunDescriptor::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("descriptor: expected a JSON object");
    }
    static const std::set<std::string> known{"model_config", "engine_config", "n", "steps", "seed", "residency", "out"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("descriptor: unknown field '" + key + "'");
        }
    }
    RunDescriptor d;
    try {
        d.model_config = j.value("model_config", d.model_config);
        d.engine_config = j.value("engine_config", d.engine_config);
        d.n = j.value("n", d.n);
        d.steps = j.value("steps", d.steps);
        d.seed = j.value("seed", d.seed);
        if (j.contains("residency")) {
            d.residency = ResidencyPolicy::parse(j.at("residency").get<std::string>());
        }
        d.out = j.value("out", d.out);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("descriptor: ") + e.what());
    }
    for (const std::string* path : {&d.model_config, &d.engine_config}) {
        if (!path->empty() && !fs::exists(*path)) {
            throw ConfigError("descriptor: '" + *path + "' does not exist");
        }
    }
    return d;
}

nlohmann::json RunDescriptor::to_json() const {
    return {{"model_config", model_config}, {"engine_config", engine_config}, {"n", n},   {"steps", steps},
            {"seed", seed},                 {"residency", residency.to_string()},       {"out", out}};
}

RunSummary run_descriptor(const ModelConfig& model, const EngineConfig& engine, const RunDescriptor& d) {
    model.validate();
    engine.validate_against(model);
    if (d.n == 0) {
        throw ConfigError("run: n must be positive");
    }
    const fs::path out(d.out);
    ensure_dir(out);

    auto host = std::make_shared<const HostModel>(model);
    Engine eng(host, engine);
    eng.set_residency(d.residency);
    eng.encode(random_prompt(d.n, model.vocab_size, d.seed));

    RunSummary summary;
    summary.generated = eng.generate(d.steps);
    const SelectionTrace& trace = eng.trace();
    if (trace.records.empty()) {
        throw ConfigError("run: no decode step saw a sealed chunk; use n >= chunk_size and steps >= 1");
    }
    const std::size_t m = eng.cache().sealed_chunks(0, 0);
    summary.metrics = compute_metrics(trace, m, std::nullopt);

    std::ostringstream tokens;
    for (std::size_t i = 0; i < summary.generated.size(); ++i) {
        tokens << (i ? " " : "") << summary.generated[i];
    }
    tokens << '\n';
    write_text_file(out / "tokens.txt", tokens.str());
    write_text_file(out / "trace.json", trace.to_json().dump(2) + "\n");

    nlohmann::json steps = nlohmann::json::array();
    for (const StepCounters& sc : eng.step_counters()) {
        steps.push_back(sc.to_json());
    }
    const nlohmann::json counters = {{"residency", d.residency.to_string()},
                                     {"cache", eng.cache().counters().to_json()},
                                     {"engine", eng.stats().to_json()},
                                     {"steps", std::move(steps)}};
    write_text_file(out / "counters.json", counters.dump(2) + "\n");
    export_heatmap(trace, m, (out / "heatmap.csv").string());

    nlohmann::json metrics = summary.metrics.to_json();
    metrics["n"] = d.n;
    metrics["steps"] = d.steps;
    metrics["m"] = m;
    metrics["window"] = engine.attention_window();
    write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
    return summary;
}

}  // namespace longheads
