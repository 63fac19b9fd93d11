#include "longheads/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "longheads/remapper.hpp"

namespace longheads {

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j = {{"cover_rate", cover_rate}, {"gini", gini}, {"selection_counts", selection_counts}};
    if (hit_rate_top1) {
        j["hit_rate_top1"] = *hit_rate_top1;
    }
    if (hit_rate_top5) {
        j["hit_rate_top5"] = *hit_rate_top5;
    }
    return j;
}

std::vector<std::uint64_t> selection_counts(const SelectionTrace& trace, std::size_t m) {
    std::vector<std::uint64_t> counts(m, 0);
    for (const SelectionRecord& r : trace.records) {
        for (std::size_t c : r.chunks) {
            if (c < m) {
                ++counts[c];
            }
        }
    }
    return counts;
}

double cover_rate(const SelectionTrace& trace, std::size_t m) {
    if (m == 0) {
        throw std::invalid_argument("cover_rate: m must be positive");
    }
    if (trace.records.empty()) {
        throw std::invalid_argument("cover_rate: empty trace");
    }
    const auto counts = selection_counts(trace, m);
    const auto covered = std::count_if(counts.begin(), counts.end(), [](std::uint64_t c) { return c > 0; });
    return static_cast<double>(covered) / static_cast<double>(m);
}

double gini(std::span<const double> counts) {
    if (counts.empty()) {
        throw std::invalid_argument("gini: no counts");
    }
    std::vector<double> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() < 0.0) {
        throw std::invalid_argument("gini: counts must be nonnegative");
    }
    double total = 0.0;
    for (double x : sorted) {
        total += x;
    }
    if (total == 0.0) {
        throw std::invalid_argument("gini: all counts are zero");
    }
    // For ascending x, sum_i sum_j |x_i - x_j| = 2 * sum_i (2i - m + 1) x_i.
    const auto m = static_cast<double>(sorted.size());
    double pairwise = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        pairwise += (2.0 * static_cast<double>(i) - m + 1.0) * sorted[i];
    }
    pairwise *= 2.0;
    const double mean = total / m;
    return pairwise / (2.0 * m * m * mean);
}

double gini(std::span<const std::uint64_t> counts) {
    std::vector<double> as_double(counts.begin(), counts.end());
    return gini(as_double);
}

double hit_rate(const SelectionTrace& trace, std::size_t target, std::size_t top) {
    if (trace.records.empty()) {
        throw std::invalid_argument("hit_rate: empty trace");
    }
    if (top == 0) {
        throw std::invalid_argument("hit_rate: top must be positive");
    }
    std::size_t hits = 0;
    for (const SelectionRecord& r : trace.records) {
        if (r.scores.size() != r.candidates.size()) {
            throw std::invalid_argument("hit_rate: record without candidate scores");
        }
        const auto it = std::find(r.candidates.begin(), r.candidates.end(), target);
        if (it == r.candidates.end()) {
            continue;
        }
        const auto pos = static_cast<std::size_t>(it - r.candidates.begin());
        const double score = r.scores[pos];
        // Rank = number of candidates that beat the target.
        std::size_t better = 0;
        for (std::size_t i = 0; i < r.candidates.size(); ++i) {
            if (r.scores[i] > score || (r.scores[i] == score && r.candidates[i] < target)) {
                ++better;
            }
        }
        if (better < top) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(trace.records.size());
}

MetricsReport compute_metrics(const SelectionTrace& trace, std::size_t m, std::optional<std::size_t> target) {
    MetricsReport report;
    report.selection_counts = selection_counts(trace, m);
    report.cover_rate = cover_rate(trace, m);
    report.gini = gini(std::span<const std::uint64_t>(report.selection_counts));
    if (target) {
        report.hit_rate_top1 = hit_rate(trace, *target, 1);
        report.hit_rate_top5 = hit_rate(trace, *target, 5);
    }
    return report;
}

std::string heatmap_csv(const SelectionTrace& trace, std::size_t m) {
    const std::size_t layers = trace.meta.n_layers;
    const std::size_t heads = trace.meta.n_heads;
    std::vector<std::uint64_t> grid(layers * heads * m, 0);
    for (const SelectionRecord& r : trace.records) {
        if (r.layer >= layers || r.head >= heads) {
            throw std::invalid_argument("heatmap: record outside the trace's layer/head grid");
        }
        for (std::size_t c : r.chunks) {
            if (c < m) {
                ++grid[(r.layer * heads + r.head) * m + c];
            }
        }
    }
    std::ostringstream out;
    out << "layer,head";
    for (std::size_t c = 0; c < m; ++c) {
        out << ",c" << c;
    }
    out << '\n';
    for (std::size_t layer = 0; layer < layers; ++layer) {
        for (std::size_t head = 0; head < heads; ++head) {
            out << layer << ',' << head;
            for (std::size_t c = 0; c < m; ++c) {
                out << ',' << grid[(layer * heads + head) * m + c];
            }
            out << '\n';
        }
    }
    return out.str();
}

void export_heatmap(const SelectionTrace& trace, std::size_t m, const std::string& csv_path) {
    std::ofstream csv(csv_path);
    if (!csv) {
        throw std::runtime_error("cannot write '" + csv_path + "'");
    }
    csv << heatmap_csv(trace, m);
    if (!csv) {
        throw std::runtime_error("write failed for '" + csv_path + "'");
    }

    std::string meta_path = csv_path;
    const auto dot_pos = meta_path.rfind('.');
    meta_path = (dot_pos == std::string::npos ? meta_path : meta_path.substr(0, dot_pos)) + ".json";
    nlohmann::json meta = trace.to_json()["meta"];
    meta["m"] = m;
    meta["records"] = trace.records.size();
    std::ofstream js(meta_path);
    if (!js) {
        throw std::runtime_error("cannot write '" + meta_path + "'");
    }
    js << meta.dump(2) << '\n';
}

PasskeyInstance build_passkey(const PasskeyParams& p) {
    if (p.m < 3) {
        throw std::invalid_argument("build_passkey: at least 3 chunks are required");
    }
    if (p.target >= p.m) {
        throw std::invalid_argument("build_passkey: target chunk out of range");
    }
    if (p.chunk_size == 0 || p.d_head == 0 || p.d_head % 2 != 0 || p.n_layers == 0 || p.n_heads == 0) {
        throw std::invalid_argument("build_passkey: invalid dimensions");
    }
    PasskeyInstance inst;
    inst.params = p;
    inst.mandatory_collision = p.target == 0 || p.target == p.m - 1;

    const std::size_t rows = p.m * p.chunk_size;
    for (std::size_t layer = 0; layer < p.n_layers; ++layer) {
        for (std::size_t head = 0; head < p.n_heads; ++head) {
            std::seed_seq seq{static_cast<std::uint32_t>(p.noise_seed), static_cast<std::uint32_t>(p.noise_seed >> 32),
                              static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(head)};
            std::mt19937_64 rng(seq);
            std::normal_distribution<double> noise(0.0, p.noise_scale);
            std::normal_distribution<double> unit_normal(0.0, 1.0);

            Vector probe(p.d_head);
            for (double& x : probe) {
                x = unit_normal(rng);
            }
            const double norm = std::sqrt(dot(probe, probe));
            for (double& x : probe) {
                x /= norm;
            }

            HeadStates hs{layer, head, Matrix(rows, p.d_head), Matrix(rows, p.d_head), Matrix(rows, p.d_head)};
            for (Matrix* m : {&hs.q, &hs.k, &hs.v}) {
                for (double& x : m->data()) {
                    x = noise(rng);
                }
            }
            for (std::size_t r = p.target * p.chunk_size; r < (p.target + 1) * p.chunk_size; ++r) {
                for (std::size_t c = 0; c < p.d_head; ++c) {
                    hs.k(r, c) += p.gap * probe[c];
                }
            }
            inst.heads.push_back(std::move(hs));
            inst.probes.push_back(std::move(probe));
        }
    }
    return inst;
}

PasskeyTrialResult run_passkey_trial(const PasskeyInstance& inst, const PasskeyRunOptions& options) {
    const PasskeyParams& p = inst.params;
    const std::size_t l = p.chunk_size;
    const std::size_t n = p.m * l;
    // Room for k chunks, a full recent region and the query.
    const std::size_t max_positions = (options.k + 1) * l;

    KvCache cache(p.n_layers, p.n_heads, p.d_head, l, options.k);
    cache.set_residency(options.residency);
    for (const HeadStates& hs : inst.heads) {
        for (std::size_t t = 0; t < n; ++t) {
            cache.append_token(hs.layer, hs.head, hs.q.row(t), hs.k.row(t), hs.v.row(t));
        }
    }

    PasskeyTrialResult result;
    result.trace.meta = {n, l, options.k, options.policy, options.seed, p.n_layers, p.n_heads};
    SelectionPlanner planner(options.k, options.policy, options.seed);
    const ChunkLayout stream(n, l);
    for (std::size_t step = 0; step < options.queries; ++step) {
        cache.begin_step();
        for (std::size_t layer = 0; layer < p.n_layers; ++layer) {
            for (std::size_t head = 0; head < p.n_heads; ++head) {
                const SelectionSet set =
                    planner.choose({layer, head, n + step}, inst.probe(layer, head), cache.representations(layer, head));
                result.trace.records.push_back(
                    {Phase::Decode, step, layer, head, n + step, set.chunks, set.candidates, set.scores});
                const GatherResult g = cache.gather(layer, head, set.chunks, true);
                const PositionMap map = remap(set.chunks, stream, cache.recent_len(layer, head), max_positions);
                result.max_gathered_rows = std::max(result.max_gathered_rows, g.keys.rows());
                result.max_query_position = std::max(result.max_query_position, map.query_position);
            }
        }
        const CacheCounters counters = cache.counters();
        result.loaded_rows_per_step.push_back(counters.tokens_loaded_this_step);
        result.gathered_rows_per_step.push_back(counters.gathered_rows_this_step);
    }
    return result;
}

double selected_rate(const SelectionTrace& trace, std::size_t target) {
    if (trace.records.empty()) {
        throw std::invalid_argument("selected_rate: empty trace");
    }
    const auto hits = std::count_if(trace.records.begin(), trace.records.end(), [&](const SelectionRecord& r) {
        return std::binary_search(r.chunks.begin(), r.chunks.end(), target);
    });
    return static_cast<double>(hits) / static_cast<double>(trace.records.size());
}

}  // namespace longheads
