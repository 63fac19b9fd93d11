#include "longheads/selector.hpp"

#include <algorithm>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>

namespace longheads {

namespace {

// Picks `count` positions of `scores` by the given order; ties always go to
// the lower position (= lower chunk index, since the pool is ascending).
std::vector<std::size_t> pick_ranked(std::span<const double> scores, std::size_t count, bool highest) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return highest ? scores[a] > scores[b] : scores[a] < scores[b];
        }
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), better);
    order.resize(count);
    return order;
}

}  // namespace

SelectionSet select(std::span<const double> query, std::span<const ChunkRepr> visible, std::size_t k, Policy policy,
                    std::mt19937_64& rng, SelectionKey key) {
    if (k < 2) {
        throw std::invalid_argument("select: k must be at least 2");
    }
    if (visible.empty()) {
        throw std::invalid_argument("select: no sealed chunks to select from");
    }
    if (query.empty()) {
        throw std::invalid_argument("select: empty query vector");
    }
    for (const ChunkRepr& r : visible) {
        if (r.c.empty()) {
            throw std::invalid_argument("select: empty chunk representation");
        }
        if (r.c.size() != query.size()) {
            throw std::invalid_argument("select: representation of chunk " + std::to_string(r.chunk) +
                                        " has dimension " + std::to_string(r.c.size()) + ", query has " +
                                        std::to_string(query.size()));
        }
    }

    SelectionSet out;
    out.layer = key.layer;
    out.head = key.head;
    out.query_token = key.query_token;

    const std::size_t last = visible.size() - 1;
    const bool keep_first = policy != Policy::NoFirst;
    const std::size_t pool_begin = keep_first ? 1 : 0;
    const std::size_t budget = keep_first ? k - 2 : k - 1;

    for (std::size_t i = pool_begin; i < last; ++i) {
        out.candidates.push_back(i);
        out.scores.push_back(dot(query, visible[i].c));
    }
    const std::size_t take = std::min(budget, out.candidates.size());

    std::vector<std::size_t> picked;  // positions into candidates
    switch (policy) {
        case Policy::Random: {
            std::vector<std::size_t> positions(out.candidates.size());
            std::iota(positions.begin(), positions.end(), 0);
            std::sample(positions.begin(), positions.end(), std::back_inserter(picked), take, rng);
            break;
        }
        case Policy::LastK:
            picked = pick_ranked(out.scores, take, /*highest=*/false);
            break;
        default:
            picked = pick_ranked(out.scores, take, /*highest=*/true);
            break;
    }

    if (keep_first) {
        out.chunks.push_back(0);
    }
    for (std::size_t p : picked) {
        out.chunks.push_back(out.candidates[p]);
    }
    out.chunks.push_back(last);
    std::sort(out.chunks.begin(), out.chunks.end());
    out.chunks.erase(std::unique(out.chunks.begin(), out.chunks.end()), out.chunks.end());
    return out;
}

HeadConstraint constraint_for(Policy policy) {
    switch (policy) {
        case Policy::FixHead:
            return HeadConstraint::FixHead;
        case Policy::FixLayer:
            return HeadConstraint::FixLayer;
        case Policy::FixHeadAndLayer:
            return HeadConstraint::FixHeadAndLayer;
        default:
            return HeadConstraint::None;
    }
}

SelectionSet apply_head_constraints(const SelectionSet& base, HeadConstraint mode, const SelectionSet* reference) {
    if (mode == HeadConstraint::None) {
        return base;
    }
    if (reference == nullptr) {
        throw std::invalid_argument("apply_head_constraints: constrained mode requires a reference selection");
    }
    SelectionSet out = base;
    out.chunks = reference->chunks;
    return out;
}

std::mt19937_64 selection_rng(std::uint64_t seed, std::size_t layer, std::size_t head, std::size_t step) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(head),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(std::uint64_t(step) >> 32)};
    return std::mt19937_64(seq);
}

SelectionPlanner::SelectionPlanner(std::size_t k, Policy policy, std::uint64_t seed)
    : k_(k), policy_(policy), seed_(seed) {}

SelectionSet SelectionPlanner::choose(SelectionKey key, std::span<const double> query,
                                      std::span<const ChunkRepr> visible) {
    SelectionSet base;
    if (policy_ == Policy::Random) {
        auto rng = selection_rng(seed_, key.layer, key.head, key.query_token);
        base = select(query, visible, k_, policy_, rng, key);
    } else {
        std::mt19937_64 unused(0);
        base = select(query, visible, k_, policy_, unused, key);
    }

    const HeadConstraint mode = constraint_for(policy_);
    if (mode == HeadConstraint::None) {
        return base;
    }
    std::size_t ref_layer = key.layer;
    std::size_t ref_head = key.head;
    if (mode == HeadConstraint::FixHead || mode == HeadConstraint::FixHeadAndLayer) {
        ref_head = 0;
    }
    if (mode == HeadConstraint::FixLayer || mode == HeadConstraint::FixHeadAndLayer) {
        ref_layer = 0;
    }
    if (ref_layer == key.layer && ref_head == key.head) {
        references_[{key.layer, key.head, key.query_token}] = base.chunks;
        return base;
    }
    const auto it = references_.find({ref_layer, ref_head, key.query_token});
    if (it == references_.end()) {
        return apply_head_constraints(base, mode, nullptr);
    }
    SelectionSet reference;
    reference.chunks = it->second;
    return apply_head_constraints(base, mode, &reference);
}

}  // namespace longheads
