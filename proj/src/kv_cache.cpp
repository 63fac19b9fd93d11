#include "longheads/kv_cache.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <stdexcept>

#include "longheads/config.hpp"

namespace longheads {

namespace {

std::vector<std::byte> serialize(const Matrix& k, const Matrix& v) {
    std::vector<std::byte> bytes(k.data().size_bytes() + v.data().size_bytes());
    std::memcpy(bytes.data(), k.data().data(), k.data().size_bytes());
    std::memcpy(bytes.data() + k.data().size_bytes(), v.data().data(), v.data().size_bytes());
    return bytes;
}

void deserialize(std::span<const std::byte> bytes, Matrix& k, Matrix& v) {
    std::memcpy(k.data().data(), bytes.data(), k.data().size_bytes());
    std::memcpy(v.data().data(), bytes.data() + k.data().size_bytes(), v.data().size_bytes());
}

void append_rows(Matrix& dst, const Matrix& src) {
    for (std::size_t r = 0; r < src.rows(); ++r) {
        dst.append_row(src.row(r));
    }
}

}  // namespace

ResidencyPolicy ResidencyPolicy::parse(std::string_view text) {
    if (text == "hot") {
        return all_hot();
    }
    if (text == "offload") {
        return all_offloaded();
    }
    constexpr std::string_view prefix = "budget:";
    if (text.starts_with(prefix)) {
        const std::string_view digits = text.substr(prefix.size());
        std::size_t value = 0;
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
        if (ec == std::errc{} && ptr == digits.data() + digits.size() && !digits.empty()) {
            return budget(value);
        }
    }
    throw ConfigError("residency must be 'hot', 'offload' or 'budget:N', got '" + std::string(text) + "'");
}

std::string ResidencyPolicy::to_string() const {
    switch (kind) {
        case Kind::AllHot:
            return "hot";
        case Kind::AllOffloaded:
            return "offload";
        case Kind::Budget:
            return "budget:" + std::to_string(max_hot_tokens);
    }
    return "unknown";
}

nlohmann::json CacheCounters::to_json() const {
    return {{"gathered_rows_this_step", gathered_rows_this_step},
            {"tokens_loaded_this_step", tokens_loaded_this_step},
            {"gathered_rows_total", gathered_rows_total},
            {"tokens_loaded_total", tokens_loaded_total},
            {"hot_tokens", hot_tokens},
            {"peak_hot_tokens", peak_hot_tokens},
            {"evictions", evictions}};
}

KvCache::KvCache(std::size_t n_layers, std::size_t n_heads, std::size_t d_head, std::size_t chunk_size,
                 std::size_t num_selected)
    : n_layers_(n_layers),
      n_heads_(n_heads),
      d_head_(d_head),
      chunk_size_(chunk_size),
      num_selected_(num_selected),
      stores_(n_layers * n_heads) {
    if (n_layers == 0 || n_heads == 0 || d_head == 0 || chunk_size == 0) {
        throw std::invalid_argument("KvCache: dimensions must be positive");
    }
    for (HeadStore& hs : stores_) {
        hs.recent_q = Matrix(0, d_head);
        hs.recent_k = Matrix(0, d_head);
        hs.recent_v = Matrix(0, d_head);
    }
}

KvCache::HeadStore& KvCache::store(std::size_t layer, std::size_t head) {
    if (layer >= n_layers_ || head >= n_heads_) {
        throw std::out_of_range("KvCache: (layer, head) out of range");
    }
    return stores_[layer * n_heads_ + head];
}

const KvCache::HeadStore& KvCache::store(std::size_t layer, std::size_t head) const {
    if (layer >= n_layers_ || head >= n_heads_) {
        throw std::out_of_range("KvCache: (layer, head) out of range");
    }
    return stores_[layer * n_heads_ + head];
}

const KvCache::Slab& KvCache::slab(std::size_t layer, std::size_t head, std::size_t chunk) const {
    const HeadStore& hs = store(layer, head);
    if (chunk >= hs.slabs.size()) {
        throw std::out_of_range("KvCache: chunk " + std::to_string(chunk) + " is not sealed");
    }
    return hs.slabs[chunk];
}

void KvCache::note_hot_change() {
    std::uint64_t total = 0;
    for (const HeadStore& hs : stores_) {
        total += hs.hot_slab_rows + hs.recent_k.rows();
    }
    hot_tokens_.set(total);
    peak_hot_.raise_to(total);
}

void KvCache::offload(HeadStore& hs, Slab& s) {
    if (s.residency == Residency::Offloaded) {
        return;
    }
    s.offloaded = serialize(s.k, s.v);
    hs.hot_slab_rows -= s.rows;
    s.k = Matrix();
    s.v = Matrix();
    s.residency = Residency::Offloaded;
}

void KvCache::promote(HeadStore& hs, Slab& s) {
    if (s.residency == Residency::Hot) {
        return;
    }
    s.k = Matrix(s.rows, d_head_);
    s.v = Matrix(s.rows, d_head_);
    deserialize(s.offloaded, s.k, s.v);
    s.offloaded.clear();
    s.offloaded.shrink_to_fit();
    hs.hot_slab_rows += s.rows;
    s.residency = Residency::Hot;
}

void KvCache::enforce_budget(HeadStore& hs, std::size_t layer, std::size_t head,
                             std::span<const std::size_t> pinned) {
    while (hs.hot_slab_rows > policy_.max_hot_tokens) {
        std::optional<std::size_t> victim;
        for (std::size_t i = 0; i < hs.slabs.size(); ++i) {
            const Slab& s = hs.slabs[i];
            if (s.residency != Residency::Hot || std::find(pinned.begin(), pinned.end(), i) != pinned.end()) {
                continue;
            }
            if (!victim || s.last_used < hs.slabs[*victim].last_used) {
                victim = i;
            }
        }
        if (!victim) {
            return;
        }
        offload(hs, hs.slabs[*victim]);
        evictions_.push_back({layer, head, *victim});
    }
}

std::optional<std::size_t> KvCache::append_token(std::size_t layer, std::size_t head, std::span<const double> q,
                                                 std::span<const double> k, std::span<const double> v) {
    if (q.size() != d_head_ || k.size() != d_head_ || v.size() != d_head_) {
        throw std::invalid_argument("KvCache::append_token: state width does not match d_head");
    }
    HeadStore& hs = store(layer, head);
    hs.recent_q.append_row(q);
    hs.recent_k.append_row(k);
    hs.recent_v.append_row(v);
    if (hs.recent_k.rows() < chunk_size_) {
        note_hot_change();
        return std::nullopt;
    }

    const std::size_t id = hs.slabs.size();
    hs.reprs.push_back(compute_chunk_repr(layer, head, id, hs.recent_q, hs.recent_k, hs.recent_v));
    Slab s;
    s.rows = hs.recent_k.rows();
    s.k = std::move(hs.recent_k);
    s.v = std::move(hs.recent_v);
    s.last_used = ++hs.clock;
    hs.recent_q = Matrix(0, d_head_);
    hs.recent_k = Matrix(0, d_head_);
    hs.recent_v = Matrix(0, d_head_);
    hs.hot_slab_rows += s.k.rows();
    hs.slabs.push_back(std::move(s));

    switch (policy_.kind) {
        case ResidencyPolicy::Kind::AllHot:
            break;
        case ResidencyPolicy::Kind::AllOffloaded:
            offload(hs, hs.slabs.back());
            break;
        case ResidencyPolicy::Kind::Budget: {
            const std::size_t pinned[] = {id};
            enforce_budget(hs, layer, head, pinned);
            break;
        }
    }
    note_hot_change();
    return id;
}

GatherResult KvCache::gather(std::size_t layer, std::size_t head, std::span<const std::size_t> chunks, bool recent) {
    HeadStore& hs = store(layer, head);
    for (std::size_t c : chunks) {
        if (c >= hs.slabs.size()) {
            throw std::out_of_range("KvCache::gather: chunk " + std::to_string(c) + " is not sealed");
        }
    }

    GatherResult out;
    out.keys = Matrix(0, d_head_);
    out.values = Matrix(0, d_head_);
    const std::uint64_t tick = ++hs.clock;
    for (std::size_t c : chunks) {
        Slab& s = hs.slabs[c];
        if (s.residency == Residency::Hot) {
            append_rows(out.keys, s.k);
            append_rows(out.values, s.v);
        } else {
            Matrix k(s.rows, d_head_);
            Matrix v(s.rows, d_head_);
            deserialize(s.offloaded, k, v);
            append_rows(out.keys, k);
            append_rows(out.values, v);
            out.loaded_rows += k.rows();
            if (policy_.kind == ResidencyPolicy::Kind::Budget) {
                promote(hs, s);
            }
        }
        s.last_used = tick;
        out.row_chunk.insert(out.row_chunk.end(), s.rows, c);
    }
    if (policy_.kind == ResidencyPolicy::Kind::Budget) {
        enforce_budget(hs, layer, head, chunks);
        note_hot_change();
    }
    if (recent) {
        append_rows(out.keys, hs.recent_k);
        append_rows(out.values, hs.recent_v);
        out.row_chunk.insert(out.row_chunk.end(), hs.recent_k.rows(), kRecentRow);
    }

    gathered_step_.add(out.keys.rows());
    gathered_total_.add(out.keys.rows());
    loaded_step_.add(out.loaded_rows);
    loaded_total_.add(out.loaded_rows);
    return out;
}

void KvCache::set_residency(const ResidencyPolicy& policy) {
    if (policy.kind == ResidencyPolicy::Kind::Budget && policy.max_hot_tokens < num_selected_ * chunk_size_) {
        throw ConfigError("residency budget " + std::to_string(policy.max_hot_tokens) +
                          " cannot hold one working set of k*l = " + std::to_string(num_selected_ * chunk_size_) +
                          " tokens");
    }
    policy_ = policy;
    for (std::size_t layer = 0; layer < n_layers_; ++layer) {
        for (std::size_t head = 0; head < n_heads_; ++head) {
            HeadStore& hs = store(layer, head);
            for (Slab& s : hs.slabs) {
                if (policy.kind == ResidencyPolicy::Kind::AllHot) {
                    promote(hs, s);
                } else if (policy.kind == ResidencyPolicy::Kind::AllOffloaded) {
                    offload(hs, s);
                }
            }
            if (policy.kind == ResidencyPolicy::Kind::Budget) {
                enforce_budget(hs, layer, head, {});
            }
        }
    }
    note_hot_change();
}

void KvCache::begin_step() {
    gathered_step_.reset();
    loaded_step_.reset();
}

CacheCounters KvCache::counters() const {
    CacheCounters c;
    c.gathered_rows_this_step = gathered_step_.load();
    c.tokens_loaded_this_step = loaded_step_.load();
    c.gathered_rows_total = gathered_total_.load();
    c.tokens_loaded_total = loaded_total_.load();
    c.hot_tokens = hot_tokens_.load();
    c.peak_hot_tokens = peak_hot_.load();
    c.evictions = evictions_.size();
    return c;
}

std::span<const ChunkRepr> KvCache::representations(std::size_t layer, std::size_t head) const {
    return store(layer, head).reprs;
}

std::size_t KvCache::sealed_chunks(std::size_t layer, std::size_t head) const {
    return store(layer, head).slabs.size();
}

std::size_t KvCache::recent_len(std::size_t layer, std::size_t head) const {
    return store(layer, head).recent_k.rows();
}

std::size_t KvCache::stored_q_rows(std::size_t layer, std::size_t head) const {
    return store(layer, head).recent_q.rows();
}

Residency KvCache::residency(std::size_t layer, std::size_t head, std::size_t chunk) const {
    return slab(layer, head, chunk).residency;
}

std::uint64_t KvCache::slab_checksum(std::size_t layer, std::size_t head, std::size_t chunk) const {
    const Slab& s = slab(layer, head, chunk);
    if (s.residency == Residency::Hot) {
        return checksum(s.v.data(), checksum(s.k.data()));
    }
    Matrix k(s.rows, d_head_);
    Matrix v(s.rows, d_head_);
    deserialize(s.offloaded, k, v);
    return checksum(v.data(), checksum(k.data()));
}

}  // namespace longheads
