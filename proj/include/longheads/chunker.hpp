#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace longheads {

// Half-open token range [begin, end).
struct ChunkBounds {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    friend bool operator==(const ChunkBounds&, const ChunkBounds&) = default;
};

// Fixed-size segmentation of the first n tokens of a stream. Chunk 0 starts
// at token 0; the trailing partial chunk, if any, is the recent region.
class ChunkLayout {
public:
    // n may be 0 for an empty stream; chunk_size must be positive.
    ChunkLayout(std::size_t n, std::size_t chunk_size);

    std::size_t n() const { return n_; }
    std::size_t chunk_size() const { return chunk_size_; }
    std::size_t complete_chunks() const { return n_ / chunk_size_; }
    std::size_t tail_len() const { return n_ - complete_chunks() * chunk_size_; }
    // ceil(n / l)
    std::size_t total_chunks() const { return complete_chunks() + (tail_len() > 0 ? 1 : 0); }

    ChunkBounds bounds(std::size_t chunk) const;
    std::vector<ChunkBounds> all_bounds() const;
    std::size_t chunk_of(std::size_t token) const { return token / chunk_size_; }

    friend bool operator==(const ChunkLayout&, const ChunkLayout&) = default;

private:
    std::size_t n_;
    std::size_t chunk_size_;
};

// Requires n >= 1 and l >= 1.
ChunkLayout layout(std::size_t n, std::size_t l);

struct AdvanceResult {
    ChunkLayout layout;
    std::optional<std::size_t> sealed;
};

// Appends token `new_token_index` (which must equal layout.n()). Reports the
// chunk sealed by this token, if the recent region just reached l tokens.
AdvanceResult advance(const ChunkLayout& current, std::size_t new_token_index);

}  // namespace longheads
