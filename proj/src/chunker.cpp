#include "longheads/chunker.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace longheads {

ChunkLayout::ChunkLayout(std::size_t n, std::size_t chunk_size) : n_(n), chunk_size_(chunk_size) {
    if (chunk_size == 0) {
        throw std::invalid_argument("ChunkLayout: chunk size must be positive");
    }
}

ChunkBounds ChunkLayout::bounds(std::size_t chunk) const {
    if (chunk >= total_chunks()) {
        throw std::out_of_range("ChunkLayout: chunk " + std::to_string(chunk) + " does not exist");
    }
    const std::size_t begin = chunk * chunk_size_;
    return {begin, std::min(begin + chunk_size_, n_)};
}

std::vector<ChunkBounds> ChunkLayout::all_bounds() const {
    std::vector<ChunkBounds> out;
    out.reserve(total_chunks());
    for (std::size_t i = 0; i < total_chunks(); ++i) {
        out.push_back(bounds(i));
    }
    return out;
}

ChunkLayout layout(std::size_t n, std::size_t l) {
    if (n == 0 || l == 0) {
        throw std::invalid_argument("layout: n and l must be at least 1");
    }
    return ChunkLayout(n, l);
}

AdvanceResult advance(const ChunkLayout& current, std::size_t new_token_index) {
    if (new_token_index != current.n()) {
        throw std::invalid_argument("advance: expected token index " + std::to_string(current.n()) + ", got " +
                                    std::to_string(new_token_index));
    }
    ChunkLayout next(current.n() + 1, current.chunk_size());
    std::optional<std::size_t> sealed;
    if (next.tail_len() == 0) {
        sealed = next.complete_chunks() - 1;
    }
    return {next, sealed};
}

}  // namespace longheads
