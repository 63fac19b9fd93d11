#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "longheads/chunker.hpp"

namespace longheads {

enum class SegmentKind { Chunk, Recent };

struct PositionSegment {
    SegmentKind kind = SegmentKind::Chunk;
    std::size_t chunk = 0;     // chunk index; unused for the recent region
    ChunkBounds original;      // token span in the text
    ChunkBounds remapped;      // position span after concatenation
};

// Contiguous 0-based coordinate system for one (layer, head, query).
struct PositionMap {
    std::vector<PositionSegment> segments;
    std::size_t query_position = 0;

    // Key rows laid out before the query.
    std::size_t total_length() const { return query_position; }
};

// Lays the selected chunks back to back from position 0 in text order, then
// the recent region (the last `recent_len` tokens of `layout`), then the
// query at the next free slot. `chunks` must be ascending. Throws
// CapacityError when the query position would reach `max_positions`.
PositionMap remap(std::span<const std::size_t> chunks, const ChunkLayout& layout, std::size_t recent_len,
                  std::size_t max_positions);

}  // namespace longheads
