#include "longheads/remapper.hpp"

#include <stdexcept>
#include <string>

#include "longheads/config.hpp"

namespace longheads {

PositionMap remap(std::span<const std::size_t> chunks, const ChunkLayout& layout, std::size_t recent_len,
                  std::size_t max_positions) {
    if (recent_len > layout.n()) {
        throw std::invalid_argument("remap: recent region longer than the sequence");
    }
    const std::size_t recent_begin = layout.n() - recent_len;

    PositionMap map;
    map.segments.reserve(chunks.size() + 1);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (i > 0 && chunks[i] <= chunks[i - 1]) {
            throw std::invalid_argument("remap: selected chunks must be strictly ascending");
        }
        const ChunkBounds original = layout.bounds(chunks[i]);
        if (original.end > recent_begin) {
            throw std::invalid_argument("remap: chunk " + std::to_string(chunks[i]) + " overlaps the recent region");
        }
        map.segments.push_back({SegmentKind::Chunk, chunks[i], original, {cursor, cursor + original.size()}});
        cursor += original.size();
    }
    if (recent_len > 0) {
        map.segments.push_back(
            {SegmentKind::Recent, 0, {recent_begin, layout.n()}, {cursor, cursor + recent_len}});
        cursor += recent_len;
    }
    if (cursor + 1 > max_positions) {
        throw CapacityError("remap: " + std::to_string(cursor) + " remapped rows plus the query exceed the " +
                            std::to_string(max_positions) + " available positions");
    }
    map.query_position = cursor;
    return map;
}

}  // namespace longheads
