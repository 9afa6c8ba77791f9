#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "drt/config.hpp"

namespace drt::model {

// Mapping between a raw content-token stream and the landmark-augmented
// sequence the decoder actually sees: every chunk_size content tokens are
// followed by one landmark token.
struct ChunkLayout {
    int n_chunks = 0;
    int chunk_size = 0;

    int stride() const { return chunk_size + 1; }
    int64_t total() const { return static_cast<int64_t>(n_chunks) * stride(); }
    int64_t chunk_begin(int c) const { return static_cast<int64_t>(c) * stride(); }
    int64_t landmark_pos(int c) const { return chunk_begin(c) + chunk_size; }
    int chunk_of(int64_t pos) const { return static_cast<int>(pos / stride()); }
    bool is_landmark(int64_t pos) const { return pos % stride() == chunk_size; }
    // content-token index -> laid-out position
    int64_t laidout(int64_t content_pos) const { return content_pos + content_pos / chunk_size; }
};

// Appends the landmark id after every chunk_size content tokens. The input
// length must already be a chunk multiple (batching pads with pad_id first).
std::pair<std::vector<int32_t>, ChunkLayout> insert_landmarks(const std::vector<int32_t>& tokens,
                                                              const ModelConfig& cfg);

// True wherever the next-token target exists and is not a landmark. The
// final position has no target and is always false.
std::vector<uint8_t> landmark_loss_mask(const ChunkLayout& layout);

}  // namespace drt::model
