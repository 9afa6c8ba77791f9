#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drt/config.hpp"
#include "drt/layout.hpp"

namespace drt::data {

// Byte-level token stream with document boundaries (one entry per ingested
// document, including empty ones).
struct TokenStream {
    std::vector<int32_t> ids;
    std::vector<int64_t> boundaries;  // start offset of each document, sorted

    int n_docs() const { return static_cast<int>(boundaries.size()); }
    int64_t doc_begin(int i) const { return boundaries[static_cast<size_t>(i)]; }
    int64_t doc_end(int i) const {
        return i + 1 < n_docs() ? boundaries[static_cast<size_t>(i) + 1]
                                : static_cast<int64_t>(ids.size());
    }
};

// Reads files as raw bytes, token id == byte value. Throws IoError naming
// the offending path.
TokenStream ingest_corpus(const std::vector<std::string>& paths);

std::string detokenize(const std::vector<int32_t>& ids);

// One training/eval row: a laid-out window of a single document.
struct BatchRow {
    std::vector<int32_t> ids;        // with landmarks appended per chunk
    std::vector<int32_t> targets;    // ids shifted left by one; last entry is pad
    std::vector<uint8_t> loss_mask;  // true where the AR loss applies
    model::ChunkLayout layout;
    int doc = -1;
    int64_t doc_offset = 0;  // content-token offset of this window inside the doc
};

struct Batch {
    std::vector<BatchRow> rows;
};

// Deterministic window enumeration over a stream: non-overlapping contiguous
// windows per document, short tails padded with pad_id up to a chunk
// multiple, window order shuffled by seed. batch_at(step) is a pure function
// of the step index, so interrupted runs resume exactly.
class Batcher {
  public:
    Batcher(const TokenStream& stream, const ModelConfig& cfg, int64_t context_len,
            int batch_rows, uint64_t seed);

    int64_t n_windows() const { return static_cast<int64_t>(windows_.size()); }
    int batch_rows() const { return batch_rows_; }
    Batch batch_at(int64_t step) const;
    BatchRow window_row(int64_t window_index) const;

  private:
    struct Window {
        int doc;
        int64_t offset;  // content offset within the stream
        int64_t len;     // content tokens available (<= context_len)
    };

    const TokenStream* stream_;
    ModelConfig cfg_;
    int64_t context_len_;
    int batch_rows_;
    std::vector<Window> windows_;
};

// ---------------------------------------------------------------------------
// Synthetic long-range recall corpus.
//
// Documents are tiled into blocks of (gap + 2) chunks. Every block defines a
// fresh key/value pair inside a single chunk; the last n_keys blocks (from
// block 3 on) also query it: the key is restated at the end of the chunk
// before the query chunk, and the value tokens open the query chunk, exactly
// gap chunks after the definition. The value alphabet is disjoint from
// filler and keys and values are i.i.d. uniform per (doc, key), so value
// tokens are unpredictable unless the defining chunk is brought back in.

struct RecallEvent {
    int doc = 0;
    int def_chunk = 0;    // chunk holding the definition
    int query_chunk = 0;  // chunk whose opening tokens repeat the value
    std::vector<int64_t> value_positions;  // content positions (doc-relative) of value tokens
};

struct RecallCorpus {
    TokenStream stream;
    std::vector<RecallEvent> events;
    int chunk_size = 0;
    int64_t doc_len = 0;
};

struct RecallAlphabet {
    static constexpr int32_t kDef = 1;
    static constexpr int32_t kQry = 2;
    static constexpr int32_t kSep = 3;
    static constexpr int32_t kKeyBase = 16, kKeySpan = 32;
    static constexpr int32_t kValBase = 48, kValSpan = 32;
    static constexpr int32_t kFillBase = 160, kFillSpan = 64;
    static constexpr int kKeyLen = 2;
    static constexpr int kValLen = 6;
};

RecallCorpus synthetic_recall_corpus(int n_docs, int64_t doc_len, int n_keys, int gap,
                                     int chunk_size, uint64_t seed);

}  // namespace drt::data
