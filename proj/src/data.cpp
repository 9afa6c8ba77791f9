#include "drt/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "drt/rng.hpp"

namespace drt::model {

std::pair<std::vector<int32_t>, ChunkLayout> insert_landmarks(const std::vector<int32_t>& tokens,
                                                              const ModelConfig& cfg) {
    const int s = cfg.chunk_size;
    DRT_CHECK(!tokens.empty() && tokens.size() % static_cast<size_t>(s) == 0,
              "token count ", tokens.size(), " is not a positive multiple of chunk_size ", s);
    ChunkLayout layout;
    layout.chunk_size = s;
    layout.n_chunks = static_cast<int>(tokens.size()) / s;
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(layout.total()));
    for (int c = 0; c < layout.n_chunks; ++c) {
        out.insert(out.end(), tokens.begin() + static_cast<int64_t>(c) * s,
                   tokens.begin() + static_cast<int64_t>(c + 1) * s);
        out.push_back(cfg.lmk_id());
    }
    return {std::move(out), layout};
}

std::vector<uint8_t> landmark_loss_mask(const ChunkLayout& layout) {
    std::vector<uint8_t> mask(static_cast<size_t>(layout.total()), 1);
    for (int c = 0; c < layout.n_chunks; ++c) {
        // the position whose target is the landmark
        mask[static_cast<size_t>(layout.landmark_pos(c) - 1)] = 0;
    }
    mask.back() = 0;  // no target
    return mask;
}

}  // namespace drt::model

namespace drt::data {

TokenStream ingest_corpus(const std::vector<std::string>& paths) {
    TokenStream stream;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError(detail::strcat("cannot read corpus file: ", path));
        stream.boundaries.push_back(static_cast<int64_t>(stream.ids.size()));
        char buf[65536];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
            for (std::streamsize i = 0; i < in.gcount(); ++i)
                stream.ids.push_back(static_cast<int32_t>(static_cast<unsigned char>(buf[i])));
        }
        if (in.bad()) throw IoError(detail::strcat("read error on corpus file: ", path));
    }
    return stream;
}

std::string detokenize(const std::vector<int32_t>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids)
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    return out;
}

Batcher::Batcher(const TokenStream& stream, const ModelConfig& cfg, int64_t context_len,
                 int batch_rows, uint64_t seed)
    : stream_(&stream), cfg_(cfg), context_len_(context_len), batch_rows_(batch_rows) {
    DRT_CONFIG_CHECK(context_len >= cfg.chunk_size && context_len % cfg.chunk_size == 0,
                     "context length ", context_len, " is not a multiple of chunk_size ",
                     cfg.chunk_size);
    DRT_CONFIG_CHECK(batch_rows >= 1, "batch_rows=", batch_rows);
    for (int d = 0; d < stream.n_docs(); ++d) {
        for (int64_t off = stream.doc_begin(d); off < stream.doc_end(d); off += context_len) {
            windows_.push_back({d, off, std::min(context_len, stream.doc_end(d) - off)});
        }
    }
    // Fisher-Yates with an explicit generator, reproducible across platforms.
    Rng rng(seed);
    for (int64_t i = static_cast<int64_t>(windows_.size()) - 1; i > 0; --i) {
        const int64_t j = rng.uniform_int(i + 1);
        std::swap(windows_[static_cast<size_t>(i)], windows_[static_cast<size_t>(j)]);
    }
}

BatchRow Batcher::window_row(int64_t window_index) const {
    const Window& w = windows_[static_cast<size_t>(window_index)];
    const int s = cfg_.chunk_size;
    const int64_t padded = (w.len + s - 1) / s * s;
    std::vector<int32_t> content(static_cast<size_t>(padded), cfg_.pad_id());
    std::copy(stream_->ids.begin() + w.offset, stream_->ids.begin() + w.offset + w.len,
              content.begin());

    BatchRow row;
    auto [ids, layout] = model::insert_landmarks(content, cfg_);
    row.ids = std::move(ids);
    row.layout = layout;
    row.loss_mask = model::landmark_loss_mask(layout);
    row.targets.assign(row.ids.size(), cfg_.pad_id());
    for (size_t i = 0; i + 1 < row.ids.size(); ++i) row.targets[i] = row.ids[i + 1];
    for (size_t i = 0; i < row.ids.size(); ++i) {
        if (row.ids[i] == cfg_.pad_id() || row.targets[i] == cfg_.pad_id()) row.loss_mask[i] = 0;
    }
    row.doc = w.doc;
    row.doc_offset = w.offset - stream_->doc_begin(w.doc);
    return row;
}

Batch Batcher::batch_at(int64_t step) const {
    DRT_CHECK(!windows_.empty(), "empty stream");
    Batch b;
    b.rows.reserve(static_cast<size_t>(batch_rows_));
    for (int r = 0; r < batch_rows_; ++r) {
        const int64_t w = (step * batch_rows_ + r) % n_windows();
        b.rows.push_back(window_row(w));
    }
    return b;
}

RecallCorpus synthetic_recall_corpus(int n_docs, int64_t doc_len, int n_keys, int gap,
                                     int chunk_size, uint64_t seed) {
    using A = RecallAlphabet;
    const int s = chunk_size;
    DRT_CONFIG_CHECK(n_docs >= 1, "n_docs=", n_docs);
    DRT_CONFIG_CHECK(s >= 1 + A::kKeyLen + A::kValLen, "chunk_size ", s,
                     " too small for a definition statement");
    DRT_CONFIG_CHECK(gap >= 1, "gap=", gap);
    DRT_CONFIG_CHECK(doc_len >= s && doc_len % s == 0, "doc_len ", doc_len,
                     " must be a positive multiple of chunk_size ", s);
    const int block = gap + 2;  // def chunk, gap-1 spacers, query-prompt chunk, query chunk
    const int n_chunks = static_cast<int>(doc_len / s);
    const int n_blocks = n_chunks / block;
    DRT_CONFIG_CHECK(n_blocks >= 4 && n_keys >= 1,
                     "infeasible geometry: gap ", gap, " too large for doc_len ", doc_len);
    const int first_query_block = std::max(3, n_blocks - n_keys);

    RecallCorpus corpus;
    corpus.chunk_size = s;
    corpus.doc_len = doc_len;
    Rng root(seed);
    for (int doc = 0; doc < n_docs; ++doc) {
        Rng rng = root.fork(static_cast<uint64_t>(doc) + 1);
        corpus.stream.boundaries.push_back(static_cast<int64_t>(corpus.stream.ids.size()));
        std::vector<int32_t> tokens(static_cast<size_t>(doc_len));
        for (auto& t : tokens) t = A::kFillBase + static_cast<int32_t>(rng.uniform_int(A::kFillSpan));

        std::set<std::pair<int32_t, int32_t>> used;
        for (int b = 0; b < n_blocks; ++b) {
            int32_t k1, k2;
            do {
                k1 = A::kKeyBase + static_cast<int32_t>(rng.uniform_int(A::kKeySpan));
                k2 = A::kKeyBase + static_cast<int32_t>(rng.uniform_int(A::kKeySpan));
            } while (!used.insert({k1, k2}).second);
            std::vector<int32_t> value(A::kValLen);
            for (auto& v : value) v = A::kValBase + static_cast<int32_t>(rng.uniform_int(A::kValSpan));

            const int def_chunk = b * block + 1;
            int64_t p = static_cast<int64_t>(def_chunk) * s;
            tokens[p] = A::kDef;
            tokens[p + 1] = k1;
            tokens[p + 2] = k2;
            for (int i = 0; i < A::kValLen; ++i) tokens[p + 3 + i] = value[static_cast<size_t>(i)];

            if (b < first_query_block) continue;
            const int query_chunk = b * block + block - 1;
            const int prompt_chunk = query_chunk - 1;
            int64_t tail = static_cast<int64_t>(prompt_chunk + 1) * s - (A::kKeyLen + 1);
            tokens[tail] = A::kQry;
            tokens[tail + 1] = k1;
            tokens[tail + 2] = k2;
            int64_t q = static_cast<int64_t>(query_chunk) * s;
            tokens[q] = A::kSep;
            RecallEvent ev;
            ev.doc = doc;
            ev.def_chunk = def_chunk;
            ev.query_chunk = query_chunk;
            for (int i = 0; i < A::kValLen; ++i) {
                tokens[q + 1 + i] = value[static_cast<size_t>(i)];
                ev.value_positions.push_back(q + 1 + i);
            }
            corpus.events.push_back(std::move(ev));
        }
        corpus.stream.ids.insert(corpus.stream.ids.end(), tokens.begin(), tokens.end());
    }
    return corpus;
}

}  // namespace drt::data
