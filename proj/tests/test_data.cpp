#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "drt/data.hpp"
#include "testutil.hpp"

using namespace drt;
using namespace drt::data;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    return path.string();
}

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.chunk_size = 2;
    cfg.window = 3;
    cfg.vocab = 259;
    cfg.max_context = 8;
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("ingest: byte values, empty files, boundaries, round trip") {
    auto p1 = write_temp("drt_ingest_a.bin", "ab");
    auto p2 = write_temp("drt_ingest_b.bin", "");
    auto stream = ingest_corpus({p1, p2});
    CHECK(stream.ids == std::vector<int32_t>{97, 98});
    CHECK(stream.boundaries.size() == 2);
    CHECK(stream.doc_begin(1) == 2);
    CHECK(stream.doc_end(1) == 2);
    CHECK(detokenize(stream.ids) == "ab");

    CHECK_THROWS_AS((void)ingest_corpus({"/nonexistent/drt_missing"}), IoError);
    try {
        (void)ingest_corpus({"/nonexistent/drt_missing"});
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("drt_missing") != std::string::npos);
    }
}

TEST_CASE("insert_landmarks builds the laid-out stream and loss mask") {
    auto cfg = tiny_cfg();
    auto [ids, layout] = model::insert_landmarks({10, 11, 12, 13}, cfg);
    CHECK(ids == std::vector<int32_t>{10, 11, cfg.lmk_id(), 12, 13, cfg.lmk_id()});
    CHECK(layout.n_chunks == 2);
    CHECK(layout.total() == 6);
    CHECK(layout.landmark_pos(0) == 2);
    CHECK(layout.is_landmark(5));
    CHECK(layout.laidout(2) == 3);

    auto [ids1, layout1] = model::insert_landmarks({10, 11}, cfg);
    CHECK(ids1.size() == 3);
    CHECK(layout1.n_chunks == 1);

    auto mask = model::landmark_loss_mask(layout);
    CHECK(mask == std::vector<uint8_t>{1, 0, 1, 1, 0, 0});

    CHECK_THROWS_AS((void)model::insert_landmarks({1, 2, 3}, cfg), ContractViolation);
}

TEST_CASE("batcher: windows, padding, determinism, no doc spanning") {
    auto cfg = tiny_cfg();
    TokenStream stream;
    stream.ids = {1, 2, 3, 4, 5};  // one doc of 2S+1 tokens with S=2
    stream.boundaries = {0};
    Batcher batcher(stream, cfg, 4, 1, 7);
    CHECK(batcher.n_windows() == 2);

    bool saw_padded = false;
    for (int64_t w = 0; w < 2; ++w) {
        auto row = batcher.window_row(w);
        if (row.doc_offset == 4) {
            // tail window: one content token + one pad to reach a chunk multiple
            CHECK(row.layout.n_chunks == 1);
            CHECK(row.ids == std::vector<int32_t>{5, cfg.pad_id(), cfg.lmk_id()});
            CHECK(row.loss_mask == std::vector<uint8_t>{0, 0, 0});
            saw_padded = true;
        } else {
            CHECK(row.layout.n_chunks == 2);
            CHECK(row.ids == std::vector<int32_t>{1, 2, cfg.lmk_id(), 3, 4, cfg.lmk_id()});
            // position 0 predicts 2; position 1 predicts the landmark (masked);
            // landmark predicts 3 (kept)
            CHECK(row.loss_mask == std::vector<uint8_t>{1, 0, 1, 1, 0, 0});
            CHECK(row.targets[2] == 3);
        }
    }
    CHECK(saw_padded);

    Batcher again(stream, cfg, 4, 1, 7);
    for (int64_t s = 0; s < 4; ++s) {
        auto a = batcher.batch_at(s);
        auto b = again.batch_at(s);
        CHECK(a.rows[0].ids == b.rows[0].ids);
        CHECK(a.rows[0].doc_offset == b.rows[0].doc_offset);
    }

    // windows never cross document boundaries
    TokenStream two;
    two.ids = {1, 2, 3, 4, 5, 6, 7};
    two.boundaries = {0, 3};
    Batcher b2(two, cfg, 4, 1, 1);
    for (int64_t w = 0; w < b2.n_windows(); ++w) {
        auto row = b2.window_row(w);
        int64_t start = two.doc_begin(row.doc) + row.doc_offset;
        int64_t content = 0;
        for (auto id : row.ids)
            if (id != cfg.lmk_id() && id != cfg.pad_id()) ++content;
        CHECK(start + content <= two.doc_end(row.doc));
    }

    CHECK_THROWS_AS(Batcher(stream, cfg, 5, 1, 7), ConfigError);
}

TEST_CASE("synthetic recall corpus: geometry, separation, determinism") {
    const int S = 16, gap = 6;
    auto corpus = synthetic_recall_corpus(4, 1024, 5, gap, S, 42);
    CHECK(corpus.stream.n_docs() == 4);
    CHECK(corpus.stream.ids.size() == 4 * 1024);
    CHECK(!corpus.events.empty());

    // definitions sit at least `gap` chunks before their query, outside a
    // 64-position window once landmarks are inserted
    CHECK(gap * (S + 1) > 64);
    for (const auto& ev : corpus.events) {
        CHECK(ev.query_chunk - ev.def_chunk >= gap);
        for (int64_t p : ev.value_positions) {
            int32_t tok = corpus.stream.ids[static_cast<size_t>(corpus.stream.doc_begin(ev.doc) + p)];
            CHECK(tok >= RecallAlphabet::kValBase);
            CHECK(tok < RecallAlphabet::kValBase + RecallAlphabet::kValSpan);
        }
        // the defining chunk repeats the same value tokens
        int64_t def_base = corpus.stream.doc_begin(ev.doc) +
                           static_cast<int64_t>(ev.def_chunk) * S;
        for (size_t i = 0; i < ev.value_positions.size(); ++i) {
            int64_t vp = corpus.stream.doc_begin(ev.doc) + ev.value_positions[i];
            CHECK(corpus.stream.ids[static_cast<size_t>(def_base + 3 + static_cast<int64_t>(i))] ==
                  corpus.stream.ids[static_cast<size_t>(vp)]);
        }
    }

    auto corpus2 = synthetic_recall_corpus(4, 1024, 5, gap, S, 42);
    CHECK(corpus.stream.ids == corpus2.stream.ids);

    auto corpus3 = synthetic_recall_corpus(4, 1024, 5, gap, S, 43);
    CHECK(corpus.stream.ids != corpus3.stream.ids);

    CHECK_THROWS_AS((void)synthetic_recall_corpus(1, 64, 5, 30, S, 1), ConfigError);
}
