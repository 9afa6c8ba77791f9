#pragma once

#include <cstdint>

#include "drt/common.hpp"
#include "drt/retrieval.hpp"

namespace drt {

// Where the chunk encoder reads its inputs from.
enum class EncoderInput {
    kLowerLayers,      // hidden states at the top of the lower decoder stack
    kTokenEmbeddings,  // raw token embeddings (re-encodable at inference)
};

struct ModelConfig {
    int vocab = 259;  // 256 byte values + landmark/mask/pad
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 8;  // even; lower half plain, upper half with fused retrieval attention
    int n_groups = 2;  // divides n_layers/2
    int chunk_size = 16;
    int window = 64;  // sliding-window width in laid-out positions
    int top_k = 4;
    int ffn_dim = 256;
    int encoder_layers = 2;
    int64_t max_context = 2048;  // content tokens per sequence
    EncoderInput encoder_input = EncoderInput::kLowerLayers;
    bool use_encoder = true;    // false: chunk representations pass through unencoded
    bool use_retrieval = true;  // false: plain sliding-window decoder, no cross-chunk path
    bool decoder_pos_bias = true;

    int head_dim() const { return d_model / n_heads; }
    int lower_layers() const { return n_layers / 2; }
    int upper_layers() const { return n_layers / 2; }
    int layers_per_group() const { return (n_layers / 2) / n_groups; }
    retrieval::GroupSpec group_spec() const { return {n_layers, n_groups}; }

    // special token ids live at the top of the vocabulary
    int32_t lmk_id() const { return vocab - 3; }
    int32_t mask_id() const { return vocab - 2; }
    int32_t pad_id() const { return vocab - 1; }
    int32_t content_vocab() const { return vocab - 3; }

    void validate() const {
        DRT_CONFIG_CHECK(vocab >= 4, "vocab must hold 3 special ids, got ", vocab);
        DRT_CONFIG_CHECK(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0,
                         "d_model=", d_model, " not divisible by n_heads=", n_heads);
        DRT_CONFIG_CHECK(n_layers >= 2 && n_layers % 2 == 0, "n_layers must be even, got ",
                         n_layers);
        DRT_CONFIG_CHECK(n_groups >= 1 && (n_layers / 2) % n_groups == 0, "n_groups=", n_groups,
                         " must divide ", n_layers / 2);
        DRT_CONFIG_CHECK(chunk_size >= 1, "chunk_size=", chunk_size);
        DRT_CONFIG_CHECK(window >= chunk_size + 1, "window=", window,
                         " must cover a laid-out chunk of ", chunk_size + 1);
        DRT_CONFIG_CHECK(top_k >= 1, "top_k=", top_k);
        DRT_CONFIG_CHECK(ffn_dim >= 1, "ffn_dim=", ffn_dim);
        DRT_CONFIG_CHECK(encoder_layers >= 0, "encoder_layers=", encoder_layers);
        DRT_CONFIG_CHECK(max_context >= chunk_size && max_context % chunk_size == 0,
                         "max_context=", max_context, " must be a multiple of chunk_size=",
                         chunk_size);
    }
};

}  // namespace drt
