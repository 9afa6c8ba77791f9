#pragma once

#include <optional>
#include <vector>

#include "drt/layout.hpp"
#include "drt/params.hpp"
#include "drt/retrieval.hpp"

namespace drt::model {

// Content positions whose encoder inputs get replaced by the mask
// embedding, with the original ids as labels. The decoder stream is never
// masked.
struct MlmMask {
    std::vector<int64_t> positions;  // laid-out positions, content offsets only
    std::vector<int32_t> labels;
    bool empty() const { return positions.empty(); }
};

// Test-harness hook pinning the selection at one (group, scoring chunk).
// With empty weights the fusion weights still come from the live scores (the
// differentiable path stays intact and backward() remains valid); explicitly
// forced weights sever that path and are for forward-only probes.
struct ForcedSelection {
    std::vector<int> indices;
    std::vector<double> weights;
};

struct ForwardOptions {
    bool training = false;
    bool gumbel = false;  // add exploration noise to selection (training only)
    double gumbel_temperature = 1.0;
    Rng* rng = nullptr;   // required when training && gumbel
    const MlmMask* mlm = nullptr;
    // Indexed [group][scoring chunk]; nullopt entries select normally.
    const std::vector<std::vector<std::optional<ForcedSelection>>>* retrieval_override = nullptr;
};

template <typename T>
struct DecLayerCache {
    Tensor<T> rstd1;     // per-position inverse rms of the attention sublayer input
    Tensor<T> attn_cat;  // concatenated head outputs before the output projection
    Tensor<T> x_mid;     // after the attention residual
    // upper layers only:
    Tensor<T> gca_rstd;
    std::vector<Tensor<T>> o_prime;  // per chunk: (n_sel, S+1, d)
    std::vector<Tensor<T>> lse;      // per chunk: (n_heads, S+1, n_sel)
    Tensor<T> x_gca;  // after the fused-retrieval residual norm
    Tensor<T> rstd2;
    Tensor<T> ffn_gate, ffn_up;  // pre-activation FFN halves
};

template <typename T>
struct ForwardCache {
    ModelConfig cfg;
    std::vector<int32_t> ids;
    ChunkLayout layout;
    std::vector<Tensor<T>> xs;  // layer-boundary activations, n_layers+1 entries
    std::vector<DecLayerCache<T>> dec;
    // encoder (empty when the identity path is active)
    Tensor<T> enc_in;
    std::vector<Tensor<T>> enc_xs;
    std::vector<DecLayerCache<T>> enc;
    Tensor<T> kproj, vproj;  // shared projections of chunk content rows, (n_c*S) x d
    std::vector<std::vector<retrieval::RetrievalSet>> rsets;  // [group][scoring chunk]
    MlmMask mlm;
    Tensor<T> final_rstd;

    // chunk-c content rows / landmark row of the encoder output
    const Tensor<T>& enc_out() const { return enc_xs.back(); }
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;      // total x vocab
    Tensor<T> mlm_logits;  // n_masked x vocab (0 x vocab when unmasked)
    std::vector<std::vector<retrieval::RetrievalSet>> rsets;  // [group][scoring chunk]
};

// Full teacher-forced pass over one laid-out row. When cache is non-null all
// intermediate state needed by backward() is retained.
template <typename T>
ForwardResult<T> forward(const std::vector<int32_t>& ids, const ChunkLayout& layout,
                         const Params<T>& params, const ForwardOptions& opts,
                         ForwardCache<T>* cache);

// Manual reverse pass. dlogits/dmlm_logits are gradients of the scalar loss
// w.r.t. the forward outputs; parameter gradients accumulate into grads.
template <typename T>
void backward(const ForwardCache<T>& cache, const Params<T>& params, const Tensor<T>& dlogits,
              const Tensor<T>& dmlm_logits, Params<T>& grads);

// ---------------------------------------------------------------------------
// Pieces shared with the incremental engine.

// rstd_out may be null; out = (x / rms(x)) * gain, row-wise over (rows x d).
template <typename T>
void rmsnorm_rows(const T* x, const T* gain, int64_t rows, int64_t d, T* out, T* rstd_out);

// Bidirectional per-chunk encoding of laid-out rows: in/out are
// (n_chunks*(S+1)) x d. Returns inputs unchanged when the identity path is
// active. mask_replace marks rows whose input is swapped for the mask
// embedding before position offsets are added.
template <typename T>
void encode_chunks(const Params<T>& params, const Tensor<T>& input_rows, int n_chunks,
                   Tensor<T>& out_rows, ForwardCache<T>* cache,
                   const std::vector<uint8_t>* mask_replace);

constexpr double kRmsEps = 1e-6;

}  // namespace drt::model
