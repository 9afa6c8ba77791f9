#pragma once

#include <functional>
#include <vector>

#include "drt/tensor.hpp"

namespace drt::kernels {

// Cache-blocking tile sizes for the fused kernels. On this CPU port the
// tiles bound the working set per inner loop instead of SRAM occupancy;
// any sizes within [1, n_q] x [1, n_kv] give the same result up to
// floating-point reassociation.
struct BlockSpec {
    int query_rows = 16;
    int key_cols = 16;
};

// Per-head strided matrix view: `rows` rows of width `width`, consecutive
// rows `stride` scalars apart. Lets the fused kernels run directly on one
// head's column slice of a concatenated-heads buffer.
template <typename T>
struct Strided {
    T* p = nullptr;
    int64_t rows = 0;
    int64_t width = 0;
    int64_t stride = 0;
};
template <typename T>
struct ConstStrided {
    const T* p = nullptr;
    int64_t rows = 0;
    int64_t width = 0;
    int64_t stride = 0;
    ConstStrided() = default;
    ConstStrided(const T* p_, int64_t r, int64_t w, int64_t s) : p(p_), rows(r), width(w), stride(s) {}
    ConstStrided(const Strided<T>& s) : p(s.p), rows(s.rows), width(s.width), stride(s.stride) {}
};

// ---------------------------------------------------------------------------
// Dense references

// Plain softmax(Q Kᵀ / sqrt(d)) V. Scores and the output row accumulate in
// double regardless of T.
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

// Fusion-weighted cross-attention over a stack of chunks:
//   out = Σ_k w[k] · cross_attention(q, keys[k], values[k])
// keys/values are (K, n_kv, d); w must sum to 1 within 1e-6. This is the
// oracle the blocked kernel is checked against.
template <typename T>
Tensor<T> gca_reference(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values,
                        const std::vector<T>& w);

// ---------------------------------------------------------------------------
// Blocked fused kernel (online softmax)

template <typename T>
struct GcaForwardOut {
    Tensor<T> out;        // (n_q, d)       fused output Σ_k w_k · per_chunk[k]
    Tensor<T> per_chunk;  // (K, n_q, d)    normalized per-chunk attention outputs
    Tensor<T> lse;        // (n_q, K)       log Σ_j exp(q_i·k_j/sqrt(d)) per chunk
};

template <typename T>
struct GcaGrads {
    Tensor<T> dq;       // (n_q, d)
    Tensor<T> dkeys;    // (K, n_kv, d)
    Tensor<T> dvalues;  // (K, n_kv, d)
    std::vector<T> dw;  // (K)
};

// Forward pass of the fused kernel. Streams key/value tiles per chunk while
// maintaining a running row max m and running normalizer l, so the softmax
// never materializes. per_chunk and lse are kept for the backward pass.
template <typename T>
GcaForwardOut<T> flash_gca_forward(const Tensor<T>& q, const Tensor<T>& keys,
                                   const Tensor<T>& values, const std::vector<T>& w,
                                   BlockSpec blocks = {});

// Backward pass. Recomputes the probability tiles from lse instead of
// storing them: P = exp(QKᵀ/sqrt(d) - lse). With D = rowsum(dout ∘ per_chunk),
//   dvalues[k] += (w_k P)ᵀ dout
//   dS         = w_k P ∘ (dP - D[:,k]),  dP = dout Vᵀ
//   dw[k]      = Σ_rows rowsum(P ∘ dP)
// Gradients are exact for the loss <dout, out>.
template <typename T>
GcaGrads<T> flash_gca_backward(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values,
                               const std::vector<T>& w, const Tensor<T>& per_chunk,
                               const Tensor<T>& lse, const Tensor<T>& dout,
                               BlockSpec blocks = {});

// ---------------------------------------------------------------------------
// Strided per-head entry points used by the model. Same math as the Tensor
// overloads; outputs are written (forward) or accumulated (backward) into
// caller-owned buffers.

template <typename T>
void flash_gca_forward_head(ConstStrided<T> q, const std::vector<ConstStrided<T>>& keys,
                            const std::vector<ConstStrided<T>>& values, const T* w,
                            Strided<T> out, Strided<T> per_chunk_base, int64_t per_chunk_slab,
                            T* lse, BlockSpec blocks);

template <typename T>
void flash_gca_backward_head(ConstStrided<T> q, const std::vector<ConstStrided<T>>& keys,
                             const std::vector<ConstStrided<T>>& values, const T* w,
                             ConstStrided<T> per_chunk_base, int64_t per_chunk_slab, const T* lse,
                             ConstStrided<T> dout, Strided<T> dq,
                             const std::vector<Strided<T>>& dkeys,
                             const std::vector<Strided<T>>& dvalues, double* dw,
                             BlockSpec blocks);

// ---------------------------------------------------------------------------
// Sliding-window causal self-attention (single head)

// Row i attends positions [max(0, i-window+1), i] with additive bias
// -slope*(i-j). q/k/v are (n, d) views; out must not alias the inputs.
template <typename T>
void sliding_window_attention_head(ConstStrided<T> q, ConstStrided<T> k, ConstStrided<T> v,
                                   int window, double slope, Strided<T> out);

template <typename T>
Tensor<T> sliding_window_self_attention(const Tensor<T>& q, const Tensor<T>& k,
                                        const Tensor<T>& v, int window, double slope);

// One query row against an explicit span of cached rows at absolute
// positions [pos0, pos0+count). Incremental decoding shares this with the
// batch path so both produce identical accumulation order.
template <typename T>
void attend_window_row(const T* qrow, const T* keys, const T* values, int64_t count,
                       int64_t stride, int64_t width, double slope, int64_t qpos, int64_t pos0,
                       T* out);

// Geometric head slopes 2^(-8(h+1)/n_heads), the usual linear-bias series.
std::vector<double> alibi_slopes(int n_heads);

// ---------------------------------------------------------------------------
// Gradient oracle

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps per coordinate.
// Restarts from a pristine copy of x for every probe; f must be
// deterministic. Throws if f returns a non-finite value.
Tensor<double> finite_difference_grad(const std::function<double(const Tensor<double>&)>& f,
                                      const Tensor<double>& x, double eps);

}  // namespace drt::kernels
