#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drt/config.hpp"
#include "drt/rng.hpp"
#include "drt/tensor.hpp"

namespace drt::model {

template <typename T>
struct LayerParams {
    Tensor<T> attn_gain;  // d
    Tensor<T> wq, wk, wv, wo;  // d x d
    Tensor<T> ffn_gain;   // d
    Tensor<T> w_gate, w_up;    // d x ffn
    Tensor<T> w_down;          // ffn x d
};

// All learnable tensors. The cross-chunk attention keeps one query
// projection per upper layer but a single shared key/value projection pair,
// and the two output heads are separate from the embedding.
template <typename T>
struct Params {
    ModelConfig cfg;
    Tensor<T> embedding;                   // vocab x d
    std::vector<LayerParams<T>> layers;    // n_layers
    std::vector<Tensor<T>> gca_wq;         // n_layers/2 of d x d
    std::vector<Tensor<T>> gca_gain;       // n_layers/2 of d
    Tensor<T> gca_wk, gca_wv;              // d x d, layer-shared
    Tensor<T> enc_pos;                     // (chunk_size+1) x d
    std::vector<LayerParams<T>> encoder;   // encoder_layers
    Tensor<T> final_gain;                  // d
    Tensor<T> lm_head;                     // d x vocab
    Tensor<T> mlm_head;                    // d x vocab

    // Stable-order visitation; the same order backs initialization,
    // checkpoints, optimizer state and gradient reports.
    void for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

    int64_t param_count() const;

    // init scheme: projections and embeddings ~ N(0, 0.02^2), output heads
    // ~ N(0, (0.02/sqrt(d))^2) so an untrained model scores near-uniform,
    // norm gains at one. Bit-deterministic in the seed.
    static Params init(const ModelConfig& cfg, uint64_t seed);
    static Params zeros_like(const ModelConfig& cfg);

    // closed-form count: 3*V*d + (S+1)*d + d + (N+E)*(4d^2 + 3*d*f + 2d)
    //                    + (N/2)*(d^2 + d) + 2*d^2
    static int64_t expected_param_count(const ModelConfig& cfg);
};

}  // namespace drt::model
