#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drt/data.hpp"
#include "drt/model.hpp"

namespace drt::training {

struct TrainConfig {
    double base_lr = 2e-3;
    double final_lr = 4e-4;
    double warmup_frac = 0.02;
    int64_t total_steps = 1000;
    int64_t batch_tokens = 4096;  // content tokens per optimizer step
    int64_t context_len = 1024;   // content tokens per row
    double mlm_rate = 0.15;
    double mlm_phase_frac = 0.5;  // fraction of steps with the masked objective on
    double weight_decay = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double clip_norm = 1.0;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    bool use_gumbel = true;
    bool use_mlm = true;
    double gumbel_temperature = 1.0;

    int batch_rows() const {
        return static_cast<int>(std::max<int64_t>(1, batch_tokens / context_len));
    }
    void validate() const {
        DRT_CONFIG_CHECK(base_lr > 0 && final_lr > 0 && final_lr <= base_lr,
                         "learning rates base=", base_lr, " final=", final_lr);
        DRT_CONFIG_CHECK(warmup_frac >= 0 && warmup_frac < 1, "warmup_frac=", warmup_frac);
        DRT_CONFIG_CHECK(mlm_phase_frac >= 0 && mlm_phase_frac <= 1,
                         "mlm_phase_frac=", mlm_phase_frac);
        DRT_CONFIG_CHECK(total_steps >= 1, "total_steps=", total_steps);
        DRT_CONFIG_CHECK(!use_mlm || (mlm_rate > 0 && mlm_rate < 1), "mlm_rate=", mlm_rate);
    }
};

template <typename T>
struct OptState {
    std::vector<Tensor<T>> m, v;  // first/second moments in named-tensor order
    int64_t step = 0;

    static OptState init(const ModelConfig& cfg);
};

// Mean NLL over positions where mask is true. An all-masked batch is a
// caller bug, not a zero.
template <typename T>
double autoregressive_loss(const Tensor<T>& logits, const std::vector<int32_t>& targets,
                           const std::vector<uint8_t>& mask);

// dloss/dlogits for the mean-NLL objective, scaled by 1/denom so per-row
// pieces of one batch can share a global denominator.
template <typename T>
Tensor<T> autoregressive_loss_backward(const Tensor<T>& logits,
                                       const std::vector<int32_t>& targets,
                                       const std::vector<uint8_t>& mask, int64_t denom);

// Independent coin per content position at `rate`; landmarks and pads are
// never masked. Labels keep the original ids.
model::MlmMask mlm_mask(const std::vector<int32_t>& laidout_ids, const ModelConfig& cfg,
                        double rate, Rng& rng);

template <typename T>
double mlm_loss(const Tensor<T>& mlm_logits, const std::vector<int32_t>& labels);

template <typename T>
Tensor<T> mlm_loss_backward(const Tensor<T>& mlm_logits, const std::vector<int32_t>& labels,
                            int64_t denom);

// Linear warmup to base_lr over warmup_frac*total_steps, cosine decay to
// final_lr at total_steps.
double lr_schedule(int64_t step, const TrainConfig& cfg);

struct StepMetrics {
    double ar_loss = 0;
    std::optional<double> mlm_loss;
    double grad_norm = 0;  // pre-clip global norm
    double lr = 0;
    std::optional<double> retrieval_hit_rate;
    std::optional<double> retrieval_chance_rate;
};

// Known recall pairs for one batch row, in row-local chunk indices.
struct RowEvents {
    std::vector<std::pair<int, int>> query_def;  // (query chunk, defining chunk)
};

// One deterministic optimizer step: forward/backward on every row (rows run
// in parallel, gradients reduce in row order), global-norm clipping,
// decoupled weight decay that skips gains and embeddings.
template <typename T>
StepMetrics train_step(const data::Batch& batch, model::Params<T>& params, OptState<T>& opt,
                       int64_t step, const TrainConfig& tcfg,
                       const std::vector<RowEvents>* events = nullptr);

// ---------------------------------------------------------------------------
// Verification harness

struct GradCheckEntry {
    std::string tensor;
    double max_rel_err = 0;  // |analytic - fd| / max(grad scale, |fd|)
    int64_t worst_coord = -1;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0;
    bool pass = true;

    std::string to_string() const;
};

// Kernel-level checks of the fused backward plus a full finite-difference
// sweep of every parameter tensor on the given config (double precision,
// noise off, selection frozen). corrupt_kernel_dv plants a known error to
// prove the harness can catch one.
GradCheckReport grad_check_suite(const ModelConfig& cfg, double tolerance,
                                 bool corrupt_kernel_dv = false);

}  // namespace drt::training
