#include "drt/model.hpp"

#include <algorithm>
#include <cmath>

#include "drt/kernels.hpp"
#include "drt/opcount.hpp"

namespace drt::model {

using kernels::ConstStrided;
using kernels::Strided;

// ---------------------------------------------------------------------------
// Params

template <typename T>
static void visit_layer(const std::string& prefix, LayerParams<T>& lp,
                        const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn(prefix + ".attn_norm", lp.attn_gain);
    fn(prefix + ".wq", lp.wq);
    fn(prefix + ".wk", lp.wk);
    fn(prefix + ".wv", lp.wv);
    fn(prefix + ".wo", lp.wo);
    fn(prefix + ".ffn_norm", lp.ffn_gain);
    fn(prefix + ".w_gate", lp.w_gate);
    fn(prefix + ".w_up", lp.w_up);
    fn(prefix + ".w_down", lp.w_down);
}

template <typename T>
void Params<T>::for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("embedding", embedding);
    for (size_t i = 0; i < layers.size(); ++i)
        visit_layer(detail::strcat("dec.", i), layers[i], fn);
    for (size_t u = 0; u < gca_wq.size(); ++u) {
        fn(detail::strcat("gca.", u, ".wq"), gca_wq[u]);
        fn(detail::strcat("gca.", u, ".norm"), gca_gain[u]);
    }
    fn("gca.wk", gca_wk);
    fn("gca.wv", gca_wv);
    fn("enc.pos", enc_pos);
    for (size_t e = 0; e < encoder.size(); ++e)
        visit_layer(detail::strcat("enc.", e), encoder[e], fn);
    fn("final_norm", final_gain);
    fn("lm_head", lm_head);
    fn("mlm_head", mlm_head);
}

template <typename T>
void Params<T>::for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    const_cast<Params<T>*>(this)->for_each(
        [&](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <typename T>
int64_t Params<T>::param_count() const {
    int64_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
}

template <typename T>
int64_t Params<T>::expected_param_count(const ModelConfig& cfg) {
    const int64_t V = cfg.vocab, d = cfg.d_model, f = cfg.ffn_dim;
    const int64_t N = cfg.n_layers, E = cfg.encoder_layers, S = cfg.chunk_size;
    return 3 * V * d + (S + 1) * d + d + (N + E) * (4 * d * d + 3 * d * f + 2 * d) +
           (N / 2) * (d * d + d) + 2 * d * d;
}

template <typename T>
static LayerParams<T> make_layer(const ModelConfig& cfg) {
    LayerParams<T> lp;
    const int64_t d = cfg.d_model, f = cfg.ffn_dim;
    lp.attn_gain = Tensor<T>({d});
    lp.wq = Tensor<T>({d, d});
    lp.wk = Tensor<T>({d, d});
    lp.wv = Tensor<T>({d, d});
    lp.wo = Tensor<T>({d, d});
    lp.ffn_gain = Tensor<T>({d});
    lp.w_gate = Tensor<T>({d, f});
    lp.w_up = Tensor<T>({d, f});
    lp.w_down = Tensor<T>({f, d});
    return lp;
}

template <typename T>
Params<T> Params<T>::zeros_like(const ModelConfig& cfg) {
    cfg.validate();
    Params<T> p;
    p.cfg = cfg;
    const int64_t d = cfg.d_model;
    p.embedding = Tensor<T>({cfg.vocab, d});
    for (int i = 0; i < cfg.n_layers; ++i) p.layers.push_back(make_layer<T>(cfg));
    for (int u = 0; u < cfg.upper_layers(); ++u) {
        p.gca_wq.emplace_back(Tensor<T>({d, d}));
        p.gca_gain.emplace_back(Tensor<T>({d}));
    }
    p.gca_wk = Tensor<T>({d, d});
    p.gca_wv = Tensor<T>({d, d});
    p.enc_pos = Tensor<T>({cfg.chunk_size + 1, d});
    for (int e = 0; e < cfg.encoder_layers; ++e) p.encoder.push_back(make_layer<T>(cfg));
    p.final_gain = Tensor<T>({d});
    p.lm_head = Tensor<T>({d, cfg.vocab});
    p.mlm_head = Tensor<T>({d, cfg.vocab});
    return p;
}

template <typename T>
Params<T> Params<T>::init(const ModelConfig& cfg, uint64_t seed) {
    Params<T> p = zeros_like(cfg);
    Rng root(seed);
    const double head_std = 0.02 / std::sqrt(static_cast<double>(cfg.d_model));
    int64_t index = 0;
    p.for_each([&](const std::string& name, Tensor<T>& t) {
        Rng rng = root.fork(static_cast<uint64_t>(index++));
        if (name.find("norm") != std::string::npos) {
            t.fill(T(1));
        } else if (name == "lm_head" || name == "mlm_head") {
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(head_std * rng.normal());
        } else {
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(0.02 * rng.normal());
        }
    });
    return p;
}

// ---------------------------------------------------------------------------
// Sublayer helpers

template <typename T>
void rmsnorm_rows(const T* x, const T* gain, int64_t rows, int64_t d, T* out, T* rstd_out) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        double ms = 0;
        for (int64_t c = 0; c < d; ++c) ms += static_cast<double>(xr[c]) * static_cast<double>(xr[c]);
        const double rstd = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsEps);
        T* o = out + r * d;
        for (int64_t c = 0; c < d; ++c)
            o[c] = static_cast<T>(static_cast<double>(xr[c]) * rstd * static_cast<double>(gain[c]));
        if (rstd_out) rstd_out[r] = static_cast<T>(rstd);
    }
}

// dx += rmsnorm gradient; dgain accumulates.
template <typename T>
static void rmsnorm_backward_rows(const T* x, const T* gain, const T* rstd, const T* dy,
                                  int64_t rows, int64_t d, T* dx, T* dgain) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        const T* dyr = dy + r * d;
        const double rs = static_cast<double>(rstd[r]);
        double dot = 0;
        for (int64_t c = 0; c < d; ++c)
            dot += static_cast<double>(dyr[c]) * static_cast<double>(gain[c]) *
                   static_cast<double>(xr[c]);
        const double k = dot * rs * rs * rs / static_cast<double>(d);
        T* dxr = dx + r * d;
        for (int64_t c = 0; c < d; ++c) {
            dxr[c] += static_cast<T>(static_cast<double>(dyr[c]) * static_cast<double>(gain[c]) * rs -
                                     k * static_cast<double>(xr[c]));
            dgain[c] += static_cast<T>(static_cast<double>(dyr[c]) * static_cast<double>(xr[c]) * rs);
        }
    }
}

namespace {

enum class AttnKind { kSlidingCausal, kFullChunk };

// q/k/v projections plus the head-wise attention pattern; writes the
// concatenated head outputs (rows x d). Window MACs are only metered for the
// decoder's sliding pattern, matching the complexity model.
template <typename T>
void attention_forward(const ModelConfig& cfg, AttnKind kind, const Tensor<T>& normed,
                       const LayerParams<T>& lp, const std::vector<double>& slopes,
                       Tensor<T>& attn_cat) {
    const int64_t rows = normed.dim(0), d = cfg.d_model, dh = cfg.head_dim();
    Tensor<T> q({rows, d}), k({rows, d}), v({rows, d});
    q.mat().noalias() = normed.mat() * lp.wq.mat();
    k.mat().noalias() = normed.mat() * lp.wk.mat();
    v.mat().noalias() = normed.mat() * lp.wv.mat();

    if (kind == AttnKind::kSlidingCausal) {
        const int w = cfg.window;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const int64_t off = static_cast<int64_t>(h) * dh;
            kernels::sliding_window_attention_head<T>(
                ConstStrided<T>(q.data() + off, rows, dh, d),
                ConstStrided<T>(k.data() + off, rows, dh, d),
                ConstStrided<T>(v.data() + off, rows, dh, d), w, slopes[static_cast<size_t>(h)],
                Strided<T>{attn_cat.data() + off, rows, dh, d});
        }
        uint64_t pairs = 0;
        for (int64_t i = 0; i < rows; ++i) pairs += static_cast<uint64_t>(std::min<int64_t>(i + 1, w));
        ops::add_window(pairs * 2 * static_cast<uint64_t>(d));
    } else {
        const int64_t stride_rows = cfg.chunk_size + 1;
        for (int64_t c0 = 0; c0 < rows; c0 += stride_rows) {
            const int64_t n = std::min<int64_t>(stride_rows, rows - c0);
            for (int h = 0; h < cfg.n_heads; ++h) {
                const int64_t off = static_cast<int64_t>(h) * dh;
                for (int64_t i = 0; i < n; ++i) {
                    kernels::attend_window_row<T>(q.data() + (c0 + i) * d + off,
                                                  k.data() + c0 * d + off, v.data() + c0 * d + off,
                                                  n, d, dh, 0.0, i, 0,
                                                  attn_cat.data() + (c0 + i) * d + off);
                }
            }
        }
    }
}

// Reverse of attention_forward. Recomputes q/k/v and the per-row softmax
// rather than storing them. dnormed accumulates; weight grads accumulate.
template <typename T>
void attention_backward(const ModelConfig& cfg, AttnKind kind, const Tensor<T>& normed,
                        const LayerParams<T>& lp, const std::vector<double>& slopes,
                        const Tensor<T>& dattn_cat, Tensor<T>& dnormed, LayerParams<T>& g) {
    const int64_t rows = normed.dim(0), d = cfg.d_model, dh = cfg.head_dim();
    Tensor<T> q({rows, d}), k({rows, d}), v({rows, d});
    q.mat().noalias() = normed.mat() * lp.wq.mat();
    k.mat().noalias() = normed.mat() * lp.wk.mat();
    v.mat().noalias() = normed.mat() * lp.wv.mat();

    Tensor<T> dq({rows, d}), dk({rows, d}), dv({rows, d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> p, dp;

    auto head_block = [&](int h, int64_t base, int64_t n, int64_t j0_of_i_lo, bool causal,
                          double slope) {
        // rows [base, base+n): query i attends [j_lo(i), i] (causal) or [0, n)
        const int64_t off = static_cast<int64_t>(h) * dh;
        for (int64_t i = 0; i < n; ++i) {
            const int64_t j_lo = causal ? std::max<int64_t>(0, i - j0_of_i_lo + 1) : 0;
            const int64_t j_hi = causal ? i : n - 1;
            const int64_t cnt = j_hi - j_lo + 1;
            p.resize(static_cast<size_t>(cnt));
            dp.resize(static_cast<size_t>(cnt));
            const T* qi = q.data() + (base + i) * d + off;
            const T* doi = dattn_cat.data() + (base + i) * d + off;
            double m = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < cnt; ++j) {
                const T* kj = k.data() + (base + j_lo + j) * d + off;
                double s = 0;
                for (int64_t c = 0; c < dh; ++c)
                    s += static_cast<double>(qi[c]) * static_cast<double>(kj[c]);
                p[static_cast<size_t>(j)] = s * scale - slope * static_cast<double>(i - (j_lo + j));
                m = std::max(m, p[static_cast<size_t>(j)]);
            }
            double z = 0;
            for (int64_t j = 0; j < cnt; ++j) {
                p[static_cast<size_t>(j)] = std::exp(p[static_cast<size_t>(j)] - m);
                z += p[static_cast<size_t>(j)];
            }
            double dsum = 0;
            for (int64_t j = 0; j < cnt; ++j) {
                p[static_cast<size_t>(j)] /= z;
                const T* vj = v.data() + (base + j_lo + j) * d + off;
                double e = 0;
                for (int64_t c = 0; c < dh; ++c)
                    e += static_cast<double>(doi[c]) * static_cast<double>(vj[c]);
                dp[static_cast<size_t>(j)] = e;
                dsum += p[static_cast<size_t>(j)] * e;
            }
            T* dqi = dq.data() + (base + i) * d + off;
            for (int64_t j = 0; j < cnt; ++j) {
                const double pj = p[static_cast<size_t>(j)];
                const double ds = pj * (dp[static_cast<size_t>(j)] - dsum) * scale;
                const T* kj = k.data() + (base + j_lo + j) * d + off;
                T* dkj = dk.data() + (base + j_lo + j) * d + off;
                T* dvj = dv.data() + (base + j_lo + j) * d + off;
                for (int64_t c = 0; c < dh; ++c) {
                    dqi[c] += static_cast<T>(ds * static_cast<double>(kj[c]));
                    dkj[c] += static_cast<T>(ds * static_cast<double>(qi[c]));
                    dvj[c] += static_cast<T>(pj * static_cast<double>(doi[c]));
                }
            }
        }
    };

    if (kind == AttnKind::kSlidingCausal) {
        for (int h = 0; h < cfg.n_heads; ++h)
            head_block(h, 0, rows, cfg.window, true, slopes[static_cast<size_t>(h)]);
    } else {
        const int64_t stride_rows = cfg.chunk_size + 1;
        for (int64_t c0 = 0; c0 < rows; c0 += stride_rows) {
            const int64_t n = std::min<int64_t>(stride_rows, rows - c0);
            for (int h = 0; h < cfg.n_heads; ++h) head_block(h, c0, n, 0, false, 0.0);
        }
    }

    g.wq.mat().noalias() += normed.mat().transpose() * dq.mat();
    g.wk.mat().noalias() += normed.mat().transpose() * dk.mat();
    g.wv.mat().noalias() += normed.mat().transpose() * dv.mat();
    dnormed.mat().noalias() += dq.mat() * lp.wq.mat().transpose();
    dnormed.mat().noalias() += dk.mat() * lp.wk.mat().transpose();
    dnormed.mat().noalias() += dv.mat() * lp.wv.mat().transpose();
}

template <typename T>
inline double silu(double z) {
    return z / (1.0 + std::exp(-z));
}

template <typename T>
void ffn_forward(const Tensor<T>& normed, const LayerParams<T>& lp, Tensor<T>& gate,
                 Tensor<T>& up, Tensor<T>& out) {
    gate.mat().noalias() = normed.mat() * lp.w_gate.mat();
    up.mat().noalias() = normed.mat() * lp.w_up.mat();
    Tensor<T> act(gate.shape());
    for (int64_t i = 0; i < gate.numel(); ++i)
        act[i] = static_cast<T>(silu<T>(static_cast<double>(gate[i])) * static_cast<double>(up[i]));
    out.mat().noalias() = act.mat() * lp.w_down.mat();
}

template <typename T>
void ffn_backward(const Tensor<T>& normed, const LayerParams<T>& lp, const Tensor<T>& gate,
                  const Tensor<T>& up, const Tensor<T>& dout, Tensor<T>& dnormed,
                  LayerParams<T>& g) {
    Tensor<T> act(gate.shape());
    for (int64_t i = 0; i < gate.numel(); ++i)
        act[i] = static_cast<T>(silu<T>(static_cast<double>(gate[i])) * static_cast<double>(up[i]));
    g.w_down.mat().noalias() += act.mat().transpose() * dout.mat();

    Tensor<T> dact(gate.shape());
    dact.mat().noalias() = dout.mat() * lp.w_down.mat().transpose();
    Tensor<T> dgate(gate.shape()), dup(gate.shape());
    for (int64_t i = 0; i < gate.numel(); ++i) {
        const double z = static_cast<double>(gate[i]);
        const double sig = 1.0 / (1.0 + std::exp(-z));
        const double s = z * sig;
        const double ds = sig * (1.0 + z * (1.0 - sig));
        dgate[i] = static_cast<T>(static_cast<double>(dact[i]) * static_cast<double>(up[i]) * ds);
        dup[i] = static_cast<T>(static_cast<double>(dact[i]) * s);
    }
    g.w_gate.mat().noalias() += normed.mat().transpose() * dgate.mat();
    g.w_up.mat().noalias() += normed.mat().transpose() * dup.mat();
    dnormed.mat().noalias() += dgate.mat() * lp.w_gate.mat().transpose();
    dnormed.mat().noalias() += dup.mat() * lp.w_up.mat().transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Chunk encoder

template <typename T>
void encode_chunks(const Params<T>& params, const Tensor<T>& input_rows, int n_chunks,
                   Tensor<T>& out_rows, ForwardCache<T>* cache,
                   const std::vector<uint8_t>* mask_replace) {
    const ModelConfig& cfg = params.cfg;
    const int64_t rows = input_rows.dim(0), d = cfg.d_model;
    const int64_t stride = cfg.chunk_size + 1;
    DRT_CHECK(rows == static_cast<int64_t>(n_chunks) * stride, "encoder rows ", rows,
              " vs layout ", n_chunks, "x", stride);

    if (!cfg.use_encoder || cfg.encoder_layers == 0) {
        out_rows = input_rows;  // identity path
        if (cache) {
            cache->enc_in = input_rows;
            cache->enc_xs.clear();
            cache->enc_xs.push_back(out_rows);
            cache->enc.clear();
        }
        return;
    }

    Tensor<T> x = input_rows;
    if (mask_replace) {
        for (int64_t r = 0; r < rows; ++r) {
            if ((*mask_replace)[static_cast<size_t>(r)]) {
                const T* src = params.embedding.row(cfg.mask_id());
                std::copy(src, src + d, x.row(r));
            }
        }
    }
    for (int64_t r = 0; r < rows; ++r) {
        const T* pos = params.enc_pos.row(r % stride);
        T* xr = x.row(r);
        for (int64_t c = 0; c < d; ++c) xr[c] += pos[c];
    }
    if (cache) {
        cache->enc_in = x;
        cache->enc_xs.clear();
        cache->enc.clear();
    }

    const std::vector<double> no_slopes;
    for (int e = 0; e < cfg.encoder_layers; ++e) {
        const LayerParams<T>& lp = params.encoder[static_cast<size_t>(e)];
        DecLayerCache<T> lc;
        if (cache) cache->enc_xs.push_back(x);

        Tensor<T> normed({rows, d});
        lc.rstd1 = Tensor<T>({rows});
        rmsnorm_rows(x.data(), lp.attn_gain.data(), rows, d, normed.data(), lc.rstd1.data());
        lc.attn_cat = Tensor<T>({rows, d});
        attention_forward(cfg, AttnKind::kFullChunk, normed, lp, no_slopes, lc.attn_cat);
        lc.x_mid = Tensor<T>({rows, d});
        lc.x_mid.mat().noalias() = x.mat() + lc.attn_cat.mat() * lp.wo.mat();

        Tensor<T> normed2({rows, d});
        lc.rstd2 = Tensor<T>({rows});
        rmsnorm_rows(lc.x_mid.data(), lp.ffn_gain.data(), rows, d, normed2.data(), lc.rstd2.data());
        lc.ffn_gate = Tensor<T>({rows, cfg.ffn_dim});
        lc.ffn_up = Tensor<T>({rows, cfg.ffn_dim});
        Tensor<T> ffn_out({rows, d});
        ffn_forward(normed2, lp, lc.ffn_gate, lc.ffn_up, ffn_out);
        Tensor<T> x_next({rows, d});
        x_next.mat().noalias() = lc.x_mid.mat() + ffn_out.mat();
        x = std::move(x_next);
        if (cache) cache->enc.push_back(std::move(lc));
    }
    if (cache) cache->enc_xs.push_back(x);
    out_rows = std::move(x);
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
ForwardResult<T> forward(const std::vector<int32_t>& ids, const ChunkLayout& layout,
                         const Params<T>& params, const ForwardOptions& opts,
                         ForwardCache<T>* cache) {
    const ModelConfig& cfg = params.cfg;
    cfg.validate();
    const int64_t total = layout.total();
    DRT_CHECK(static_cast<int64_t>(ids.size()) == total, "ids size ", ids.size(),
              " vs layout total ", total);
    DRT_CHECK(layout.n_chunks * static_cast<int64_t>(layout.chunk_size) <= cfg.max_context,
              "sequence of ", layout.n_chunks * layout.chunk_size,
              " content tokens exceeds max_context ", cfg.max_context);
    const int64_t d = cfg.d_model;
    const int n_c = layout.n_chunks;
    const int stride = layout.stride();
    const bool want_gumbel = opts.training && opts.gumbel;
    DRT_CHECK(!want_gumbel || opts.rng != nullptr, "training with noise needs an rng");

    if (cache) {
        cache->cfg = cfg;
        cache->ids = ids;
        cache->layout = layout;
        cache->xs.clear();
        cache->dec.clear();
        cache->rsets.clear();
        cache->mlm = opts.mlm ? *opts.mlm : MlmMask{};
    }

    const std::vector<double> slopes =
        cfg.decoder_pos_bias ? kernels::alibi_slopes(cfg.n_heads)
                             : std::vector<double>(static_cast<size_t>(cfg.n_heads), 0.0);

    // token embedding
    Tensor<T> x({total, d});
    for (int64_t p = 0; p < total; ++p) {
        DRT_CHECK(ids[static_cast<size_t>(p)] >= 0 && ids[static_cast<size_t>(p)] < cfg.vocab,
                  "token id out of range at ", p);
        const T* src = params.embedding.row(ids[static_cast<size_t>(p)]);
        std::copy(src, src + d, x.row(p));
    }

    // filled before the upper stack runs
    Tensor<T> enc_out, kproj, vproj;
    std::vector<std::vector<retrieval::RetrievalSet>> rsets;

    auto run_decoder_layer = [&](int layer_idx, Tensor<T>& xin) -> Tensor<T> {
        const LayerParams<T>& lp = params.layers[static_cast<size_t>(layer_idx)];
        DecLayerCache<T> lc;

        Tensor<T> normed({total, d});
        lc.rstd1 = Tensor<T>({total});
        rmsnorm_rows(xin.data(), lp.attn_gain.data(), total, d, normed.data(), lc.rstd1.data());
        lc.attn_cat = Tensor<T>({total, d});
        attention_forward(cfg, AttnKind::kSlidingCausal, normed, lp, slopes, lc.attn_cat);
        lc.x_mid = Tensor<T>({total, d});
        lc.x_mid.mat().noalias() = xin.mat() + lc.attn_cat.mat() * lp.wo.mat();

        const bool upper = layer_idx >= cfg.lower_layers();
        Tensor<T>* ffn_in = &lc.x_mid;
        if (upper && cfg.use_retrieval) {
            const int u = layer_idx - cfg.lower_layers();
            const int g = u / cfg.layers_per_group();
            Tensor<T> qproj({total, d});
            qproj.mat().noalias() = lc.x_mid.mat() * params.gca_wq[static_cast<size_t>(u)].mat();
            Tensor<T> fused({total, d});  // zero; chunks without retrieval stay zero
            lc.o_prime.resize(static_cast<size_t>(n_c));
            lc.lse.resize(static_cast<size_t>(n_c));
            for (int c = 1; c < n_c; ++c) {
                const retrieval::RetrievalSet& set = rsets[static_cast<size_t>(g)][static_cast<size_t>(c - 1)];
                if (set.empty()) continue;
                const int64_t n_sel = static_cast<int64_t>(set.size());
                const int64_t rbase = layout.chunk_begin(c);
                std::vector<T> w(set.weights.begin(), set.weights.end());
                lc.o_prime[static_cast<size_t>(c)] = Tensor<T>({n_sel, stride, d});
                lc.lse[static_cast<size_t>(c)] = Tensor<T>({cfg.n_heads, stride, n_sel});
                Tensor<T>& opr = lc.o_prime[static_cast<size_t>(c)];
                Tensor<T>& lse = lc.lse[static_cast<size_t>(c)];
                std::vector<ConstStrided<T>> ks(static_cast<size_t>(n_sel)),
                    vs(static_cast<size_t>(n_sel));
                for (int h = 0; h < cfg.n_heads; ++h) {
                    const int64_t off = static_cast<int64_t>(h) * cfg.head_dim();
                    for (int64_t s = 0; s < n_sel; ++s) {
                        const int64_t kb = static_cast<int64_t>(set.indices[static_cast<size_t>(s)]) *
                                           cfg.chunk_size;
                        ks[static_cast<size_t>(s)] = ConstStrided<T>(
                            kproj.data() + kb * d + off, cfg.chunk_size, cfg.head_dim(), d);
                        vs[static_cast<size_t>(s)] = ConstStrided<T>(
                            vproj.data() + kb * d + off, cfg.chunk_size, cfg.head_dim(), d);
                    }
                    kernels::flash_gca_forward_head<T>(
                        ConstStrided<T>(qproj.data() + rbase * d + off, stride, cfg.head_dim(), d),
                        ks, vs, w.data(),
                        Strided<T>{fused.data() + rbase * d + off, stride, cfg.head_dim(), d},
                        Strided<T>{opr.data() + off, stride, cfg.head_dim(), d},
                        static_cast<int64_t>(stride) * d,
                        lse.data() + static_cast<int64_t>(h) * stride * n_sel, {});
                }
            }
            Tensor<T> z({total, d});
            z.mat().noalias() = lc.x_mid.mat() + fused.mat();
            lc.gca_rstd = Tensor<T>({total});
            lc.x_gca = Tensor<T>({total, d});
            rmsnorm_rows(z.data(), params.gca_gain[static_cast<size_t>(u)].data(), total, d,
                         lc.x_gca.data(), lc.gca_rstd.data());
            ffn_in = &lc.x_gca;
        }

        Tensor<T> normed2({total, d});
        lc.rstd2 = Tensor<T>({total});
        rmsnorm_rows(ffn_in->data(), lp.ffn_gain.data(), total, d, normed2.data(),
                     lc.rstd2.data());
        lc.ffn_gate = Tensor<T>({total, cfg.ffn_dim});
        lc.ffn_up = Tensor<T>({total, cfg.ffn_dim});
        Tensor<T> ffn_out({total, d});
        ffn_forward(normed2, lp, lc.ffn_gate, lc.ffn_up, ffn_out);
        Tensor<T> xout({total, d});
        xout.mat().noalias() = ffn_in->mat() + ffn_out.mat();
        if (cache) cache->dec.push_back(std::move(lc));
        return xout;
    };

    // Lower stack
    if (cache) cache->xs.push_back(x);
    Tensor<T> x0 = (cfg.encoder_input == EncoderInput::kTokenEmbeddings && cfg.use_retrieval)
                       ? x
                       : Tensor<T>();
    for (int l = 0; l < cfg.lower_layers(); ++l) {
        x = run_decoder_layer(l, x);
        if (cache) cache->xs.push_back(x);
    }

    // Chunk encoder and shared projections
    if (cfg.use_retrieval) {
        const Tensor<T>& enc_src =
            cfg.encoder_input == EncoderInput::kTokenEmbeddings ? x0 : x;
        std::vector<uint8_t> replace;
        if (opts.mlm && !opts.mlm->empty()) {
            replace.assign(static_cast<size_t>(total), 0);
            for (int64_t p : opts.mlm->positions) replace[static_cast<size_t>(p)] = 1;
        }
        encode_chunks(params, enc_src, n_c, enc_out, cache,
                      replace.empty() ? nullptr : &replace);

        // gather content rows and project once (shared across layers)
        Tensor<T> content({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
        for (int c = 0; c < n_c; ++c)
            std::copy(enc_out.row(layout.chunk_begin(c)),
                      enc_out.row(layout.chunk_begin(c)) + static_cast<int64_t>(cfg.chunk_size) * d,
                      content.row(static_cast<int64_t>(c) * cfg.chunk_size));
        kproj = Tensor<T>({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
        vproj = Tensor<T>({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
        kproj.mat().noalias() = content.mat() * params.gca_wk.mat();
        vproj.mat().noalias() = content.mat() * params.gca_wv.mat();
        rsets.assign(static_cast<size_t>(cfg.n_groups),
                     std::vector<retrieval::RetrievalSet>(static_cast<size_t>(n_c)));
    }

    // Upper stack with per-group retrieval at group entry
    for (int u = 0; u < cfg.upper_layers(); ++u) {
        const int layer_idx = cfg.lower_layers() + u;
        if (cfg.use_retrieval && u % cfg.layers_per_group() == 0) {
            const int g = u / cfg.layers_per_group();
            for (int t = 1; t < n_c; ++t) {
                const T* h = x.row(layout.landmark_pos(t));
                std::vector<const T*> lms;
                lms.reserve(static_cast<size_t>(t));
                for (int k = 0; k < t; ++k) lms.push_back(enc_out.row(layout.landmark_pos(k)));
                auto scores = retrieval::relevance_scores(h, lms, d);
                retrieval::RetrievalSet set;
                const auto* ov = opts.retrieval_override;
                if (ov && (*ov)[static_cast<size_t>(g)][static_cast<size_t>(t)].has_value()) {
                    const ForcedSelection& forced =
                        *(*ov)[static_cast<size_t>(g)][static_cast<size_t>(t)];
                    set.indices = forced.indices;
                    for (int idx : set.indices) {
                        DRT_CHECK(idx >= 0 && idx < t, "forced retrieval index ", idx,
                                  " breaks causality at chunk ", t);
                        set.raw_scores.push_back(scores[static_cast<size_t>(idx)]);
                    }
                    if (!forced.weights.empty()) {
                        DRT_CHECK(forced.weights.size() == set.indices.size(),
                                  "forced weight count mismatch");
                        set.weights = forced.weights;
                    } else if (!set.indices.empty()) {
                        set.weights = retrieval::fusion_weights(set.raw_scores);
                    }
                } else {
                    Rng dummy(0);
                    set = retrieval::select(scores, cfg.top_k, want_gumbel,
                                            want_gumbel ? *opts.rng : dummy,
                                            opts.gumbel_temperature);
                }
                rsets[static_cast<size_t>(g)][static_cast<size_t>(t)] = std::move(set);
            }
        }
        x = run_decoder_layer(layer_idx, x);
        if (cache) cache->xs.push_back(x);
    }

    // output head
    ForwardResult<T> res;
    Tensor<T> final_norm({total, d});
    Tensor<T> final_rstd({total});
    rmsnorm_rows(x.data(), params.final_gain.data(), total, d, final_norm.data(),
                 final_rstd.data());
    res.logits = Tensor<T>({total, cfg.vocab});
    res.logits.mat().noalias() = final_norm.mat() * params.lm_head.mat();

    const MlmMask* mlm = opts.mlm;
    if (mlm && !mlm->empty() && cfg.use_retrieval) {
        const int64_t nm = static_cast<int64_t>(mlm->positions.size());
        Tensor<T> rowsbuf({nm, d});
        for (int64_t i = 0; i < nm; ++i) {
            const int64_t p = mlm->positions[static_cast<size_t>(i)];
            DRT_CHECK(!layout.is_landmark(p), "mlm mask on a landmark position");
            std::copy(enc_out.row(p), enc_out.row(p) + d, rowsbuf.row(i));
        }
        res.mlm_logits = Tensor<T>({nm, cfg.vocab});
        res.mlm_logits.mat().noalias() = rowsbuf.mat() * params.mlm_head.mat();
    } else {
        res.mlm_logits = Tensor<T>({0, cfg.vocab});
    }

    if (cache) {
        cache->kproj = std::move(kproj);
        cache->vproj = std::move(vproj);
        cache->rsets = rsets;
        cache->final_rstd = std::move(final_rstd);
    }
    res.rsets = std::move(rsets);
    return res;
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
void backward(const ForwardCache<T>& cache, const Params<T>& params, const Tensor<T>& dlogits,
              const Tensor<T>& dmlm_logits, Params<T>& grads) {
    const ModelConfig& cfg = cache.cfg;
    const ChunkLayout& layout = cache.layout;
    const int64_t total = layout.total();
    const int64_t d = cfg.d_model;
    const int n_c = layout.n_chunks;
    const int stride = layout.stride();
    const std::vector<double> slopes =
        cfg.decoder_pos_bias ? kernels::alibi_slopes(cfg.n_heads)
                             : std::vector<double>(static_cast<size_t>(cfg.n_heads), 0.0);

    // head + final norm
    const Tensor<T>& x_final = cache.xs.back();
    Tensor<T> final_norm({total, d});
    rmsnorm_rows(x_final.data(), params.final_gain.data(), total, d, final_norm.data(),
                 static_cast<T*>(nullptr));
    grads.lm_head.mat().noalias() += final_norm.mat().transpose() * dlogits.mat();
    Tensor<T> dnorm({total, d});
    dnorm.mat().noalias() = dlogits.mat() * params.lm_head.mat().transpose();
    Tensor<T> dx({total, d});
    rmsnorm_backward_rows(x_final.data(), params.final_gain.data(), cache.final_rstd.data(),
                          dnorm.data(), total, d, dx.data(), grads.final_gain.data());

    // gradient sinks filled while walking the upper stack
    Tensor<T> dkproj, dvproj;
    Tensor<T> denc_out;  // (n_c*(S+1)) x d
    std::vector<std::vector<std::vector<double>>> dw_acc;  // [group][chunk][sel]
    if (cfg.use_retrieval) {
        dkproj = Tensor<T>({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
        dvproj = Tensor<T>({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
        denc_out = Tensor<T>({total, d});
        dw_acc.resize(static_cast<size_t>(cfg.n_groups));
        for (int g = 0; g < cfg.n_groups; ++g) {
            dw_acc[static_cast<size_t>(g)].resize(static_cast<size_t>(n_c));
            for (int t = 0; t < n_c; ++t)
                dw_acc[static_cast<size_t>(g)][static_cast<size_t>(t)].assign(
                    cache.rsets[static_cast<size_t>(g)][static_cast<size_t>(t)].size(), 0.0);
        }
    }

    // decoder layers, top to bottom
    for (int layer_idx = cfg.n_layers - 1; layer_idx >= 0; --layer_idx) {
        const LayerParams<T>& lp = params.layers[static_cast<size_t>(layer_idx)];
        LayerParams<T>& lg = grads.layers[static_cast<size_t>(layer_idx)];
        const DecLayerCache<T>& lc = cache.dec[static_cast<size_t>(layer_idx)];
        const Tensor<T>& xin = cache.xs[static_cast<size_t>(layer_idx)];
        const bool upper = layer_idx >= cfg.lower_layers() && cfg.use_retrieval;
        const int u = layer_idx - cfg.lower_layers();

        // FFN sublayer: x_out = ffn_in + ffn(norm2(ffn_in))
        const Tensor<T>& ffn_in = upper ? lc.x_gca : lc.x_mid;
        Tensor<T> normed2({total, d});
        rmsnorm_rows(ffn_in.data(), lp.ffn_gain.data(), total, d, normed2.data(),
                     static_cast<T*>(nullptr));
        Tensor<T> dnormed2({total, d});
        ffn_backward(normed2, lp, lc.ffn_gate, lc.ffn_up, dx, dnormed2, lg);
        // dx stays the residual gradient; add the norm path
        rmsnorm_backward_rows(ffn_in.data(), lp.ffn_gain.data(), lc.rstd2.data(), dnormed2.data(),
                              total, d, dx.data(), lg.ffn_gain.data());

        // fused-retrieval sublayer: x_gca = norm_gain(z), z = x_mid + O
        if (upper) {
            const int g = u / cfg.layers_per_group();
            // recompute z
            Tensor<T> z({total, d});
            z.raw() = lc.x_mid.raw();
            for (int c = 1; c < n_c; ++c) {
                const auto& set = cache.rsets[static_cast<size_t>(g)][static_cast<size_t>(c - 1)];
                if (set.empty()) continue;
                const Tensor<T>& opr = lc.o_prime[static_cast<size_t>(c)];
                const int64_t rbase = layout.chunk_begin(c);
                for (size_t s = 0; s < set.size(); ++s) {
                    const T w = static_cast<T>(set.weights[s]);
                    const T* src = opr.data() + static_cast<int64_t>(s) * stride * d;
                    for (int64_t i = 0; i < static_cast<int64_t>(stride) * d; ++i)
                        z[rbase * d + i] += w * src[i];
                }
            }
            Tensor<T> dz({total, d});
            rmsnorm_backward_rows(z.data(), params.gca_gain[static_cast<size_t>(u)].data(),
                                  lc.gca_rstd.data(), dx.data(), total, d, dz.data(),
                                  grads.gca_gain[static_cast<size_t>(u)].data());
            // dz feeds both the residual (x_mid) and the fused output
            Tensor<T> qproj({total, d});
            qproj.mat().noalias() = lc.x_mid.mat() * params.gca_wq[static_cast<size_t>(u)].mat();
            Tensor<T> dqproj({total, d});
            for (int c = 1; c < n_c; ++c) {
                const auto& set = cache.rsets[static_cast<size_t>(g)][static_cast<size_t>(c - 1)];
                if (set.empty()) continue;
                const int64_t n_sel = static_cast<int64_t>(set.size());
                const int64_t rbase = layout.chunk_begin(c);
                std::vector<T> w(set.weights.begin(), set.weights.end());
                const Tensor<T>& opr = lc.o_prime[static_cast<size_t>(c)];
                const Tensor<T>& lse = lc.lse[static_cast<size_t>(c)];
                std::vector<ConstStrided<T>> ks(static_cast<size_t>(n_sel)),
                    vs(static_cast<size_t>(n_sel));
                std::vector<Strided<T>> dks(static_cast<size_t>(n_sel)),
                    dvs(static_cast<size_t>(n_sel));
                for (int h = 0; h < cfg.n_heads; ++h) {
                    const int64_t off = static_cast<int64_t>(h) * cfg.head_dim();
                    for (int64_t s = 0; s < n_sel; ++s) {
                        const int64_t kb = static_cast<int64_t>(set.indices[static_cast<size_t>(s)]) *
                                           cfg.chunk_size;
                        ks[static_cast<size_t>(s)] = ConstStrided<T>(
                            cache.kproj.data() + kb * d + off, cfg.chunk_size, cfg.head_dim(), d);
                        vs[static_cast<size_t>(s)] = ConstStrided<T>(
                            cache.vproj.data() + kb * d + off, cfg.chunk_size, cfg.head_dim(), d);
                        dks[static_cast<size_t>(s)] = Strided<T>{
                            dkproj.data() + kb * d + off, cfg.chunk_size, cfg.head_dim(), d};
                        dvs[static_cast<size_t>(s)] = Strided<T>{
                            dvproj.data() + kb * d + off, cfg.chunk_size, cfg.head_dim(), d};
                    }
                    kernels::flash_gca_backward_head<T>(
                        ConstStrided<T>(qproj.data() + rbase * d + off, stride, cfg.head_dim(), d),
                        ks, vs, w.data(),
                        ConstStrided<T>(opr.data() + off, stride, cfg.head_dim(), d),
                        static_cast<int64_t>(stride) * d,
                        lse.data() + static_cast<int64_t>(h) * stride * n_sel,
                        ConstStrided<T>(dz.data() + rbase * d + off, stride, cfg.head_dim(), d),
                        Strided<T>{dqproj.data() + rbase * d + off, stride, cfg.head_dim(), d},
                        dks, dvs, dw_acc[static_cast<size_t>(g)][static_cast<size_t>(c - 1)].data(),
                        {});
                }
            }
            grads.gca_wq[static_cast<size_t>(u)].mat().noalias() +=
                lc.x_mid.mat().transpose() * dqproj.mat();
            // residual + query path into x_mid
            dz.mat().noalias() += dqproj.mat() * params.gca_wq[static_cast<size_t>(u)].mat().transpose();
            dx = std::move(dz);
        }

        // attention sublayer: x_mid = xin + attn_cat * wo
        Tensor<T> dattn_cat({total, d});
        dattn_cat.mat().noalias() = dx.mat() * lp.wo.mat().transpose();
        lg.wo.mat().noalias() += lc.attn_cat.mat().transpose() * dx.mat();
        Tensor<T> normed({total, d});
        rmsnorm_rows(xin.data(), lp.attn_gain.data(), total, d, normed.data(),
                     static_cast<T*>(nullptr));
        Tensor<T> dnormed({total, d});
        attention_backward(cfg, AttnKind::kSlidingCausal, normed, lp, slopes, dattn_cat, dnormed,
                           lg);
        rmsnorm_backward_rows(xin.data(), lp.attn_gain.data(), lc.rstd1.data(), dnormed.data(),
                              total, d, dx.data(), lg.attn_gain.data());

        // crossing a group entry boundary: fold selection-weight gradients
        // into relevance scores, then into the query landmark and the stored
        // encoder landmarks
        if (upper && u % cfg.layers_per_group() == 0) {
            const int g = u / cfg.layers_per_group();
            const double scale = 1.0 / std::sqrt(static_cast<double>(d));
            const Tensor<T>& enc_out = cache.enc_out();
            for (int t = 1; t < n_c; ++t) {
                const auto& set = cache.rsets[static_cast<size_t>(g)][static_cast<size_t>(t)];
                if (set.empty()) continue;
                const auto& dw = dw_acc[static_cast<size_t>(g)][static_cast<size_t>(t)];
                double dot = 0;
                for (size_t s = 0; s < set.size(); ++s) dot += set.weights[s] * dw[s];
                const T* h = xin.row(layout.landmark_pos(t));
                T* dh = dx.row(layout.landmark_pos(t));
                for (size_t s = 0; s < set.size(); ++s) {
                    const double dr = set.weights[s] * (dw[s] - dot) * scale;
                    if (dr == 0.0) continue;
                    const int64_t lrow = layout.landmark_pos(set.indices[s]);
                    const T* lk = enc_out.row(lrow);
                    T* dl = denc_out.row(lrow);
                    for (int64_t c2 = 0; c2 < d; ++c2) {
                        dh[c2] += static_cast<T>(dr * static_cast<double>(lk[c2]));
                        dl[c2] += static_cast<T>(dr * static_cast<double>(h[c2]));
                    }
                }
            }
        }

        if (layer_idx == cfg.lower_layers() && cfg.use_retrieval) {
            // everything above is done; push gradients through the shared
            // projections, the masked-prediction head, and the encoder
            const Tensor<T>& enc_out = cache.enc_out();
            if (dmlm_logits.ndim() == 2 && dmlm_logits.dim(0) > 0) {
                const int64_t nm = dmlm_logits.dim(0);
                Tensor<T> rowsbuf({nm, d});
                for (int64_t i = 0; i < nm; ++i)
                    std::copy(enc_out.row(cache.mlm.positions[static_cast<size_t>(i)]),
                              enc_out.row(cache.mlm.positions[static_cast<size_t>(i)]) + d,
                              rowsbuf.row(i));
                grads.mlm_head.mat().noalias() += rowsbuf.mat().transpose() * dmlm_logits.mat();
                Tensor<T> drows({nm, d});
                drows.mat().noalias() = dmlm_logits.mat() * params.mlm_head.mat().transpose();
                for (int64_t i = 0; i < nm; ++i) {
                    const int64_t p = cache.mlm.positions[static_cast<size_t>(i)];
                    T* dst = denc_out.row(p);
                    const T* src = drows.row(i);
                    for (int64_t c2 = 0; c2 < d; ++c2) dst[c2] += src[c2];
                }
            }

            // shared projection grads + content-row gradient
            Tensor<T> content({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
            for (int c = 0; c < n_c; ++c)
                std::copy(enc_out.row(layout.chunk_begin(c)),
                          enc_out.row(layout.chunk_begin(c)) +
                              static_cast<int64_t>(cfg.chunk_size) * d,
                          content.row(static_cast<int64_t>(c) * cfg.chunk_size));
            grads.gca_wk.mat().noalias() += content.mat().transpose() * dkproj.mat();
            grads.gca_wv.mat().noalias() += content.mat().transpose() * dvproj.mat();
            Tensor<T> dcontent({static_cast<int64_t>(n_c) * cfg.chunk_size, d});
            dcontent.mat().noalias() = dkproj.mat() * params.gca_wk.mat().transpose();
            dcontent.mat().noalias() += dvproj.mat() * params.gca_wv.mat().transpose();
            for (int c = 0; c < n_c; ++c) {
                T* dst = denc_out.row(layout.chunk_begin(c));
                const T* src = dcontent.row(static_cast<int64_t>(c) * cfg.chunk_size);
                for (int64_t i = 0; i < static_cast<int64_t>(cfg.chunk_size) * d; ++i)
                    dst[i] += src[i];
            }

            // encoder backward
            Tensor<T> denc_in({total, d});
            if (!cfg.use_encoder || cfg.encoder_layers == 0) {
                denc_in = denc_out;
            } else {
                Tensor<T> dcur = denc_out;
                for (int e = cfg.encoder_layers - 1; e >= 0; --e) {
                    const LayerParams<T>& ep = params.encoder[static_cast<size_t>(e)];
                    LayerParams<T>& eg = grads.encoder[static_cast<size_t>(e)];
                    const DecLayerCache<T>& ec = cache.enc[static_cast<size_t>(e)];
                    const Tensor<T>& exin = cache.enc_xs[static_cast<size_t>(e)];

                    Tensor<T> n2({total, d});
                    rmsnorm_rows(ec.x_mid.data(), ep.ffn_gain.data(), total, d, n2.data(),
                                 static_cast<T*>(nullptr));
                    Tensor<T> dn2({total, d});
                    ffn_backward(n2, ep, ec.ffn_gate, ec.ffn_up, dcur, dn2, eg);
                    rmsnorm_backward_rows(ec.x_mid.data(), ep.ffn_gain.data(), ec.rstd2.data(),
                                          dn2.data(), total, d, dcur.data(), eg.ffn_gain.data());

                    Tensor<T> dcat({total, d});
                    dcat.mat().noalias() = dcur.mat() * ep.wo.mat().transpose();
                    eg.wo.mat().noalias() += ec.attn_cat.mat().transpose() * dcur.mat();
                    Tensor<T> n1({total, d});
                    rmsnorm_rows(exin.data(), ep.attn_gain.data(), total, d, n1.data(),
                                 static_cast<T*>(nullptr));
                    Tensor<T> dn1({total, d});
                    attention_backward(cfg, AttnKind::kFullChunk, n1, ep, slopes, dcat, dn1, eg);
                    rmsnorm_backward_rows(exin.data(), ep.attn_gain.data(), ec.rstd1.data(),
                                          dn1.data(), total, d, dcur.data(), eg.attn_gain.data());
                }
                // position table gradient
                for (int64_t r = 0; r < total; ++r) {
                    T* dst = grads.enc_pos.row(r % stride);
                    const T* src = dcur.row(r);
                    for (int64_t c2 = 0; c2 < d; ++c2) dst[c2] += src[c2];
                }
                denc_in = std::move(dcur);
            }

            // route encoder input gradients: masked rows feed the mask
            // embedding, the rest flow into the encoder's source
            std::vector<uint8_t> replaced(static_cast<size_t>(total), 0);
            const bool enc_active = cfg.use_encoder && cfg.encoder_layers > 0;
            if (enc_active)
                for (int64_t p : cache.mlm.positions) replaced[static_cast<size_t>(p)] = 1;
            const bool from_embeddings = cfg.encoder_input == EncoderInput::kTokenEmbeddings;
            Tensor<T>* sink = nullptr;
            Tensor<T> demb_rows;
            if (from_embeddings) {
                demb_rows = Tensor<T>({total, d});
                sink = &demb_rows;
            } else {
                sink = &dx;  // gradient w.r.t. the lower-stack output
            }
            for (int64_t r = 0; r < total; ++r) {
                const T* src = denc_in.row(r);
                if (replaced[static_cast<size_t>(r)]) {
                    T* dst = grads.embedding.row(cfg.mask_id());
                    for (int64_t c2 = 0; c2 < d; ++c2) dst[c2] += src[c2];
                } else {
                    T* dst = sink->row(r);
                    for (int64_t c2 = 0; c2 < d; ++c2) dst[c2] += src[c2];
                }
            }
            if (from_embeddings) {
                for (int64_t r = 0; r < total; ++r) {
                    T* dst = grads.embedding.row(cache.ids[static_cast<size_t>(r)]);
                    const T* src = demb_rows.row(r);
                    for (int64_t c2 = 0; c2 < d; ++c2) dst[c2] += src[c2];
                }
            }
        }
    }

    // embedding scatter
    for (int64_t r = 0; r < total; ++r) {
        T* dst = grads.embedding.row(cache.ids[static_cast<size_t>(r)]);
        const T* src = dx.row(r);
        for (int64_t c2 = 0; c2 < d; ++c2) dst[c2] += src[c2];
    }
}

// ---------------------------------------------------------------------------

template struct Params<float>;
template struct Params<double>;

template void rmsnorm_rows<float>(const float*, const float*, int64_t, int64_t, float*, float*);
template void rmsnorm_rows<double>(const double*, const double*, int64_t, int64_t, double*,
                                   double*);

template void encode_chunks<float>(const Params<float>&, const Tensor<float>&, int,
                                   Tensor<float>&, ForwardCache<float>*,
                                   const std::vector<uint8_t>*);
template void encode_chunks<double>(const Params<double>&, const Tensor<double>&, int,
                                    Tensor<double>&, ForwardCache<double>*,
                                    const std::vector<uint8_t>*);

template ForwardResult<float> forward<float>(const std::vector<int32_t>&, const ChunkLayout&,
                                             const Params<float>&, const ForwardOptions&,
                                             ForwardCache<float>*);
template ForwardResult<double> forward<double>(const std::vector<int32_t>&, const ChunkLayout&,
                                               const Params<double>&, const ForwardOptions&,
                                               ForwardCache<double>*);

template void backward<float>(const ForwardCache<float>&, const Params<float>&,
                              const Tensor<float>&, const Tensor<float>&, Params<float>&);
template void backward<double>(const ForwardCache<double>&, const Params<double>&,
                               const Tensor<double>&, const Tensor<double>&, Params<double>&);

}  // namespace drt::model
