#include "drt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drt/opcount.hpp"

namespace drt::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename T>
double dot_d(const T* a, const T* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

}  // namespace

std::vector<double> alibi_slopes(int n_heads) {
    DRT_CHECK(n_heads >= 1, "n_heads=", n_heads);
    std::vector<double> slopes(static_cast<size_t>(n_heads));
    const double ratio = std::pow(2.0, -8.0 / n_heads);
    double s = ratio;
    for (int h = 0; h < n_heads; ++h) {
        slopes[static_cast<size_t>(h)] = s;
        s *= ratio;
    }
    return slopes;
}

// ---------------------------------------------------------------------------
// Dense references

template <typename T>
Tensor<T> cross_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    DRT_CHECK(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "cross_attention wants 2-d inputs");
    const int64_t n_q = q.dim(0), d = q.dim(1), n_kv = k.dim(0);
    DRT_CHECK(d >= 1, "zero head dim");
    DRT_CHECK(n_kv >= 1, "empty key set");
    DRT_CHECK(k.dim(1) == d && v.dim(0) == n_kv && v.dim(1) == d, "shape mismatch: q ", n_q, "x",
              d, ", k ", k.dim(0), "x", k.dim(1), ", v ", v.dim(0), "x", v.dim(1));

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor<T> out({n_q, d});
    std::vector<double> logits(static_cast<size_t>(n_kv));
    std::vector<double> acc(static_cast<size_t>(d));
    for (int64_t i = 0; i < n_q; ++i) {
        double m = kNegInf;
        for (int64_t j = 0; j < n_kv; ++j) {
            logits[j] = scale * dot_d(q.row(i), k.row(j), d);
            m = std::max(m, logits[j]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < n_kv; ++j) {
            logits[j] = std::exp(logits[j] - m);
            denom += logits[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int64_t j = 0; j < n_kv; ++j) {
            const double p = logits[j] / denom;
            const T* vr = v.row(j);
            for (int64_t c = 0; c < d; ++c) acc[c] += p * static_cast<double>(vr[c]);
        }
        T* o = out.row(i);
        for (int64_t c = 0; c < d; ++c) o[c] = static_cast<T>(acc[c]);
    }
    return out;
}

template <typename T>
Tensor<T> gca_reference(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values,
                        const std::vector<T>& w) {
    DRT_CHECK(keys.ndim() == 3 && values.ndim() == 3, "chunk stacks must be 3-d");
    const int64_t n_chunks = keys.dim(0), n_kv = keys.dim(1), d = keys.dim(2);
    DRT_CHECK(static_cast<int64_t>(w.size()) == n_chunks, "weight count ", w.size(), " vs chunks ",
              n_chunks);
    double wsum = 0.0;
    for (T x : w) wsum += static_cast<double>(x);
    DRT_CHECK(std::abs(wsum - 1.0) <= 1e-6, "fusion weights sum to ", wsum);

    const int64_t n_q = q.dim(0);
    Tensor<T> out({n_q, q.dim(1)});
    Tensor<T> ck({n_kv, d}), cv({n_kv, d});
    for (int64_t k = 0; k < n_chunks; ++k) {
        std::copy(keys.data() + k * n_kv * d, keys.data() + (k + 1) * n_kv * d, ck.data());
        std::copy(values.data() + k * n_kv * d, values.data() + (k + 1) * n_kv * d, cv.data());
        Tensor<T> o = cross_attention(q, ck, cv);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += w[static_cast<size_t>(k)] * o[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Blocked fused kernel

template <typename T>
void flash_gca_forward_head(ConstStrided<T> q, const std::vector<ConstStrided<T>>& keys,
                            const std::vector<ConstStrided<T>>& values, const T* w,
                            Strided<T> out, Strided<T> per_chunk_base, int64_t per_chunk_slab,
                            T* lse, BlockSpec blocks) {
    const int64_t n_q = q.rows, d = q.width;
    const int64_t n_chunks = static_cast<int64_t>(keys.size());
    DRT_CHECK(n_chunks >= 1, "no chunks");
    const int64_t n_kv = keys[0].rows;
    DRT_CHECK(n_kv >= 1 && d >= 1, "degenerate chunk: n_kv=", n_kv, " d=", d);
    for (size_t k = 0; k < keys.size(); ++k) {
        DRT_CHECK(keys[k].rows == n_kv && keys[k].width == d && values[k].rows == n_kv &&
                      values[k].width == d,
                  "chunk ", k, " shape mismatch");
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const int64_t br = std::clamp<int64_t>(blocks.query_rows, 1, n_q);
    const int64_t bc = std::clamp<int64_t>(blocks.key_cols, 1, n_kv);

    std::vector<double> s(static_cast<size_t>(br * bc));
    std::vector<double> m(static_cast<size_t>(br)), l(static_cast<size_t>(br));
    std::vector<double> acc(static_cast<size_t>(br * d));
    std::vector<double> fused(static_cast<size_t>(br * d));

    for (int64_t i0 = 0; i0 < n_q; i0 += br) {
        const int64_t ib = std::min(br, n_q - i0);
        std::fill(fused.begin(), fused.end(), 0.0);
        for (int64_t k = 0; k < n_chunks; ++k) {
            std::fill(m.begin(), m.begin() + ib, kNegInf);
            std::fill(l.begin(), l.begin() + ib, 0.0);
            std::fill(acc.begin(), acc.begin() + ib * d, 0.0);
            for (int64_t j0 = 0; j0 < n_kv; j0 += bc) {
                const int64_t jb = std::min(bc, n_kv - j0);
                for (int64_t r = 0; r < ib; ++r) {
                    const T* qr = q.p + (i0 + r) * q.stride;
                    double* sr = s.data() + r * bc;
                    double row_max = kNegInf;
                    for (int64_t c = 0; c < jb; ++c) {
                        sr[c] = scale * dot_d(qr, keys[k].p + (j0 + c) * keys[k].stride, d);
                        row_max = std::max(row_max, sr[c]);
                    }
                    const double m_new = std::max(m[r], row_max);
                    const double alpha = std::exp(m[r] - m_new);  // 0 on the first tile
                    double row_sum = 0.0;
                    for (int64_t c = 0; c < jb; ++c) {
                        sr[c] = std::exp(sr[c] - m_new);
                        row_sum += sr[c];
                    }
                    l[r] = alpha * l[r] + row_sum;
                    m[r] = m_new;
                    double* ar = acc.data() + r * d;
                    for (int64_t c2 = 0; c2 < d; ++c2) ar[c2] *= alpha;
                    for (int64_t c = 0; c < jb; ++c) {
                        const double p = sr[c];
                        const T* vr = values[k].p + (j0 + c) * values[k].stride;
                        for (int64_t c2 = 0; c2 < d; ++c2)
                            ar[c2] += p * static_cast<double>(vr[c2]);
                    }
                }
            }
            const double wk = static_cast<double>(w[k]);
            for (int64_t r = 0; r < ib; ++r) {
                const double inv = 1.0 / l[r];
                T* op = per_chunk_base.p + k * per_chunk_slab + (i0 + r) * per_chunk_base.stride;
                const double* ar = acc.data() + r * d;
                double* fr = fused.data() + r * d;
                for (int64_t c2 = 0; c2 < d; ++c2) {
                    const double v = ar[c2] * inv;
                    op[c2] = static_cast<T>(v);
                    fr[c2] += wk * v;
                }
                lse[(i0 + r) * n_chunks + k] = static_cast<T>(m[r] + std::log(l[r]));
            }
        }
        for (int64_t r = 0; r < ib; ++r) {
            T* o = out.p + (i0 + r) * out.stride;
            const double* fr = fused.data() + r * d;
            for (int64_t c2 = 0; c2 < d; ++c2) o[c2] = static_cast<T>(fr[c2]);
        }
    }
    ops::add_gca(static_cast<uint64_t>(2 * n_q * n_kv * n_chunks * d));
}

template <typename T>
void flash_gca_backward_head(ConstStrided<T> q, const std::vector<ConstStrided<T>>& keys,
                             const std::vector<ConstStrided<T>>& values, const T* w,
                             ConstStrided<T> per_chunk_base, int64_t per_chunk_slab, const T* lse,
                             ConstStrided<T> dout, Strided<T> dq,
                             const std::vector<Strided<T>>& dkeys,
                             const std::vector<Strided<T>>& dvalues, double* dw,
                             BlockSpec blocks) {
    const int64_t n_q = q.rows, d = q.width;
    const int64_t n_chunks = static_cast<int64_t>(keys.size());
    const int64_t n_kv = keys[0].rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const int64_t br = std::clamp<int64_t>(blocks.query_rows, 1, n_q);
    const int64_t bc = std::clamp<int64_t>(blocks.key_cols, 1, n_kv);

    // D[i,k] = <dout_i, per_chunk[k,i,:]>
    std::vector<double> D(static_cast<size_t>(n_q * n_chunks));
    for (int64_t i = 0; i < n_q; ++i) {
        const T* dor = dout.p + i * dout.stride;
        for (int64_t k = 0; k < n_chunks; ++k) {
            const T* op = per_chunk_base.p + k * per_chunk_slab + i * per_chunk_base.stride;
            D[i * n_chunks + k] = dot_d(dor, op, d);
        }
    }

    std::vector<double> dq_acc(static_cast<size_t>(n_q * d), 0.0);
    std::vector<double> dk_acc(static_cast<size_t>(n_kv * d));
    std::vector<double> dv_acc(static_cast<size_t>(n_kv * d));
    std::vector<double> p(static_cast<size_t>(br * bc)), dp(static_cast<size_t>(br * bc));

    for (int64_t k = 0; k < n_chunks; ++k) {
        const double wk = static_cast<double>(w[k]);
        std::fill(dk_acc.begin(), dk_acc.end(), 0.0);
        std::fill(dv_acc.begin(), dv_acc.end(), 0.0);
        double dwk = 0.0;
        for (int64_t j0 = 0; j0 < n_kv; j0 += bc) {
            const int64_t jb = std::min(bc, n_kv - j0);
            for (int64_t i0 = 0; i0 < n_q; i0 += br) {
                const int64_t ib = std::min(br, n_q - i0);
                for (int64_t r = 0; r < ib; ++r) {
                    const T* qr = q.p + (i0 + r) * q.stride;
                    const T* dor = dout.p + (i0 + r) * dout.stride;
                    const double lse_ik = static_cast<double>(lse[(i0 + r) * n_chunks + k]);
                    double* pr = p.data() + r * bc;
                    double* dpr = dp.data() + r * bc;
                    for (int64_t c = 0; c < jb; ++c) {
                        const T* kr = keys[k].p + (j0 + c) * keys[k].stride;
                        const T* vr = values[k].p + (j0 + c) * values[k].stride;
                        pr[c] = std::exp(scale * dot_d(qr, kr, d) - lse_ik);
                        dpr[c] = dot_d(dor, vr, d);
                        dwk += pr[c] * dpr[c];
                    }
                    const double d_ik = D[(i0 + r) * n_chunks + k];
                    double* dqr = dq_acc.data() + (i0 + r) * d;
                    for (int64_t c = 0; c < jb; ++c) {
                        const double ds = wk * pr[c] * (dpr[c] - d_ik);
                        const T* kr = keys[k].p + (j0 + c) * keys[k].stride;
                        const T* qrr = q.p + (i0 + r) * q.stride;
                        double* dkr = dk_acc.data() + (j0 + c) * d;
                        double* dvr = dv_acc.data() + (j0 + c) * d;
                        const double wp = wk * pr[c];
                        for (int64_t c2 = 0; c2 < d; ++c2) {
                            dqr[c2] += scale * ds * static_cast<double>(kr[c2]);
                            dkr[c2] += scale * ds * static_cast<double>(qrr[c2]);
                            dvr[c2] += wp * static_cast<double>(dor[c2]);
                        }
                    }
                }
            }
        }
        dw[k] += dwk;
        for (int64_t j = 0; j < n_kv; ++j) {
            T* dkr = dkeys[k].p + j * dkeys[k].stride;
            T* dvr = dvalues[k].p + j * dvalues[k].stride;
            const double* ka = dk_acc.data() + j * d;
            const double* va = dv_acc.data() + j * d;
            for (int64_t c2 = 0; c2 < d; ++c2) {
                dkr[c2] += static_cast<T>(ka[c2]);
                dvr[c2] += static_cast<T>(va[c2]);
            }
        }
    }
    for (int64_t i = 0; i < n_q; ++i) {
        T* dqr = dq.p + i * dq.stride;
        const double* a = dq_acc.data() + i * d;
        for (int64_t c2 = 0; c2 < d; ++c2) dqr[c2] += static_cast<T>(a[c2]);
    }
}

template <typename T>
GcaForwardOut<T> flash_gca_forward(const Tensor<T>& q, const Tensor<T>& keys,
                                   const Tensor<T>& values, const std::vector<T>& w,
                                   BlockSpec blocks) {
    DRT_CHECK(q.ndim() == 2 && keys.ndim() == 3 && values.ndim() == 3, "bad ranks");
    const int64_t n_q = q.dim(0), d = q.dim(1);
    const int64_t n_chunks = keys.dim(0), n_kv = keys.dim(1);
    DRT_CHECK(keys.dim(2) == d && values.dim(1) == n_kv && values.dim(2) == d &&
                  values.dim(0) == n_chunks,
              "chunk stack mismatch");
    DRT_CHECK(static_cast<int64_t>(w.size()) == n_chunks, "weight count mismatch");

    GcaForwardOut<T> out;
    out.out = Tensor<T>({n_q, d});
    out.per_chunk = Tensor<T>({n_chunks, n_q, d});
    out.lse = Tensor<T>({n_q, n_chunks});

    std::vector<ConstStrided<T>> kv(static_cast<size_t>(n_chunks)), vv(static_cast<size_t>(n_chunks));
    for (int64_t k = 0; k < n_chunks; ++k) {
        kv[k] = ConstStrided<T>(keys.data() + k * n_kv * d, n_kv, d, d);
        vv[k] = ConstStrided<T>(values.data() + k * n_kv * d, n_kv, d, d);
    }
    flash_gca_forward_head<T>(ConstStrided<T>(q.data(), n_q, d, d), kv, vv, w.data(),
                              Strided<T>{out.out.data(), n_q, d, d},
                              Strided<T>{out.per_chunk.data(), n_q, d, d}, n_q * d,
                              out.lse.data(), blocks);
    return out;
}

template <typename T>
GcaGrads<T> flash_gca_backward(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values,
                               const std::vector<T>& w, const Tensor<T>& per_chunk,
                               const Tensor<T>& lse, const Tensor<T>& dout, BlockSpec blocks) {
    const int64_t n_q = q.dim(0), d = q.dim(1);
    const int64_t n_chunks = keys.dim(0), n_kv = keys.dim(1);
    DRT_CHECK(per_chunk.ndim() == 3 && per_chunk.dim(0) == n_chunks && per_chunk.dim(1) == n_q &&
                  per_chunk.dim(2) == d,
              "per_chunk shape mismatch");
    DRT_CHECK(lse.ndim() == 2 && lse.dim(0) == n_q && lse.dim(1) == n_chunks,
              "lse shape mismatch");
    DRT_CHECK(dout.dim(0) == n_q && dout.dim(1) == d, "dout shape mismatch");

    GcaGrads<T> g;
    g.dq = Tensor<T>({n_q, d});
    g.dkeys = Tensor<T>({n_chunks, n_kv, d});
    g.dvalues = Tensor<T>({n_chunks, n_kv, d});
    g.dw.assign(static_cast<size_t>(n_chunks), T(0));

    std::vector<ConstStrided<T>> kv(static_cast<size_t>(n_chunks)), vv(static_cast<size_t>(n_chunks));
    std::vector<Strided<T>> dkv(static_cast<size_t>(n_chunks)), dvv(static_cast<size_t>(n_chunks));
    for (int64_t k = 0; k < n_chunks; ++k) {
        kv[k] = ConstStrided<T>(keys.data() + k * n_kv * d, n_kv, d, d);
        vv[k] = ConstStrided<T>(values.data() + k * n_kv * d, n_kv, d, d);
        dkv[k] = Strided<T>{g.dkeys.data() + k * n_kv * d, n_kv, d, d};
        dvv[k] = Strided<T>{g.dvalues.data() + k * n_kv * d, n_kv, d, d};
    }
    std::vector<double> dw(static_cast<size_t>(n_chunks), 0.0);
    flash_gca_backward_head<T>(ConstStrided<T>(q.data(), n_q, d, d), kv, vv, w.data(),
                               ConstStrided<T>(per_chunk.data(), n_q, d, d), n_q * d, lse.data(),
                               ConstStrided<T>(dout.data(), n_q, d, d),
                               Strided<T>{g.dq.data(), n_q, d, d}, dkv, dvv, dw.data(), blocks);
    for (int64_t k = 0; k < n_chunks; ++k) g.dw[static_cast<size_t>(k)] = static_cast<T>(dw[k]);
    return g;
}

// ---------------------------------------------------------------------------
// Sliding-window attention

template <typename T>
void attend_window_row(const T* qrow, const T* keys, const T* values, int64_t count,
                       int64_t stride, int64_t width, double slope, int64_t qpos, int64_t pos0,
                       T* out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(width));
    double m = kNegInf;
    double logits[512];
    std::vector<double> heap;
    double* lg = logits;
    if (count > 512) {
        heap.resize(static_cast<size_t>(count));
        lg = heap.data();
    }
    for (int64_t j = 0; j < count; ++j) {
        lg[j] = scale * dot_d(qrow, keys + j * stride, width) -
                slope * static_cast<double>(qpos - (pos0 + j));
        m = std::max(m, lg[j]);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < count; ++j) {
        lg[j] = std::exp(lg[j] - m);
        denom += lg[j];
    }
    double acc[512];
    std::vector<double> heap2;
    double* a = acc;
    if (width > 512) {
        heap2.resize(static_cast<size_t>(width));
        a = heap2.data();
    }
    std::fill(a, a + width, 0.0);
    for (int64_t j = 0; j < count; ++j) {
        const double p = lg[j] / denom;
        const T* vr = values + j * stride;
        for (int64_t c = 0; c < width; ++c) a[c] += p * static_cast<double>(vr[c]);
    }
    for (int64_t c = 0; c < width; ++c) out[c] = static_cast<T>(a[c]);
}

template <typename T>
void sliding_window_attention_head(ConstStrided<T> q, ConstStrided<T> k, ConstStrided<T> v,
                                   int window, double slope, Strided<T> out) {
    DRT_CHECK(window >= 1, "window=", window);
    const int64_t n = q.rows;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t j0 = std::max<int64_t>(0, i - window + 1);
        attend_window_row(q.p + i * q.stride, k.p + j0 * k.stride, v.p + j0 * v.stride, i - j0 + 1,
                          k.stride, q.width, slope, i, j0, out.p + i * out.stride);
    }
}

template <typename T>
Tensor<T> sliding_window_self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        int window, double slope) {
    DRT_CHECK(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "bad ranks");
    const int64_t n = q.dim(0), d = q.dim(1);
    DRT_CHECK(k.dim(0) == n && k.dim(1) == d && v.dim(0) == n && v.dim(1) == d, "shape mismatch");
    Tensor<T> out({n, d});
    sliding_window_attention_head<T>(ConstStrided<T>(q.data(), n, d, d),
                                     ConstStrided<T>(k.data(), n, d, d),
                                     ConstStrided<T>(v.data(), n, d, d), window, slope,
                                     Strided<T>{out.data(), n, d, d});
    uint64_t pairs = 0;
    for (int64_t i = 0; i < n; ++i) pairs += static_cast<uint64_t>(std::min<int64_t>(i + 1, window));
    ops::add_window(pairs * 2 * static_cast<uint64_t>(d));
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences

Tensor<double> finite_difference_grad(const std::function<double(const Tensor<double>&)>& f,
                                      const Tensor<double>& x, double eps) {
    DRT_CHECK(eps > 0, "eps=", eps);
    Tensor<double> g(x.shape());
    Tensor<double> probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + eps;
        const double fp = f(probe);
        probe[i] = x0 - eps;
        const double fm = f(probe);
        probe[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error(detail::strcat("finite_difference_grad: non-finite f at coordinate ", i));
        }
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// ---------------------------------------------------------------------------

#define DRT_INSTANTIATE(T)                                                                        \
    template Tensor<T> cross_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> gca_reference<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        const std::vector<T>&);                                  \
    template void flash_gca_forward_head<T>(ConstStrided<T>, const std::vector<ConstStrided<T>>&, \
                                            const std::vector<ConstStrided<T>>&, const T*,       \
                                            Strided<T>, Strided<T>, int64_t, T*, BlockSpec);     \
    template void flash_gca_backward_head<T>(                                                    \
        ConstStrided<T>, const std::vector<ConstStrided<T>>&, const std::vector<ConstStrided<T>>&, \
        const T*, ConstStrided<T>, int64_t, const T*, ConstStrided<T>, Strided<T>,               \
        const std::vector<Strided<T>>&, const std::vector<Strided<T>>&, double*, BlockSpec);     \
    template GcaForwardOut<T> flash_gca_forward<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                   const Tensor<T>&, const std::vector<T>&,      \
                                                   BlockSpec);                                   \
    template GcaGrads<T> flash_gca_backward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                               const Tensor<T>&, const std::vector<T>&,          \
                                               const Tensor<T>&, const Tensor<T>&,               \
                                               const Tensor<T>&, BlockSpec);                     \
    template void attend_window_row<T>(const T*, const T*, const T*, int64_t, int64_t, int64_t,  \
                                       double, int64_t, int64_t, T*);                            \
    template void sliding_window_attention_head<T>(ConstStrided<T>, ConstStrided<T>,             \
                                                   ConstStrided<T>, int, double, Strided<T>);    \
    template Tensor<T> sliding_window_self_attention<T>(const Tensor<T>&, const Tensor<T>&,      \
                                                        const Tensor<T>&, int, double);

DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

}  // namespace drt::kernels
