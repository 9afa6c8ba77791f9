#pragma once

#include <atomic>
#include <cstdint>

namespace drt::ops {

// Multiply-accumulate counters for the three attention cost components of
// the complexity model: relevance scoring, fused per-chunk cross-attention,
// and sliding-window self-attention. Disabled by default; the bench command
// switches them on around an instrumented forward pass.
struct Counters {
    uint64_t score_macs = 0;
    uint64_t gca_macs = 0;
    uint64_t window_macs = 0;
    uint64_t total() const { return score_macs + gca_macs + window_macs; }
};

namespace detail {
inline std::atomic<bool> enabled{false};
inline std::atomic<uint64_t> score{0};
inline std::atomic<uint64_t> gca{0};
inline std::atomic<uint64_t> window{0};
}  // namespace detail

inline bool enabled() { return detail::enabled.load(std::memory_order_relaxed); }
inline void enable(bool on) { detail::enabled.store(on, std::memory_order_relaxed); }

inline void reset() {
    detail::score = 0;
    detail::gca = 0;
    detail::window = 0;
}

inline void add_score(uint64_t n) {
    if (enabled()) detail::score.fetch_add(n, std::memory_order_relaxed);
}
inline void add_gca(uint64_t n) {
    if (enabled()) detail::gca.fetch_add(n, std::memory_order_relaxed);
}
inline void add_window(uint64_t n) {
    if (enabled()) detail::window.fetch_add(n, std::memory_order_relaxed);
}

inline Counters snapshot() {
    Counters c;
    c.score_macs = detail::score.load();
    c.gca_macs = detail::gca.load();
    c.window_macs = detail::window.load();
    return c;
}

}  // namespace drt::ops
