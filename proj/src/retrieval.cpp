#include "drt/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "drt/opcount.hpp"

namespace drt::retrieval {

int group_of_layer(int layer, const GroupSpec& spec) {
    spec.validate();
    const int half = spec.n_layers / 2;
    DRT_CHECK(layer > half && layer <= spec.n_layers, "layer ", layer,
              " is not an upper layer of a ", spec.n_layers, "-layer stack");
    const int per = half / spec.n_groups;
    return (layer - half + per - 1) / per;
}

namespace {

template <typename T>
std::vector<double> scores_impl(const T* h, const std::vector<const T*>& landmarks, int64_t d) {
    DRT_CHECK(d >= 1, "d=", d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> scores(landmarks.size());
    for (size_t k = 0; k < landmarks.size(); ++k) {
        double s = 0.0;
        const T* l = landmarks[k];
        for (int64_t i = 0; i < d; ++i) s += static_cast<double>(h[i]) * static_cast<double>(l[i]);
        scores[k] = s * scale;
    }
    ops::add_score(static_cast<uint64_t>(landmarks.size()) * static_cast<uint64_t>(d));
    return scores;
}

}  // namespace

std::vector<double> relevance_scores(const float* h, const std::vector<const float*>& landmarks,
                                     int64_t d) {
    return scores_impl(h, landmarks, d);
}
std::vector<double> relevance_scores(const double* h, const std::vector<const double*>& landmarks,
                                     int64_t d) {
    return scores_impl(h, landmarks, d);
}

std::vector<int> gumbel_topk(const std::vector<double>& scores, int k, bool training, Rng& rng,
                             double temperature) {
    DRT_CHECK(k >= 1, "k=", k);
    const int n = static_cast<int>(scores.size());
    if (n == 0) return {};

    std::vector<std::pair<double, int>> keyed(scores.size());
    for (int i = 0; i < n; ++i) {
        double s = scores[static_cast<size_t>(i)];
        if (training) s += temperature * rng.gumbel();
        keyed[static_cast<size_t>(i)] = {s, i};
    }
    const int take = std::min(k, n);
    std::partial_sort(keyed.begin(), keyed.begin() + take, keyed.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;  // lower index wins ties
                      });
    std::vector<int> out(static_cast<size_t>(take));
    for (int i = 0; i < take; ++i) out[static_cast<size_t>(i)] = keyed[static_cast<size_t>(i)].second;
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> fusion_weights(const std::vector<double>& raw_scores) {
    DRT_CHECK(!raw_scores.empty(), "fusion_weights on empty selection");
    double m = raw_scores[0];
    for (double s : raw_scores) m = std::max(m, s);
    std::vector<double> w(raw_scores.size());
    double denom = 0.0;
    for (size_t i = 0; i < raw_scores.size(); ++i) {
        w[i] = std::exp(raw_scores[i] - m);
        denom += w[i];
    }
    for (double& x : w) x /= denom;
    return w;
}

RetrievalSet select(const std::vector<double>& scores, int k, bool training, Rng& rng,
                    double temperature) {
    RetrievalSet set;
    set.indices = gumbel_topk(scores, k, training, rng, temperature);
    if (set.indices.empty()) return set;
    set.raw_scores.reserve(set.indices.size());
    for (int idx : set.indices) set.raw_scores.push_back(scores[static_cast<size_t>(idx)]);
    set.weights = fusion_weights(set.raw_scores);
    return set;
}

}  // namespace drt::retrieval
