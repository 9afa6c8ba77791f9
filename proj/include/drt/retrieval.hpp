#pragma once

#include <vector>

#include "drt/common.hpp"
#include "drt/rng.hpp"

namespace drt::retrieval {

// Decoder layer grouping: the upper half of an N-layer stack is split into
// n_groups contiguous groups that each share one retrieval per chunk.
struct GroupSpec {
    int n_layers = 0;  // total decoder layers, even
    int n_groups = 0;  // divides n_layers/2

    int layers_per_group() const { return (n_layers / 2) / n_groups; }
    void validate() const {
        DRT_CHECK(n_layers >= 2 && n_layers % 2 == 0, "n_layers=", n_layers);
        DRT_CHECK(n_groups >= 1 && (n_layers / 2) % n_groups == 0,
                  "n_groups=", n_groups, " must divide ", n_layers / 2);
    }
};

// 1-based upper-layer index -> 1-based group index, ceil((l - N/2) / (N/2G)).
int group_of_layer(int layer, const GroupSpec& spec);

// Chunks a decoder chunk selected for its successor: which past chunks,
// their noise-free scores, and the softmaxed fusion weights.
struct RetrievalSet {
    std::vector<int> indices;        // ascending chunk ids, all < the scoring chunk
    std::vector<double> raw_scores;  // aligned with indices; Gumbel noise never lands here
    std::vector<double> weights;     // softmax of raw_scores

    bool empty() const { return indices.empty(); }
    size_t size() const { return indices.size(); }
};

// Scaled dot products (h·l_k)/sqrt(d) against every past landmark, in
// candidate order. Empty landmark list -> empty vector.
std::vector<double> relevance_scores(const float* h, const std::vector<const float*>& landmarks,
                                     int64_t d);
std::vector<double> relevance_scores(const double* h, const std::vector<const double*>& landmarks,
                                     int64_t d);

// Top-k of scores, optionally perturbed by Gumbel noise when training. Ties
// break toward the lower index; if fewer than k candidates exist all are
// taken. Returned indices are sorted ascending and carry no noise.
std::vector<int> gumbel_topk(const std::vector<double>& scores, int k, bool training, Rng& rng,
                             double temperature = 1.0);

// Softmax over exactly the selected scores, stabilized by max subtraction.
std::vector<double> fusion_weights(const std::vector<double>& raw_scores);

RetrievalSet select(const std::vector<double>& scores, int k, bool training, Rng& rng,
                    double temperature = 1.0);

}  // namespace drt::retrieval
