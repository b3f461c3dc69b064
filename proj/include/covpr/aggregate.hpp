#pragma once

#include <span>
#include <vector>

#include "covpr/codebook.hpp"
#include "covpr/descriptor.hpp"

namespace covpr {

enum class AssignMode { kHard, kSoft };

// Index of the nearest centroid; ties resolve to the lowest index.
std::size_t hard_assign(std::span<const double> x, const Codebook& codebook);

// Softmax weights over clusters, computed from the affine logits
// w_k.x + b_k with the max logit subtracted before exponentiation.
// Weights are in [0,1] and sum to 1.
std::vector<double> soft_assign(std::span<const double> x, const Codebook& codebook);

// Residual aggregation: V_k = sum_i a_k(x_i) (x_i - c_k), each cluster
// intra-normalized (zero clusters stay zero), flat view globally normalized.
GlobalDescriptor aggregate(const LocalDescriptorSet& set, const Codebook& codebook,
                           AssignMode mode);

}  // namespace covpr
