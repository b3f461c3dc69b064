#pragma once

#include <string_view>
#include <vector>

#include "covpr/descriptor.hpp"
#include "covpr/matrix.hpp"

namespace covpr {

enum class FusionMode { kNone, kGlobal, kClusterwise, kAverage };

FusionMode fusion_mode_from_string(std::string_view name);
std::string_view to_string(FusionMode mode);

struct FusionInput {
    GlobalDescriptor ego;
    std::vector<GlobalDescriptor> collaborators;
};

struct FusionReport {
    GlobalDescriptor fused;
    // Regularization factors, clamped to [0,1] for unit-norm inputs:
    // N x 1 in global mode, N x K in cluster-wise mode.
    Matrix gammas;
};

// Similarity-regularized fusion on flat descriptors:
//   gamma_n = max(Y0 . Yn, 0),  fused = sigma(Y0 + (1/N) sum gamma_n Yn).
// N = 0 returns the ego descriptor unchanged. Degenerate collaborators
// contribute gamma = 0; a degenerate ego is an error.
FusionReport fuse_global(const FusionInput& input);

// Cluster-wise variant on the intra-normalized cluster vectors, with a
// per-cluster gamma, per-cluster renormalization and a final global sigma.
// Zero ego clusters pass through as zero.
FusionReport fuse_clusterwise(const FusionInput& input);

// Average-pooling baseline: sigma(mean of all N+1 flat descriptors). An
// exactly cancelled mean yields a degenerate descriptor, not an error.
GlobalDescriptor fuse_average(const FusionInput& input);

// Mode dispatch; kNone returns the ego descriptor.
GlobalDescriptor fuse(const FusionInput& input, FusionMode mode);

// Selfcheck negative control: disables the final normalization in the two
// similarity-regularized paths so the consistency property visibly breaks.
void set_fusion_debug_skip_normalize(bool skip);

}  // namespace covpr
