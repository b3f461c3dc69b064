#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "covpr/descriptor.hpp"
#include "covpr/matrix.hpp"

namespace covpr {

// K centroids plus the softness scalar of the soft-assignment exponent.
// The per-cluster affine parameters w_k = 2*softness*c_k and
// b_k = -softness*||c_k||^2 are always recomputed from (centroids, softness),
// never stored, so the two stay tied during training.
struct Codebook {
    Matrix centroids;       // K x d
    double softness = 30.0;

    std::size_t cluster_count() const { return centroids.rows(); }
    std::size_t dim() const { return centroids.cols(); }

    double bias(std::size_t k) const {
        return -softness * dot(centroids.row(k), centroids.row(k));
    }

    void validate() const;
};

struct FitOptions {
    std::size_t max_iterations = 100;
    double softness = 30.0;
};

struct FitResult {
    Codebook codebook;
    double inertia = 0.0;               // within-cluster squared error at convergence
    std::vector<double> inertia_trace;  // one value per Lloyd assignment step
    std::size_t iterations = 0;
};

// Lloyd's iteration with k-means++ style seeding. Deterministic for a fixed
// seed. Throws ShapeError("insufficient samples") when the inputs contain
// fewer distinct rows than k, and on any dimension mismatch.
FitResult fit_codebook(std::span<const LocalDescriptorSet> samples, std::size_t k,
                       std::uint64_t seed, const FitOptions& options = {});

}  // namespace covpr
