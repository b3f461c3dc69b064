#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "covpr/aggregate.hpp"
#include "covpr/codebook.hpp"
#include "covpr/fusion.hpp"
#include "covpr/retrieval.hpp"

namespace covpr {

// One weakly-supervised training tuple: a query group (pre-aggregation local
// sets), at least one location-positive set and at least one negative set.
struct TripletItem {
    LocalDescriptorSet ego;
    std::vector<LocalDescriptorSet> collaborators;
    std::vector<LocalDescriptorSet> positives;
    std::vector<LocalDescriptorSet> negatives;
};

struct TripletBatch {
    std::vector<TripletItem> items;
};

// Sum of hinges over negatives against the best (minimum-distance) positive:
//   loss = sum_j max(0, dq_p + margin - dq_n[j]).
double triplet_loss(double dq_p, std::span<const double> dq_n, double margin);

struct Gradients {
    Matrix centroids;        // K x d
    double softness = 0.0;
};

struct ForwardBackward {
    double loss = 0.0;       // summed over non-skipped items
    Gradients grads;
    std::size_t items_used = 0;
    std::size_t items_skipped = 0;  // degenerate descriptors encountered
};

// Loss and analytic gradients w.r.t. (centroids, softness) through soft
// assignment, residual aggregation, both normalizations, the selected fusion
// and the triplet loss. gamma is treated as a function of its inputs, with
// subgradient 0 at exact clamp and hinge boundaries. Requires the soft
// aggregation path; fusion mode kAverage is supported, kNone bypasses fusion.
ForwardBackward forward_backward(const TripletBatch& batch, const Codebook& codebook,
                                 FusionMode mode, double margin);

struct GradCheckConfig {
    std::size_t clusters = 4;
    std::size_t dim = 8;
    std::size_t rows = 16;          // local descriptors per set
    std::size_t collaborators = 1;
    FusionMode mode = FusionMode::kGlobal;
    double margin = 1.0;
    std::uint64_t seed = 0;
    double epsilon = 1e-5;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_parameter = 0;    // flat centroid index, or K*d for softness
    double step = 0.0;
    std::size_t resampled = 0;          // draws rejected as boundary cases
};

// Central finite differences against the analytic gradients on a seeded
// random batch. Draws that land within 1e-6 of a hinge or clamp boundary
// (or produce ill-conditioned cluster norms) are redrawn deterministically.
GradCheckReport grad_check(const GradCheckConfig& config);

// Dataset contract for the toy trainer; simworld and file loaders both
// produce this shape.
struct TrainDataset {
    struct Reference {
        Pose pose;
        LocalDescriptorSet set;
    };
    struct Query {
        Pose ego_pose;
        LocalDescriptorSet ego;
        std::vector<LocalDescriptorSet> collaborators;
    };
    std::vector<Reference> references;
    std::vector<Query> queries;
};

struct TrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 0.05;
    std::size_t halve_every = 5;        // learning rate halved every N epochs
    double margin = 0.1;
    double positive_radius_m = 10.0;    // defaults to the eval threshold
    std::size_t negatives_per_query = 4;
    FusionMode mode = FusionMode::kGlobal;
    std::uint64_t seed = 1;
    std::optional<Codebook> init;       // e.g. a trained single-agent codebook
    std::size_t fit_clusters = 4;       // used when init is absent
    double fit_softness = 8.0;
};

struct TraceRow {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    Codebook codebook;
    std::vector<TraceRow> trace;
    std::size_t skipped_items = 0;
};

// Plain full-batch gradient descent with the halving schedule. Negatives are
// re-sampled uniformly each epoch from references beyond the positive
// radius. Deterministic under a fixed seed; aborts with ShapeError on a
// non-finite loss.
TrainResult train(const TrainDataset& dataset, const TrainConfig& config);

}  // namespace covpr
