#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "covpr/descriptor.hpp"

namespace covpr {

struct Pose {
    double x = 0.0;
    double y = 0.0;
};

struct DatabaseEntry {
    std::uint64_t id = 0;
    Pose pose;
    std::vector<double> descriptor;  // flat view
};

// Immutable after build; insertion order is the deterministic tie-break for
// equal similarity scores.
class ReferenceDatabase {
public:
    static ReferenceDatabase build(std::vector<DatabaseEntry> entries);

    std::size_t size() const { return entries_.size(); }
    std::size_t dim() const { return dim_; }
    const DatabaseEntry& entry(std::size_t i) const { return entries_[i]; }
    const std::vector<DatabaseEntry>& entries() const { return entries_; }

private:
    ReferenceDatabase() = default;
    std::vector<DatabaseEntry> entries_;
    std::size_t dim_ = 0;
};

struct RankedMatch {
    std::uint64_t id = 0;
    double score = 0.0;  // similarity, non-increasing down the ranking
    Pose pose;
};

struct RetrievalResult {
    std::vector<RankedMatch> ranked;
};

// Exact linear scan by squared L2 distance. The reported score is the
// similarity 1 - ||q - r||^2 / 2, which equals the dot product for unit
// vectors and is affine in the ranking distance, so scores are always
// non-increasing. Ties break by insertion order.
RetrievalResult query_topk(const ReferenceDatabase& db, std::span<const double> query,
                           std::size_t k_top);
RetrievalResult query_topk(const ReferenceDatabase& db, const GlobalDescriptor& query,
                           std::size_t k_top);

// Re-ordering baseline: per-agent similarity scores against every database
// entry are summed element-wise into a cumulative score before ranking.
RetrievalResult query_reordering(const ReferenceDatabase& db,
                                 const std::vector<GlobalDescriptor>& group,
                                 std::size_t k_top);

struct EvalQuery {
    Pose ego_pose;
    RetrievalResult result;
};

struct EvalReport {
    std::map<std::size_t, double> recall_at;
    std::map<std::size_t, double> error_at;  // exactly 1 - recall
    std::size_t query_count = 0;
    double threshold_m = 0.0;
};

// A query counts correct at K when any of its top-K retrieved poses lies
// within Euclidean distance threshold_m of the ego pose.
EvalReport evaluate(const ReferenceDatabase& db, const std::vector<EvalQuery>& queries,
                    double threshold_m, const std::vector<std::size_t>& ks = {1, 5, 10});

}  // namespace covpr
