#include "covpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "covpr/errors.hpp"

namespace covpr {

ReferenceDatabase ReferenceDatabase::build(std::vector<DatabaseEntry> entries) {
    if (entries.empty()) throw ShapeError("reference database cannot be empty");
    const std::size_t dim = entries.front().descriptor.size();
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(entries.size());
    for (const auto& e : entries) {
        if (e.descriptor.size() != dim) {
            throw ShapeError("database entries disagree on descriptor length");
        }
        if (!seen.insert(e.id).second) throw ShapeError("duplicate id");
    }
    ReferenceDatabase db;
    db.entries_ = std::move(entries);
    db.dim_ = dim;
    return db;
}

namespace {

// Ranks indices by score descending, insertion order on ties, and keeps the
// first k_top.
RetrievalResult rank_by_score(const ReferenceDatabase& db, const std::vector<double>& scores,
                              std::size_t k_top) {
    std::vector<std::size_t> order(db.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RetrievalResult result;
    const std::size_t n = std::min(k_top, db.size());
    result.ranked.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& e = db.entry(order[r]);
        result.ranked.push_back({e.id, scores[order[r]], e.pose});
    }
    return result;
}

// Similarity affine in the squared L2 distance; equals the dot product for
// unit vectors.
double similarity(std::span<const double> q, std::span<const double> r) {
    return 1.0 - 0.5 * squared_distance(q, r);
}

}  // namespace

RetrievalResult query_topk(const ReferenceDatabase& db, std::span<const double> query,
                           std::size_t k_top) {
    if (k_top < 1) throw ShapeError("k_top must be at least 1");
    if (query.size() != db.dim()) throw ShapeError("query dimension does not match database");
    std::vector<double> scores(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) {
        scores[i] = similarity(query, db.entry(i).descriptor);
    }
    return rank_by_score(db, scores, k_top);
}

RetrievalResult query_topk(const ReferenceDatabase& db, const GlobalDescriptor& query,
                           std::size_t k_top) {
    return query_topk(db, std::span<const double>(query.flat()), k_top);
}

RetrievalResult query_reordering(const ReferenceDatabase& db,
                                 const std::vector<GlobalDescriptor>& group,
                                 std::size_t k_top) {
    if (group.empty()) throw ShapeError("re-ordering needs at least one descriptor");
    if (k_top < 1) throw ShapeError("k_top must be at least 1");
    std::vector<double> cumulative(db.size(), 0.0);
    for (const auto& g : group) {
        if (g.flat().size() != db.dim()) {
            throw ShapeError("query dimension does not match database");
        }
        for (std::size_t i = 0; i < db.size(); ++i) {
            cumulative[i] += similarity(g.flat(), db.entry(i).descriptor);
        }
    }
    return rank_by_score(db, cumulative, k_top);
}

EvalReport evaluate(const ReferenceDatabase& db, const std::vector<EvalQuery>& queries,
                    double threshold_m, const std::vector<std::size_t>& ks) {
    if (queries.empty()) throw ShapeError("empty query set");
    if (ks.empty()) throw ShapeError("no recall depths given");
    const std::size_t max_k = *std::max_element(ks.begin(), ks.end());
    for (const auto& q : queries) {
        if (q.result.ranked.size() < max_k && q.result.ranked.size() != db.size()) {
            throw ShapeError("retrieval result shorter than the largest requested depth");
        }
    }

    EvalReport report;
    report.query_count = queries.size();
    report.threshold_m = threshold_m;
    for (std::size_t k : ks) {
        std::size_t correct = 0;
        for (const auto& q : queries) {
            const std::size_t depth = std::min(k, q.result.ranked.size());
            for (std::size_t r = 0; r < depth; ++r) {
                const auto& match = q.result.ranked[r];
                const double dx = match.pose.x - q.ego_pose.x;
                const double dy = match.pose.y - q.ego_pose.y;
                if (std::sqrt(dx * dx + dy * dy) < threshold_m) {
                    ++correct;
                    break;
                }
            }
        }
        const double recall = static_cast<double>(correct) / static_cast<double>(queries.size());
        report.recall_at[k] = recall;
        report.error_at[k] = 1.0 - recall;
    }
    return report;
}

}  // namespace covpr
