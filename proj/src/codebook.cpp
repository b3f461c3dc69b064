#include "covpr/codebook.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "covpr/errors.hpp"
#include "covpr/rng.hpp"

namespace covpr {

void Codebook::validate() const {
    if (cluster_count() < 2) throw ShapeError("codebook needs at least 2 clusters");
    if (!(softness > 0.0)) throw ShapeError("codebook softness must be positive");
    if (!centroids.all_finite()) throw ShapeError("codebook centroids contain non-finite values");
}

namespace {

std::size_t count_distinct_rows(const Matrix& points) {
    std::vector<std::size_t> order(points.rows());
    std::iota(order.begin(), order.end(), 0);
    auto row_less = [&](std::size_t a, std::size_t b) {
        const auto ra = points.row(a);
        const auto rb = points.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::sort(order.begin(), order.end(), row_less);
    std::size_t distinct = points.rows() == 0 ? 0 : 1;
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (row_less(order[i - 1], order[i])) ++distinct;
    }
    return distinct;
}

std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
        const double d = squared_distance(x, centroids.row(k));
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// k-means++ style seeding: first centre uniform, the rest sampled with
// probability proportional to the squared distance to the nearest chosen
// centre.
Matrix seed_centroids(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    Matrix centroids(k, d);

    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    const std::size_t first = rng.uniform_index(n);
    std::copy_n(points.row(first).begin(), d, centroids.row(0).begin());

    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double di = squared_distance(points.row(i), centroids.row(c - 1));
            dist2[i] = std::min(dist2[i], di);
            total += dist2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double cum = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cum += dist2[i];
                if (cum > target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_index(n);
        }
        std::copy_n(points.row(pick).begin(), d, centroids.row(c).begin());
    }
    return centroids;
}

}  // namespace

FitResult fit_codebook(std::span<const LocalDescriptorSet> samples, std::size_t k,
                       std::uint64_t seed, const FitOptions& options) {
    if (k < 2) throw ShapeError("k must be at least 2");
    if (samples.empty()) throw ShapeError("no descriptor sets given");

    const std::size_t d = samples.front().dim();
    std::size_t total = 0;
    for (const auto& s : samples) {
        s.validate();
        if (s.dim() != d) throw ShapeError("descriptor sets disagree on dimension");
        total += s.count();
    }
    if (total < k) throw ShapeError("insufficient samples");

    Matrix points(total, d);
    std::size_t r = 0;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < s.count(); ++i, ++r) {
            std::copy_n(s.data.row(i).begin(), d, points.row(r).begin());
        }
    }
    if (count_distinct_rows(points) < k) throw ShapeError("insufficient samples");

    Rng rng(derive_seed(seed, "kmeans"));
    Matrix centroids = seed_centroids(points, k, rng);

    FitResult result;
    std::vector<std::size_t> assign(total, 0);
    std::vector<std::size_t> prev_assign;

    for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
        // Assignment step; inertia is measured here so the recorded trace is
        // non-increasing across iterations.
        double inertia = 0.0;
        for (std::size_t i = 0; i < total; ++i) {
            assign[i] = nearest_centroid(centroids, points.row(i));
            inertia += squared_distance(points.row(i), centroids.row(assign[i]));
        }
        result.inertia_trace.push_back(inertia);
        result.inertia = inertia;
        result.iterations = iter + 1;
        if (assign == prev_assign) break;
        prev_assign = assign;

        // Mean update.
        Matrix sums(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < total; ++i) {
            auto dst = sums.row(assign[i]);
            const auto src = points.row(i);
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
            }
        }

        // Empty-cluster repair: move the centroid onto the point currently
        // farthest from its own centre (lowest index on ties).
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < total; ++i) {
                const double di = squared_distance(points.row(i), centroids.row(assign[i]));
                if (di > far_d) {
                    far_d = di;
                    far = i;
                }
            }
            std::copy_n(points.row(far).begin(), d, centroids.row(c).begin());
        }
    }

    result.codebook.centroids = std::move(centroids);
    result.codebook.softness = options.softness;
    result.codebook.validate();
    return result;
}

}  // namespace covpr
