#include "covpr/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "covpr/errors.hpp"

namespace covpr {

namespace {

void check_dim(std::size_t have, std::size_t want) {
    if (have != want) throw ShapeError("descriptor dimension does not match codebook");
}

// Logits of the soft assignment in the affine form w_k.x + b_k, with
// precomputed squared centroid norms.
void soft_logits(std::span<const double> x, const Codebook& cb,
                 std::span<const double> cnorm2, std::span<double> out) {
    const double a = cb.softness;
    for (std::size_t k = 0; k < cb.cluster_count(); ++k) {
        out[k] = 2.0 * a * dot(cb.centroids.row(k), x) - a * cnorm2[k];
    }
}

void softmax_in_place(std::span<double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

std::vector<double> centroid_norms(const Codebook& cb) {
    std::vector<double> cnorm2(cb.cluster_count());
    for (std::size_t k = 0; k < cb.cluster_count(); ++k) {
        cnorm2[k] = dot(cb.centroids.row(k), cb.centroids.row(k));
    }
    return cnorm2;
}

}  // namespace

std::size_t hard_assign(std::span<const double> x, const Codebook& codebook) {
    check_dim(x.size(), codebook.dim());
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebook.cluster_count(); ++k) {
        const double d = squared_distance(x, codebook.centroids.row(k));
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

std::vector<double> soft_assign(std::span<const double> x, const Codebook& codebook) {
    check_dim(x.size(), codebook.dim());
    const auto cnorm2 = centroid_norms(codebook);
    std::vector<double> weights(codebook.cluster_count());
    soft_logits(x, codebook, cnorm2, weights);
    softmax_in_place(weights);
    return weights;
}

GlobalDescriptor aggregate(const LocalDescriptorSet& set, const Codebook& codebook,
                           AssignMode mode) {
    set.validate();
    check_dim(set.dim(), codebook.dim());

    const std::size_t k_count = codebook.cluster_count();
    const std::size_t d = codebook.dim();
    Matrix clusters(k_count, d);

    if (mode == AssignMode::kHard) {
        for (std::size_t i = 0; i < set.count(); ++i) {
            const auto x = set.data.row(i);
            const std::size_t k = hard_assign(x, codebook);
            auto v = clusters.row(k);
            const auto c = codebook.centroids.row(k);
            for (std::size_t j = 0; j < d; ++j) v[j] += x[j] - c[j];
        }
    } else {
        const auto cnorm2 = centroid_norms(codebook);
        std::vector<double> weights(k_count);
        for (std::size_t i = 0; i < set.count(); ++i) {
            const auto x = set.data.row(i);
            soft_logits(x, codebook, cnorm2, weights);
            softmax_in_place(weights);
            for (std::size_t k = 0; k < k_count; ++k) {
                auto v = clusters.row(k);
                const auto c = codebook.centroids.row(k);
                for (std::size_t j = 0; j < d; ++j) v[j] += weights[k] * (x[j] - c[j]);
            }
        }
    }

    for (std::size_t k = 0; k < k_count; ++k) normalize(clusters.row(k));
    return GlobalDescriptor(std::move(clusters));
}

}  // namespace covpr
