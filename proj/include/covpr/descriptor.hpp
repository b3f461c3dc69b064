#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "covpr/errors.hpp"
#include "covpr/matrix.hpp"

namespace covpr {

// A set of M local features (rows) of dimension d, standing in for the CNN
// output of one image.
struct LocalDescriptorSet {
    Matrix data;           // M x d
    std::string image_id;

    std::size_t count() const { return data.rows(); }
    std::size_t dim() const { return data.cols(); }

    void validate() const {
        if (data.rows() < 1 || data.cols() < 1) {
            throw ShapeError("local descriptor set must be at least 1x1");
        }
        if (!data.all_finite()) {
            throw ShapeError("local descriptor set contains non-finite values");
        }
    }
};

// Cluster-structured place descriptor. `clusters()` keeps the per-cluster
// vectors (unit norm or exactly zero after intra-normalization); `flat()` is
// the globally L2-normalized concatenation used for retrieval. A descriptor
// whose clusters are all zero is flagged degenerate and its flat view stays
// all-zero.
class GlobalDescriptor {
public:
    GlobalDescriptor() = default;

    explicit GlobalDescriptor(Matrix clusters) : clusters_(std::move(clusters)) {
        flat_.assign(clusters_.data(), clusters_.data() + clusters_.rows() * clusters_.cols());
        const double n = normalize(std::span<double>(flat_));
        degenerate_ = (n == 0.0);
    }

    // Adopts `flat` as-is (no renormalization); used where the caller owns
    // the final sigma, e.g. fusion outputs.
    static GlobalDescriptor from_flat_verbatim(std::size_t k, std::size_t d,
                                               std::vector<double> flat) {
        GlobalDescriptor g;
        g.clusters_ = Matrix(k, d);
        std::copy(flat.begin(), flat.end(), g.clusters_.data());
        g.flat_ = std::move(flat);
        g.degenerate_ = (norm(std::span<const double>(g.flat_)) == 0.0);
        return g;
    }

    std::size_t cluster_count() const { return clusters_.rows(); }
    std::size_t dim() const { return clusters_.cols(); }
    std::size_t flat_size() const { return flat_.size(); }

    const Matrix& clusters() const { return clusters_; }
    const std::vector<double>& flat() const { return flat_; }
    bool degenerate() const { return degenerate_; }

private:
    Matrix clusters_;            // K x d
    std::vector<double> flat_;   // K*d, unit norm unless degenerate
    bool degenerate_ = true;
};

}  // namespace covpr
