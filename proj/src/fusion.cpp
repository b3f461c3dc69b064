#include "covpr/fusion.hpp"

#include <algorithm>
#include <string>

#include "covpr/errors.hpp"

namespace covpr {

namespace {

bool g_skip_normalize = false;

void check_input(const FusionInput& input) {
    if (input.ego.degenerate()) throw ShapeError("degenerate ego descriptor");
    for (const auto& c : input.collaborators) {
        if (c.cluster_count() != input.ego.cluster_count() || c.dim() != input.ego.dim()) {
            throw ShapeError("collaborator descriptor dimensions do not match ego");
        }
    }
}

}  // namespace

void set_fusion_debug_skip_normalize(bool skip) { g_skip_normalize = skip; }

FusionMode fusion_mode_from_string(std::string_view name) {
    if (name == "none") return FusionMode::kNone;
    if (name == "global") return FusionMode::kGlobal;
    if (name == "clusterwise") return FusionMode::kClusterwise;
    if (name == "average") return FusionMode::kAverage;
    throw ShapeError("unknown fusion mode: " + std::string(name));
}

std::string_view to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::kNone: return "none";
        case FusionMode::kGlobal: return "global";
        case FusionMode::kClusterwise: return "clusterwise";
        case FusionMode::kAverage: return "average";
    }
    return "none";
}

FusionReport fuse_global(const FusionInput& input) {
    check_input(input);
    const std::size_t n = input.collaborators.size();
    const std::size_t k = input.ego.cluster_count();
    const std::size_t d = input.ego.dim();

    FusionReport report;
    report.gammas = Matrix(n, 1);
    if (n == 0) {
        report.fused = input.ego;
        return report;
    }

    std::vector<double> sum = input.ego.flat();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& collab = input.collaborators[i];
        if (collab.degenerate()) continue;  // contributes gamma = 0
        const double gamma =
            std::max(dot(std::span<const double>(input.ego.flat()),
                         std::span<const double>(collab.flat())),
                     0.0);
        report.gammas(i, 0) = gamma;
        for (std::size_t j = 0; j < sum.size(); ++j) {
            sum[j] += gamma * collab.flat()[j] / static_cast<double>(n);
        }
    }
    if (!g_skip_normalize) normalize(std::span<double>(sum));
    report.fused = GlobalDescriptor::from_flat_verbatim(k, d, std::move(sum));
    return report;
}

FusionReport fuse_clusterwise(const FusionInput& input) {
    check_input(input);
    const std::size_t n = input.collaborators.size();
    const std::size_t k_count = input.ego.cluster_count();
    const std::size_t d = input.ego.dim();

    FusionReport report;
    report.gammas = Matrix(n, k_count);
    if (n == 0) {
        report.fused = input.ego;
        return report;
    }

    Matrix fused(k_count, d);
    for (std::size_t k = 0; k < k_count; ++k) {
        auto out = fused.row(k);
        const auto ego_k = input.ego.clusters().row(k);
        std::copy(ego_k.begin(), ego_k.end(), out.begin());
        for (std::size_t i = 0; i < n; ++i) {
            const auto& collab = input.collaborators[i];
            if (collab.degenerate()) continue;
            const auto collab_k = collab.clusters().row(k);
            const double gamma = std::max(dot(ego_k, collab_k), 0.0);
            report.gammas(i, k) = gamma;
            for (std::size_t j = 0; j < d; ++j) {
                out[j] += gamma * collab_k[j] / static_cast<double>(n);
            }
        }
        if (!g_skip_normalize) normalize(out);  // zero ego clusters stay zero
    }
    if (g_skip_normalize) {
        std::vector<double> raw(fused.data(), fused.data() + k_count * d);
        report.fused = GlobalDescriptor::from_flat_verbatim(k_count, d, std::move(raw));
    } else {
        report.fused = GlobalDescriptor(std::move(fused));
    }
    return report;
}

GlobalDescriptor fuse_average(const FusionInput& input) {
    check_input(input);
    const std::size_t n = input.collaborators.size();
    std::vector<double> mean = input.ego.flat();
    for (const auto& collab : input.collaborators) {
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += collab.flat()[j];
    }
    for (double& v : mean) v /= static_cast<double>(n + 1);
    normalize(std::span<double>(mean));
    return GlobalDescriptor::from_flat_verbatim(input.ego.cluster_count(), input.ego.dim(),
                                                std::move(mean));
}

GlobalDescriptor fuse(const FusionInput& input, FusionMode mode) {
    switch (mode) {
        case FusionMode::kNone: return input.ego;
        case FusionMode::kGlobal: return fuse_global(input).fused;
        case FusionMode::kClusterwise: return fuse_clusterwise(input).fused;
        case FusionMode::kAverage: return fuse_average(input);
    }
    return input.ego;
}

}  // namespace covpr
