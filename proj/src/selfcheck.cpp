#include "covpr/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "covpr/aggregate.hpp"
#include "covpr/fusion.hpp"
#include "covpr/io.hpp"
#include "covpr/retrieval.hpp"
#include "covpr/rng.hpp"
#include "covpr/training.hpp"

namespace covpr {

namespace {

GlobalDescriptor random_descriptor(Rng& rng, std::size_t k, std::size_t d) {
    Matrix clusters(k, d);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) clusters(i, j) = rng.normal();
        normalize(clusters.row(i));  // valid descriptors carry intra-normalized clusters
    }
    return GlobalDescriptor(std::move(clusters));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

struct SkipNormalizeGuard {
    explicit SkipNormalizeGuard(bool enable) { set_fusion_debug_skip_normalize(enable); }
    ~SkipNormalizeGuard() { set_fusion_debug_skip_normalize(false); }
};

CheckResult check_consistency(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(5);
        const std::size_t d = 2 + rng.uniform_index(7);
        const std::size_t n = 1 + rng.uniform_index(3);
        const GlobalDescriptor y = random_descriptor(rng, k, d);
        FusionInput input{y, std::vector<GlobalDescriptor>(n, y)};
        worst = std::max(worst, max_abs_diff(fuse_global(input).fused.flat(), y.flat()));
        worst = std::max(worst, max_abs_diff(fuse_clusterwise(input).fused.flat(), y.flat()));
    }
    return {"fusion-consistency", worst < 1e-9, "max deviation " + format_double(worst)};
}

CheckResult check_permutation(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(4);
        const std::size_t d = 2 + rng.uniform_index(7);
        const std::size_t n = 2 + rng.uniform_index(3);
        FusionInput input;
        input.ego = random_descriptor(rng, k, d);
        for (std::size_t i = 0; i < n; ++i) {
            input.collaborators.push_back(random_descriptor(rng, k, d));
        }
        FusionInput permuted = input;
        std::reverse(permuted.collaborators.begin(), permuted.collaborators.end());
        worst = std::max(worst, max_abs_diff(fuse_global(input).fused.flat(),
                                             fuse_global(permuted).fused.flat()));
        worst = std::max(worst, max_abs_diff(fuse_clusterwise(input).fused.flat(),
                                             fuse_clusterwise(permuted).fused.flat()));
    }
    return {"fusion-permutation", worst < 1e-12, "max deviation " + format_double(worst)};
}

CheckResult check_clamp(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(4);
        const std::size_t d = 2 + rng.uniform_index(7);
        const GlobalDescriptor ego = random_descriptor(rng, k, d);
        // Anti-correlated collaborator: flat dot is exactly -1.
        Matrix neg = ego.clusters();
        for (std::size_t i = 0; i < neg.rows(); ++i) {
            for (std::size_t j = 0; j < neg.cols(); ++j) neg(i, j) = -neg(i, j);
        }
        FusionInput input{ego, {GlobalDescriptor(std::move(neg))}};
        worst = std::max(worst, max_abs_diff(fuse_global(input).fused.flat(), ego.flat()));
    }
    return {"fusion-clamp", worst < 1e-12, "max deviation " + format_double(worst)};
}

CheckResult check_redundancy(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(4);
        const std::size_t d = 2 + rng.uniform_index(7);
        const std::size_t n = 2 + rng.uniform_index(4);
        const GlobalDescriptor ego = random_descriptor(rng, k, d);
        const GlobalDescriptor other = random_descriptor(rng, k, d);
        FusionInput repeated{ego, std::vector<GlobalDescriptor>(n, other)};
        FusionInput once{ego, {other}};
        worst = std::max(worst, max_abs_diff(fuse_global(repeated).fused.flat(),
                                             fuse_global(once).fused.flat()));
    }
    return {"fusion-redundancy", worst < 1e-12, "max deviation " + format_double(worst)};
}

CheckResult check_assignment_sum(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(7);
        const std::size_t d = 1 + rng.uniform_index(8);
        Codebook cb;
        cb.centroids = Matrix(k, d);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < d; ++j) cb.centroids(i, j) = rng.normal();
        }
        cb.softness = rng.uniform(0.1, 100.0);
        std::vector<double> x(d);
        for (auto& v : x) v = rng.normal();
        const auto w = soft_assign(x, cb);
        const double sum = std::accumulate(w.begin(), w.end(), 0.0);
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return {"assignment-sum", worst < 1e-12, "max |sum-1| " + format_double(worst)};
}

CheckResult check_soft_hard_limit(Rng& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(4);
        const std::size_t d = 2 + rng.uniform_index(5);
        const std::size_t m = 4 + rng.uniform_index(12);
        Codebook cb;
        cb.centroids = Matrix(k, d);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < d; ++j) cb.centroids(i, j) = rng.normal();
        }
        cb.softness = 1e4;
        LocalDescriptorSet set;
        set.image_id = "limit";
        set.data = Matrix(m, d);
        for (std::size_t i = 0; i < m; ++i) {
            // Resample rows until the squared-distance margin between the two
            // nearest centroids is at least 0.1.
            for (;;) {
                for (std::size_t j = 0; j < d; ++j) set.data(i, j) = rng.normal();
                std::vector<double> dist(k);
                for (std::size_t c = 0; c < k; ++c) {
                    dist[c] = squared_distance(set.data.row(i), cb.centroids.row(c));
                }
                std::sort(dist.begin(), dist.end());
                if (dist[1] - dist[0] >= 0.1) break;
            }
        }
        const auto soft = aggregate(set, cb, AssignMode::kSoft);
        const auto hard = aggregate(set, cb, AssignMode::kHard);
        worst = std::max(worst, max_abs_diff(soft.flat(), hard.flat()));
    }
    return {"soft-hard-limit", worst < 1e-6, "max deviation " + format_double(worst)};
}

CheckResult check_retrieval_oracle(Rng& rng) {
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(40);
        const std::size_t d = 2 + rng.uniform_index(15);
        std::vector<DatabaseEntry> entries(n);
        for (std::size_t i = 0; i < n; ++i) {
            entries[i].id = i;
            entries[i].pose = {rng.uniform(), rng.uniform()};
            entries[i].descriptor.resize(d);
            for (auto& v : entries[i].descriptor) v = rng.normal();
            normalize(std::span<double>(entries[i].descriptor));
        }
        // A few exact duplicates exercise the insertion-order tie-break.
        if (n > 2 && trial % 3 == 0) {
            entries[n - 1].descriptor = entries[0].descriptor;
        }
        std::vector<double> q(d);
        for (auto& v : q) v = rng.normal();
        normalize(std::span<double>(q));

        const std::size_t k_top = 1 + rng.uniform_index(n + 2);
        // Independent ranking: stable argsort of squared distances.
        std::vector<double> dist(n);
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = squared_distance(q, entries[i].descriptor);
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

        const auto db = ReferenceDatabase::build(std::move(entries));
        const auto result = query_topk(db, std::span<const double>(q), k_top);
        const std::size_t expect = std::min(k_top, n);
        if (result.ranked.size() != expect) {
            ++mismatches;
            continue;
        }
        for (std::size_t r = 0; r < expect; ++r) {
            if (result.ranked[r].id != order[r]) {
                ++mismatches;
                break;
            }
        }
    }
    return {"retrieval-oracle", mismatches == 0,
            std::to_string(mismatches) + " mismatched rankings"};
}

CheckResult check_gradients() {
    double worst = 0.0;
    const FusionMode modes[] = {FusionMode::kGlobal, FusionMode::kClusterwise};
    for (FusionMode mode : modes) {
        for (std::uint64_t seed : {7ull, 11ull, 23ull}) {
            GradCheckConfig cfg;
            cfg.clusters = 4;
            cfg.dim = 8;
            cfg.rows = 16;
            cfg.collaborators = 1;
            cfg.mode = mode;
            cfg.seed = seed;
            worst = std::max(worst, grad_check(cfg).max_rel_error);
        }
    }
    return {"gradient-check", worst < 1e-5, "max relative error " + format_double(worst)};
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options) {
    SkipNormalizeGuard guard(options.corrupt_sigma);
    std::vector<CheckResult> results;
    {
        Rng rng(derive_seed(options.seed, "consistency"));
        results.push_back(check_consistency(rng));
    }
    {
        Rng rng(derive_seed(options.seed, "permutation"));
        results.push_back(check_permutation(rng));
    }
    {
        Rng rng(derive_seed(options.seed, "clamp"));
        results.push_back(check_clamp(rng));
    }
    {
        Rng rng(derive_seed(options.seed, "redundancy"));
        results.push_back(check_redundancy(rng));
    }
    {
        Rng rng(derive_seed(options.seed, "assignment"));
        results.push_back(check_assignment_sum(rng));
    }
    {
        Rng rng(derive_seed(options.seed, "softhard"));
        results.push_back(check_soft_hard_limit(rng));
    }
    {
        Rng rng(derive_seed(options.seed, "oracle"));
        results.push_back(check_retrieval_oracle(rng));
    }
    results.push_back(check_gradients());
    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.passed; });
}

}  // namespace covpr
