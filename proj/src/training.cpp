#include "covpr/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "covpr/errors.hpp"
#include "covpr/rng.hpp"

namespace covpr {

double triplet_loss(double dq_p, std::span<const double> dq_n, double margin) {
    if (!(margin > 0.0)) throw ShapeError("margin must be positive");
    if (dq_n.empty()) throw ShapeError("triplet loss needs at least one negative");
    double loss = 0.0;
    for (double dn : dq_n) {
        loss += std::max(0.0, dq_p + margin - dn);
    }
    return loss;
}

namespace {

// Forward intermediates of one soft aggregation, kept for the backward pass.
struct AggTape {
    Matrix x;                          // M x d input rows
    Matrix assign;                     // M x K soft weights
    Matrix dist2;                      // M x K squared distances
    std::vector<double> cluster_norm;  // K, norms of the residual sums
    Matrix intra;                      // K x d intra-normalized clusters (U)
    double global_norm = 0.0;          // norm of vec(U)
    std::vector<double> flat;          // K*d globally normalized view (y)
    bool degenerate = false;
};

AggTape agg_forward(const Matrix& x, const Codebook& cb) {
    const std::size_t m = x.rows();
    const std::size_t kc = cb.cluster_count();
    const std::size_t d = cb.dim();
    const double alpha = cb.softness;

    AggTape t;
    t.x = x;
    t.assign = Matrix(m, kc);
    t.dist2 = Matrix(m, kc);

    Matrix residual(kc, d);
    for (std::size_t i = 0; i < m; ++i) {
        const auto xi = x.row(i);
        auto a = t.assign.row(i);
        auto d2 = t.dist2.row(i);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < kc; ++k) {
            d2[k] = squared_distance(xi, cb.centroids.row(k));
            a[k] = -alpha * d2[k];
            max_logit = std::max(max_logit, a[k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < kc; ++k) {
            a[k] = std::exp(a[k] - max_logit);
            sum += a[k];
        }
        for (std::size_t k = 0; k < kc; ++k) {
            a[k] /= sum;
            auto v = residual.row(k);
            const auto c = cb.centroids.row(k);
            for (std::size_t j = 0; j < d; ++j) v[j] += a[k] * (xi[j] - c[j]);
        }
    }

    t.cluster_norm.resize(kc);
    t.intra = residual;
    for (std::size_t k = 0; k < kc; ++k) {
        t.cluster_norm[k] = normalize(t.intra.row(k));
    }
    t.flat.assign(t.intra.data(), t.intra.data() + kc * d);
    t.global_norm = normalize(std::span<double>(t.flat));
    t.degenerate = (t.global_norm == 0.0);
    return t;
}

// d(u/||u||) pullback: out = (grad - unit * (unit . grad)) / ||u||.
void normalize_backward(std::span<const double> unit, double n, std::span<const double> grad,
                        std::span<double> out) {
    const double proj = dot(unit, grad);
    for (std::size_t j = 0; j < grad.size(); ++j) {
        out[j] = (grad[j] - unit[j] * proj) / n;
    }
}

// Backward from gradients w.r.t. the intra-normalized clusters.
void agg_backward_from_intra(const AggTape& t, const Codebook& cb, const Matrix& d_intra,
                             Gradients& g) {
    const std::size_t m = t.x.rows();
    const std::size_t kc = cb.cluster_count();
    const std::size_t d = cb.dim();
    const double alpha = cb.softness;

    // Through intra-normalization into the residual sums V.
    Matrix d_residual(kc, d);
    for (std::size_t k = 0; k < kc; ++k) {
        if (t.cluster_norm[k] > 0.0) {
            normalize_backward(t.intra.row(k), t.cluster_norm[k], d_intra.row(k),
                               d_residual.row(k));
        }
    }

    // Direct centroid term of V_k = sum_i a_ik (x_i - c_k).
    std::vector<double> assign_sum(kc, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kc; ++k) assign_sum[k] += t.assign(i, k);
    }
    for (std::size_t k = 0; k < kc; ++k) {
        auto gc = g.centroids.row(k);
        const auto dv = d_residual.row(k);
        for (std::size_t j = 0; j < d; ++j) gc[j] -= assign_sum[k] * dv[j];
    }

    // Through the softmax and the squared distances.
    std::vector<double> d_assign(kc);
    std::vector<double> d_logit(kc);
    for (std::size_t i = 0; i < m; ++i) {
        const auto xi = t.x.row(i);
        const auto a = t.assign.row(i);
        for (std::size_t k = 0; k < kc; ++k) {
            const auto dv = d_residual.row(k);
            const auto c = cb.centroids.row(k);
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += dv[j] * (xi[j] - c[j]);
            d_assign[k] = s;
        }
        double mean = 0.0;
        for (std::size_t k = 0; k < kc; ++k) mean += a[k] * d_assign[k];
        for (std::size_t k = 0; k < kc; ++k) d_logit[k] = a[k] * (d_assign[k] - mean);

        for (std::size_t k = 0; k < kc; ++k) {
            // logit = -alpha * dist2
            const double d_dist2 = -alpha * d_logit[k];
            g.softness -= d_logit[k] * t.dist2(i, k);
            auto gc = g.centroids.row(k);
            const auto c = cb.centroids.row(k);
            for (std::size_t j = 0; j < d; ++j) {
                gc[j] += d_dist2 * 2.0 * (c[j] - xi[j]);
            }
        }
    }
}

// Backward from gradients w.r.t. the globally normalized flat view.
void agg_backward_from_flat(const AggTape& t, const Codebook& cb,
                            std::span<const double> d_flat, Gradients& g) {
    const std::size_t kc = cb.cluster_count();
    const std::size_t d = cb.dim();
    Matrix d_intra(kc, d);
    normalize_backward(t.flat, t.global_norm, d_flat,
                       std::span<double>(d_intra.data(), kc * d));
    agg_backward_from_intra(t, cb, d_intra, g);
}

// Fused query forward state for one item.
struct FusedTape {
    std::vector<double> flat;        // fused query descriptor q
    std::vector<double> pre_norm;    // input of the final sigma (global/average)
    double pre_norm_len = 0.0;
    Matrix fused_clusters;           // clusterwise: W rows
    Matrix cluster_pre_len;          // clusterwise: ||F_k|| per cluster (1 x K)
    double concat_norm = 0.0;        // clusterwise: ||vec(W)||
    Matrix gammas_pre;               // unclamped similarity per collaborator (x K if clusterwise)
    bool degenerate = false;
};

FusedTape fuse_forward(const AggTape& ego, const std::vector<AggTape>& collabs,
                       FusionMode mode) {
    FusedTape f;
    const std::size_t n = collabs.size();
    if (mode == FusionMode::kNone || n == 0) {
        f.flat = ego.flat;
        f.degenerate = ego.degenerate;
        return f;
    }

    if (mode == FusionMode::kGlobal) {
        f.gammas_pre = Matrix(n, 1);
        f.pre_norm = ego.flat;
        for (std::size_t i = 0; i < n; ++i) {
            const double pre = dot(std::span<const double>(ego.flat),
                                   std::span<const double>(collabs[i].flat));
            f.gammas_pre(i, 0) = pre;
            const double gamma = std::max(pre, 0.0);
            for (std::size_t j = 0; j < f.pre_norm.size(); ++j) {
                f.pre_norm[j] += gamma * collabs[i].flat[j] / static_cast<double>(n);
            }
        }
        f.flat = f.pre_norm;
        f.pre_norm_len = normalize(std::span<double>(f.flat));
        f.degenerate = (f.pre_norm_len == 0.0);
        return f;
    }

    if (mode == FusionMode::kClusterwise) {
        const std::size_t kc = ego.intra.rows();
        const std::size_t d = ego.intra.cols();
        f.gammas_pre = Matrix(n, kc);
        f.fused_clusters = Matrix(kc, d);
        f.cluster_pre_len = Matrix(1, kc);
        for (std::size_t k = 0; k < kc; ++k) {
            auto out = f.fused_clusters.row(k);
            const auto ego_k = ego.intra.row(k);
            std::copy(ego_k.begin(), ego_k.end(), out.begin());
            for (std::size_t i = 0; i < n; ++i) {
                const auto collab_k = collabs[i].intra.row(k);
                const double pre = dot(ego_k, collab_k);
                f.gammas_pre(i, k) = pre;
                const double gamma = std::max(pre, 0.0);
                for (std::size_t j = 0; j < d; ++j) {
                    out[j] += gamma * collab_k[j] / static_cast<double>(n);
                }
            }
            f.cluster_pre_len(0, k) = normalize(out);
        }
        f.flat.assign(f.fused_clusters.data(), f.fused_clusters.data() + kc * d);
        f.concat_norm = normalize(std::span<double>(f.flat));
        f.degenerate = (f.concat_norm == 0.0);
        return f;
    }

    // Average pooling.
    f.pre_norm = ego.flat;
    for (const auto& c : collabs) {
        for (std::size_t j = 0; j < f.pre_norm.size(); ++j) f.pre_norm[j] += c.flat[j];
    }
    for (double& v : f.pre_norm) v /= static_cast<double>(n + 1);
    f.flat = f.pre_norm;
    f.pre_norm_len = normalize(std::span<double>(f.flat));
    f.degenerate = (f.pre_norm_len == 0.0);
    return f;
}

// Pulls d_q back onto the ego and collaborator aggregation tapes.
void fuse_backward(const FusedTape& f, const AggTape& ego, const std::vector<AggTape>& collabs,
                   FusionMode mode, std::span<const double> d_q, const Codebook& cb,
                   Gradients& g) {
    const std::size_t n = collabs.size();
    const std::size_t len = d_q.size();

    if (mode == FusionMode::kNone || n == 0) {
        agg_backward_from_flat(ego, cb, d_q, g);
        return;
    }

    if (mode == FusionMode::kGlobal || mode == FusionMode::kAverage) {
        std::vector<double> d_pre(len);
        normalize_backward(f.flat, f.pre_norm_len, d_q, d_pre);

        if (mode == FusionMode::kAverage) {
            std::vector<double> d_flat(len);
            for (std::size_t j = 0; j < len; ++j) d_flat[j] = d_pre[j] / static_cast<double>(n + 1);
            agg_backward_from_flat(ego, cb, d_flat, g);
            for (const auto& collab : collabs) {
                agg_backward_from_flat(collab, cb, d_flat, g);
            }
            return;
        }

        std::vector<double> d_ego = d_pre;
        std::vector<double> d_collab(len);
        for (std::size_t i = 0; i < n; ++i) {
            const double pre = f.gammas_pre(i, 0);
            const double gamma = std::max(pre, 0.0);
            const double t = dot(std::span<const double>(collabs[i].flat),
                                 std::span<const double>(d_pre)) /
                             static_cast<double>(n);
            for (std::size_t j = 0; j < len; ++j) {
                d_collab[j] = gamma * d_pre[j] / static_cast<double>(n);
            }
            if (pre > 0.0) {  // gamma path; subgradient 0 at the clamp boundary
                for (std::size_t j = 0; j < len; ++j) {
                    d_ego[j] += t * collabs[i].flat[j];
                    d_collab[j] += t * ego.flat[j];
                }
            }
            agg_backward_from_flat(collabs[i], cb, d_collab, g);
        }
        agg_backward_from_flat(ego, cb, d_ego, g);
        return;
    }

    // Clusterwise.
    const std::size_t kc = ego.intra.rows();
    const std::size_t d = ego.intra.cols();
    std::vector<double> d_w(len);
    normalize_backward(f.flat, f.concat_norm, d_q, d_w);

    Matrix d_ego_intra(kc, d);
    std::vector<Matrix> d_collab_intra(n, Matrix(kc, d));
    std::vector<double> d_f(d);
    for (std::size_t k = 0; k < kc; ++k) {
        const double pre_len = f.cluster_pre_len(0, k);
        if (pre_len == 0.0) continue;
        std::span<const double> d_w_k(d_w.data() + k * d, d);
        normalize_backward(f.fused_clusters.row(k), pre_len, d_w_k, d_f);

        auto d_ego_k = d_ego_intra.row(k);
        const auto ego_k = ego.intra.row(k);
        for (std::size_t j = 0; j < d; ++j) d_ego_k[j] += d_f[j];
        for (std::size_t i = 0; i < n; ++i) {
            const double pre = f.gammas_pre(i, k);
            const double gamma = std::max(pre, 0.0);
            const auto collab_k = collabs[i].intra.row(k);
            auto d_collab_k = d_collab_intra[i].row(k);
            const double t = dot(collab_k, std::span<const double>(d_f)) / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j) {
                d_collab_k[j] += gamma * d_f[j] / static_cast<double>(n);
            }
            if (pre > 0.0) {
                for (std::size_t j = 0; j < d; ++j) {
                    d_ego_k[j] += t * collab_k[j];
                    d_collab_k[j] += t * ego_k[j];
                }
            }
        }
    }
    agg_backward_from_intra(ego, cb, d_ego_intra, g);
    for (std::size_t i = 0; i < n; ++i) {
        agg_backward_from_intra(collabs[i], cb, d_collab_intra[i], g);
    }
}

struct ItemForward {
    AggTape ego;
    std::vector<AggTape> collabs;
    std::vector<AggTape> positives;
    std::vector<AggTape> negatives;
    FusedTape fused;
    bool degenerate = false;
};

ItemForward item_forward(const TripletItem& item, const Codebook& cb, FusionMode mode) {
    ItemForward fwd;
    fwd.ego = agg_forward(item.ego.data, cb);
    fwd.degenerate = fwd.ego.degenerate;
    for (const auto& c : item.collaborators) {
        fwd.collabs.push_back(agg_forward(c.data, cb));
        fwd.degenerate = fwd.degenerate || fwd.collabs.back().degenerate;
    }
    for (const auto& p : item.positives) {
        fwd.positives.push_back(agg_forward(p.data, cb));
        fwd.degenerate = fwd.degenerate || fwd.positives.back().degenerate;
    }
    for (const auto& ng : item.negatives) {
        fwd.negatives.push_back(agg_forward(ng.data, cb));
        fwd.degenerate = fwd.degenerate || fwd.negatives.back().degenerate;
    }
    if (!fwd.degenerate) {
        fwd.fused = fuse_forward(fwd.ego, fwd.collabs, mode);
        fwd.degenerate = fwd.fused.degenerate;
    }
    return fwd;
}

}  // namespace

ForwardBackward forward_backward(const TripletBatch& batch, const Codebook& codebook,
                                 FusionMode mode, double margin) {
    codebook.validate();
    if (!(margin > 0.0)) throw ShapeError("margin must be positive");

    ForwardBackward out;
    out.grads.centroids = Matrix(codebook.cluster_count(), codebook.dim());

    for (const auto& item : batch.items) {
        if (item.positives.empty() || item.negatives.empty()) {
            throw ShapeError("batch item needs at least one positive and one negative");
        }
        ItemForward fwd = item_forward(item, codebook, mode);
        if (fwd.degenerate) {
            ++out.items_skipped;
            continue;
        }
        ++out.items_used;

        const std::span<const double> q(fwd.fused.flat);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < fwd.positives.size(); ++j) {
            const double dj = squared_distance(q, fwd.positives[j].flat);
            if (dj < best_d) {
                best_d = dj;
                best = j;
            }
        }

        std::vector<double> neg_d(fwd.negatives.size());
        for (std::size_t j = 0; j < fwd.negatives.size(); ++j) {
            neg_d[j] = squared_distance(q, fwd.negatives[j].flat);
        }
        out.loss += triplet_loss(best_d, neg_d, margin);

        // Hinge backward: active terms only, subgradient 0 on the boundary.
        const std::size_t len = q.size();
        std::vector<double> d_q(len, 0.0);
        std::vector<double> d_pos(len, 0.0);
        std::size_t active = 0;
        for (std::size_t j = 0; j < fwd.negatives.size(); ++j) {
            if (best_d + margin - neg_d[j] <= 0.0) continue;
            ++active;
            const auto& nf = fwd.negatives[j].flat;
            std::vector<double> d_neg(len);
            for (std::size_t v = 0; v < len; ++v) {
                d_q[v] -= 2.0 * (q[v] - nf[v]);
                d_neg[v] = 2.0 * (q[v] - nf[v]);
            }
            agg_backward_from_flat(fwd.negatives[j], codebook, d_neg, out.grads);
        }
        if (active == 0) continue;

        const auto& pf = fwd.positives[best].flat;
        for (std::size_t v = 0; v < len; ++v) {
            const double r = 2.0 * (q[v] - pf[v]);
            d_q[v] += static_cast<double>(active) * r;
            d_pos[v] = -static_cast<double>(active) * r;
        }
        agg_backward_from_flat(fwd.positives[best], codebook, d_pos, out.grads);
        fuse_backward(fwd.fused, fwd.ego, fwd.collabs, mode, d_q, codebook, out.grads);
    }
    return out;
}

namespace {

LocalDescriptorSet random_set(Rng& rng, std::size_t rows, std::size_t dim,
                              const std::string& id) {
    LocalDescriptorSet s;
    s.image_id = id;
    s.data = Matrix(rows, dim);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < dim; ++j) s.data(i, j) = rng.normal();
    }
    return s;
}

// Rejects draws near hinge, clamp or argmin boundaries, and draws producing
// ill-conditioned cluster norms where the finite-difference oracle itself is
// unreliable.
bool near_boundary(const TripletItem& item, const Codebook& cb, FusionMode mode,
                   double margin) {
    ItemForward fwd = item_forward(item, cb, mode);
    if (fwd.degenerate) return true;

    std::vector<const AggTape*> tapes{&fwd.ego};
    for (const auto& t : fwd.collabs) tapes.push_back(&t);
    for (const auto& t : fwd.positives) tapes.push_back(&t);
    for (const auto& t : fwd.negatives) tapes.push_back(&t);
    for (const AggTape* t : tapes) {
        for (double nrm : t->cluster_norm) {
            if (nrm < 1e-3) return true;
        }
    }

    const Matrix& pre = fwd.fused.gammas_pre;
    for (std::size_t i = 0; i < pre.rows(); ++i) {
        for (std::size_t k = 0; k < pre.cols(); ++k) {
            if (std::abs(pre(i, k)) < 1e-6) return true;
        }
    }

    const std::span<const double> q(fwd.fused.flat);
    std::vector<double> pos_d;
    for (const auto& p : fwd.positives) pos_d.push_back(squared_distance(q, p.flat));
    std::vector<double> sorted = pos_d;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() > 1 && sorted[1] - sorted[0] < 1e-6) return true;

    const double best = sorted.front();
    for (const auto& ng : fwd.negatives) {
        const double slack = best + margin - squared_distance(q, ng.flat);
        if (std::abs(slack) < 1e-6) return true;
    }
    return false;
}

}  // namespace

GradCheckReport grad_check(const GradCheckConfig& config) {
    GradCheckReport report;
    report.step = config.epsilon;

    TripletItem item;
    Codebook cb;
    std::uint64_t draw_seed = config.seed;
    for (;; ++draw_seed) {
        Rng rng(derive_seed(draw_seed, "gradcheck"));
        cb.centroids = Matrix(config.clusters, config.dim);
        for (std::size_t k = 0; k < config.clusters; ++k) {
            for (std::size_t j = 0; j < config.dim; ++j) cb.centroids(k, j) = rng.normal();
        }
        cb.softness = rng.uniform(0.5, 3.0);

        item = TripletItem{};
        item.ego = random_set(rng, config.rows, config.dim, "ego");
        for (std::size_t i = 0; i < config.collaborators; ++i) {
            item.collaborators.push_back(random_set(rng, config.rows, config.dim, "collab"));
        }
        item.positives.push_back(random_set(rng, config.rows, config.dim, "pos0"));
        item.positives.push_back(random_set(rng, config.rows, config.dim, "pos1"));
        item.negatives.push_back(random_set(rng, config.rows, config.dim, "neg0"));
        item.negatives.push_back(random_set(rng, config.rows, config.dim, "neg1"));

        if (!near_boundary(item, cb, config.mode, config.margin)) break;
    }
    report.resampled = draw_seed - config.seed;

    TripletBatch batch;
    batch.items.push_back(item);
    const ForwardBackward analytic = forward_backward(batch, cb, config.mode, config.margin);

    const std::size_t n_params = config.clusters * config.dim + 1;
    auto loss_at = [&](const Codebook& c) {
        return forward_backward(batch, c, config.mode, config.margin).loss;
    };

    // Denominator floor keeps the ratio meaningful for near-zero gradients,
    // where the difference is pure finite-difference noise.
    constexpr double kRelFloor = 1e-4;
    for (std::size_t p = 0; p < n_params; ++p) {
        Codebook plus = cb;
        Codebook minus = cb;
        double analytic_g = 0.0;
        if (p < config.clusters * config.dim) {
            plus.centroids.data()[p] += config.epsilon;
            minus.centroids.data()[p] -= config.epsilon;
            analytic_g = analytic.grads.centroids.data()[p];
        } else {
            plus.softness += config.epsilon;
            minus.softness -= config.epsilon;
            analytic_g = analytic.grads.softness;
        }
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * config.epsilon);
        const double denom = std::max({std::abs(analytic_g), std::abs(fd), kRelFloor});
        const double rel = std::abs(analytic_g - fd) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_parameter = p;
        }
    }
    return report;
}

TrainResult train(const TrainDataset& dataset, const TrainConfig& config) {
    if (dataset.references.empty() || dataset.queries.empty()) {
        throw ShapeError("training dataset is empty");
    }

    Codebook codebook;
    if (config.init) {
        codebook = *config.init;
        codebook.validate();
    } else {
        std::vector<LocalDescriptorSet> sets;
        sets.reserve(dataset.references.size());
        for (const auto& r : dataset.references) sets.push_back(r.set);
        FitOptions opts;
        opts.softness = config.fit_softness;
        codebook = fit_codebook(sets, config.fit_clusters, derive_seed(config.seed, "fit"), opts)
                       .codebook;
    }

    // Positives by pose radius; negatives drawn once, uniformly, per query.
    struct QueryPlan {
        std::size_t query = 0;
        std::vector<std::size_t> positives;
        std::vector<std::size_t> negatives;
    };
    std::vector<std::size_t> beyond;
    std::vector<QueryPlan> plans;
    Rng neg_rng(derive_seed(config.seed, "negatives"));
    for (std::size_t qi = 0; qi < dataset.queries.size(); ++qi) {
        const auto& q = dataset.queries[qi];
        QueryPlan plan;
        plan.query = qi;
        beyond.clear();
        for (std::size_t ri = 0; ri < dataset.references.size(); ++ri) {
            const double dx = dataset.references[ri].pose.x - q.ego_pose.x;
            const double dy = dataset.references[ri].pose.y - q.ego_pose.y;
            const double dist = std::sqrt(dx * dx + dy * dy);
            if (dist <= config.positive_radius_m) {
                plan.positives.push_back(ri);
            } else {
                beyond.push_back(ri);
            }
        }
        if (plan.positives.empty() || beyond.empty()) continue;
        for (std::size_t s = 0; s < config.negatives_per_query; ++s) {
            plan.negatives.push_back(beyond[neg_rng.uniform_index(beyond.size())]);
        }
        plans.push_back(std::move(plan));
    }
    if (plans.empty()) throw ShapeError("no usable training queries (positives/negatives missing)");

    TripletBatch batch;
    for (const auto& plan : plans) {
        const auto& q = dataset.queries[plan.query];
        TripletItem item;
        item.ego = q.ego;
        item.collaborators = q.collaborators;
        for (std::size_t ri : plan.positives) item.positives.push_back(dataset.references[ri].set);
        for (std::size_t ri : plan.negatives) item.negatives.push_back(dataset.references[ri].set);
        batch.items.push_back(std::move(item));
    }

    TrainResult result;
    constexpr double kSoftnessFloor = 1e-3;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr =
            config.learning_rate *
            std::pow(0.5, static_cast<double>(config.halve_every ? epoch / config.halve_every : 0));
        const ForwardBackward fb = forward_backward(batch, codebook, config.mode, config.margin);
        if (!std::isfinite(fb.loss)) {
            throw ShapeError("non-finite loss at epoch " + std::to_string(epoch));
        }
        result.skipped_items += fb.items_skipped;
        const double mean_loss =
            fb.items_used ? fb.loss / static_cast<double>(fb.items_used) : 0.0;
        result.trace.push_back({epoch, mean_loss, lr});

        for (std::size_t p = 0; p < codebook.centroids.rows() * codebook.centroids.cols(); ++p) {
            codebook.centroids.data()[p] -= lr * fb.grads.centroids.data()[p];
        }
        codebook.softness = std::max(kSoftnessFloor, codebook.softness - lr * fb.grads.softness);
    }

    result.codebook = std::move(codebook);
    return result;
}

}  // namespace covpr
