#include "covpr/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "covpr/errors.hpp"
#include "covpr/fusion.hpp"
#include "covpr/rng.hpp"

namespace covpr {

namespace {

// Within-view spread of the canonical rows around the place latent, and the
// matching scale of distractor rows injected by occlusion.
constexpr double kViewSpread = 1.0;
const double kDistractorScale = std::sqrt(1.0 + kViewSpread * kViewSpread);

double pose_distance(const Pose& a, const Pose& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

std::size_t nearest_place(const std::vector<Pose>& poses, const Pose& p) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const double d = pose_distance(poses[i], p);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

Matrix add_noise(const Matrix& base, double scale, Rng& rng) {
    Matrix out = base;
    if (scale == 0.0) return out;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += scale * rng.normal();
    }
    return out;
}

}  // namespace

void SceneConfig::validate() const {
    if (place_count < 1 || latent_dim < 1 || rows_per_view < 1) {
        throw ShapeError("scene counts must be at least 1");
    }
    if (!(extent_m > 0.0) || !(max_collab_distance_m > 0.0)) {
        throw ShapeError("scene distances must be positive");
    }
    if (occlusion_fraction < 0.0 || occlusion_fraction > 1.0) {
        throw ShapeError("occlusion fraction must be in [0,1]");
    }
    if (noise_per_meter < 0.0 || ref_noise < 0.0 || view_noise < 0.0) {
        throw ShapeError("noise scales must be non-negative");
    }
}

World generate_world(const SceneConfig& config) {
    config.validate();
    World world;
    world.config = config;

    const std::size_t p_count = config.place_count;
    const std::size_t m = config.rows_per_view;
    const std::size_t d = config.latent_dim;

    Rng pose_rng(derive_seed(config.seed, "poses"));
    Rng latent_rng(derive_seed(config.seed, "latents"));
    Rng ref_rng(derive_seed(config.seed, "refs"));
    Rng query_rng(derive_seed(config.seed, "queries"));

    std::vector<Pose> poses(p_count);
    for (auto& p : poses) {
        p.x = pose_rng.uniform(0.0, config.extent_m);
        p.y = pose_rng.uniform(0.0, config.extent_m);
    }

    // Canonical appearance of each place: latent plus fixed within-view rows.
    std::vector<Matrix> canonical(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
        std::vector<double> latent(d);
        for (auto& v : latent) v = latent_rng.normal();
        Matrix rows(m, d);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                rows(i, j) = latent[j] + kViewSpread * latent_rng.normal();
            }
        }
        canonical[p] = std::move(rows);
    }

    world.references.reserve(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
        PlaceView view;
        view.place_id = p;
        view.pose = poses[p];
        view.set.image_id = "ref_" + std::to_string(p);
        view.set.data = add_noise(canonical[p], config.ref_noise, ref_rng);
        world.references.push_back(std::move(view));
    }

    const std::size_t occluded_rows =
        static_cast<std::size_t>(config.occlusion_fraction * static_cast<double>(m));
    world.queries.reserve(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
        QueryGroup group;
        group.ego.agent_id = 0;
        group.ego.role = Role::kEgo;
        group.ego.pose = poses[p];
        group.ego.descriptors.image_id = "query_" + std::to_string(p) + "_ego";
        group.ego.descriptors.data = add_noise(canonical[p], config.view_noise, query_rng);

        // Occlusion: a seeded subset of rows replaced by distractor noise.
        std::vector<std::size_t> rows_idx(m);
        std::iota(rows_idx.begin(), rows_idx.end(), 0);
        for (std::size_t i = 0; i < occluded_rows; ++i) {
            const std::size_t pick = i + query_rng.uniform_index(m - i);
            std::swap(rows_idx[i], rows_idx[pick]);
            auto row = group.ego.descriptors.data.row(rows_idx[i]);
            for (std::size_t j = 0; j < d; ++j) row[j] = kDistractorScale * query_rng.normal();
        }

        for (std::size_t c = 0; c < config.collaborators; ++c) {
            AgentObservation collab;
            collab.agent_id = c + 1;
            collab.role = Role::kCollaborator;
            const double angle = query_rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double radius = query_rng.uniform() * config.max_collab_distance_m;
            collab.pose.x = poses[p].x + radius * std::cos(angle);
            collab.pose.y = poses[p].y + radius * std::sin(angle);

            const std::size_t seen = nearest_place(poses, collab.pose);
            collab.descriptors.image_id =
                "query_" + std::to_string(p) + "_collab" + std::to_string(c);
            collab.descriptors.data =
                add_noise(canonical[seen], config.noise_per_meter * radius, query_rng);
            group.collaborators.push_back(std::move(collab));
        }
        world.queries.push_back(std::move(group));
    }
    return world;
}

QueryGroup admit_collaborators(AgentObservation ego,
                               const std::vector<AgentObservation>& candidates,
                               double radius_m) {
    if (!(radius_m > 0.0)) throw ShapeError("communication radius must be positive");
    QueryGroup group;
    group.ego = std::move(ego);
    for (const auto& c : candidates) {
        if (pose_distance(c.pose, group.ego.pose) <= radius_m) {  // closed ball
            group.collaborators.push_back(c);
        }
    }
    return group;
}

TrainDataset to_train_dataset(const World& world) {
    TrainDataset dataset;
    dataset.references.reserve(world.references.size());
    for (const auto& r : world.references) {
        dataset.references.push_back({r.pose, r.set});
    }
    dataset.queries.reserve(world.queries.size());
    for (const auto& q : world.queries) {
        TrainDataset::Query query;
        query.ego_pose = q.ego.pose;
        query.ego = q.ego.descriptors;
        for (const auto& c : q.collaborators) query.collaborators.push_back(c.descriptors);
        dataset.queries.push_back(std::move(query));
    }
    return dataset;
}

const EvalReport& ExperimentReport::mode(const std::string& name) const {
    for (const auto& m : modes) {
        if (m.mode == name) return m.report;
    }
    throw ShapeError("no such experiment mode: " + name);
}

double ExperimentReport::gain(const std::string& name, std::size_t k) const {
    return mode(name).recall_at.at(k) - mode("single").recall_at.at(k);
}

ExperimentReport run_experiment(const World& world, const ExperimentConfig& config) {
    std::vector<LocalDescriptorSet> ref_sets;
    ref_sets.reserve(world.references.size());
    for (const auto& r : world.references) ref_sets.push_back(r.set);
    const Codebook codebook =
        fit_codebook(ref_sets, config.clusters, derive_seed(config.seed, "fit"),
                     FitOptions{.max_iterations = 100, .softness = config.softness})
            .codebook;

    std::vector<DatabaseEntry> entries;
    entries.reserve(world.references.size());
    for (const auto& r : world.references) {
        const GlobalDescriptor g = aggregate(r.set, codebook, config.agg_mode);
        entries.push_back({r.place_id, r.pose, g.flat()});
    }
    const ReferenceDatabase db = ReferenceDatabase::build(std::move(entries));

    const std::size_t k_top = std::max<std::size_t>(config.k_top, 10);
    std::vector<EvalQuery> single, global, clusterwise, average, reorder;
    for (const auto& group : world.queries) {
        FusionInput input;
        input.ego = aggregate(group.ego.descriptors, codebook, config.agg_mode);
        std::vector<GlobalDescriptor> all{input.ego};
        for (const auto& c : group.collaborators) {
            input.collaborators.push_back(aggregate(c.descriptors, codebook, config.agg_mode));
            all.push_back(input.collaborators.back());
        }
        const Pose pose = group.ego.pose;
        single.push_back({pose, query_topk(db, input.ego, k_top)});
        global.push_back({pose, query_topk(db, fuse_global(input).fused, k_top)});
        clusterwise.push_back({pose, query_topk(db, fuse_clusterwise(input).fused, k_top)});
        average.push_back({pose, query_topk(db, fuse_average(input), k_top)});
        reorder.push_back({pose, query_reordering(db, all, k_top)});
    }

    ExperimentReport report;
    report.modes.push_back({"single", evaluate(db, single, config.threshold_m)});
    report.modes.push_back({"global", evaluate(db, global, config.threshold_m)});
    report.modes.push_back({"clusterwise", evaluate(db, clusterwise, config.threshold_m)});
    report.modes.push_back({"average", evaluate(db, average, config.threshold_m)});
    report.modes.push_back({"reorder", evaluate(db, reorder, config.threshold_m)});
    return report;
}

}  // namespace covpr
