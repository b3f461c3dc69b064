#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covpr/aggregate.hpp"
#include "covpr/retrieval.hpp"
#include "covpr/training.hpp"

namespace covpr {

struct SceneConfig {
    std::size_t place_count = 200;
    double extent_m = 200.0;            // places drawn uniformly in [0, extent]^2
    std::size_t latent_dim = 16;        // local descriptor dimension
    std::size_t rows_per_view = 32;     // M local descriptors per view
    std::size_t collaborators = 1;      // N
    double max_collab_distance_m = 5.0;
    double noise_per_meter = 0.05;      // collaborator noise scale per meter of offset
    double occlusion_fraction = 0.0;    // ego rows replaced by distractor noise
    double ref_noise = 0.02;
    double view_noise = 0.05;           // ego viewpoint noise
    std::uint64_t seed = 1;

    void validate() const;
};

enum class Role { kEgo, kCollaborator };

struct AgentObservation {
    std::uint64_t agent_id = 0;
    Role role = Role::kEgo;
    Pose pose;
    LocalDescriptorSet descriptors;
};

struct QueryGroup {
    AgentObservation ego;
    std::vector<AgentObservation> collaborators;
};

struct PlaceView {
    std::uint64_t place_id = 0;
    Pose pose;
    LocalDescriptorSet set;
};

struct World {
    SceneConfig config;
    std::vector<PlaceView> references;
    std::vector<QueryGroup> queries;  // one group per place
};

// Seeded synthetic multi-agent world. Each place gets a latent appearance;
// the reference view adds small noise, the ego query adds viewpoint noise
// plus occlusion (a seeded fraction of rows replaced by distractor noise),
// and each collaborator observes the place nearest its offset pose with
// noise that grows linearly with the offset. Bitwise deterministic per seed.
World generate_world(const SceneConfig& config);

// Filters candidates to those within the closed ball of `radius_m` around
// the ego pose.
QueryGroup admit_collaborators(AgentObservation ego,
                               const std::vector<AgentObservation>& candidates,
                               double radius_m);

TrainDataset to_train_dataset(const World& world);

struct ExperimentConfig {
    std::size_t clusters = 8;
    double softness = 30.0;
    AssignMode agg_mode = AssignMode::kSoft;
    std::size_t k_top = 10;
    double threshold_m = 10.0;
    std::uint64_t seed = 1;  // codebook fitting stream
};

struct ModeEval {
    std::string mode;  // single | global | clusterwise | average | reorder
    EvalReport report;
};

struct ExperimentReport {
    std::vector<ModeEval> modes;

    const EvalReport& mode(const std::string& name) const;
    // recall@k difference against the single-agent baseline
    double gain(const std::string& name, std::size_t k) const;
};

// Runs single-agent, similarity-regularized (global and cluster-wise),
// average-pooling and re-ordering retrieval over the same world and reports
// recall/error per mode.
ExperimentReport run_experiment(const World& world, const ExperimentConfig& config);

}  // namespace covpr
