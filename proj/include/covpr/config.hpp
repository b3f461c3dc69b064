#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "covpr/aggregate.hpp"
#include "covpr/fusion.hpp"
#include "covpr/io.hpp"
#include "covpr/simworld.hpp"

namespace covpr {

// Effective run configuration: structured text config file plus command-line
// overrides. Unknown keys are rejected.
struct RunConfig {
    FusionMode mode = FusionMode::kGlobal;
    AssignMode agg_mode = AssignMode::kSoft;
    std::size_t clusters = 32;
    double softness = 30.0;
    std::size_t k_top = 10;
    double threshold_m = 20.0;
    double radius_m = 5.0;
    std::uint64_t seed = 1;

    // Synthetic scene (desk-scale stand-in for the recorded datasets).
    std::size_t places = 200;
    double extent_m = 400.0;
    std::size_t latent_dim = 16;
    std::size_t rows_per_view = 32;
    std::size_t collaborators = 1;
    double occlusion = 0.5;
    double noise_per_meter = 0.05;
    double ref_noise = 0.02;
    double view_noise = 0.05;

    // Training.
    std::size_t epochs = 10;
    double learning_rate = 0.05;
    double margin = 0.1;
    std::size_t negatives = 4;
    double positive_radius_m = 0.0;  // 0 = use threshold_m
    std::size_t train_clusters = 4;
    double train_softness = 8.0;

    void apply_key(const std::string& key, const std::string& value);
    SceneConfig scene() const;
    KeyValues echo() const;
};

// Loads `key = value` lines into the config; unknown keys throw ShapeError.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace covpr
