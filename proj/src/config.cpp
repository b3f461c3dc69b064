#include "covpr/config.hpp"

#include <charconv>

#include "covpr/errors.hpp"

namespace covpr {

namespace {

double to_double(const std::string& key, const std::string& value) {
    double v = 0.0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw ShapeError("config key '" + key + "' expects a number, got '" + value + "'");
    }
    return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw ShapeError("config key '" + key + "' expects an integer, got '" + value + "'");
    }
    return v;
}

}  // namespace

void RunConfig::apply_key(const std::string& key, const std::string& value) {
    if (key == "fusion_mode") {
        mode = fusion_mode_from_string(value);
    } else if (key == "agg_mode") {
        if (value == "hard") {
            agg_mode = AssignMode::kHard;
        } else if (value == "soft") {
            agg_mode = AssignMode::kSoft;
        } else {
            throw ShapeError("agg_mode must be hard or soft");
        }
    } else if (key == "clusters") {
        clusters = to_u64(key, value);
    } else if (key == "softness") {
        softness = to_double(key, value);
    } else if (key == "k_top") {
        k_top = to_u64(key, value);
    } else if (key == "threshold_m") {
        threshold_m = to_double(key, value);
    } else if (key == "radius_m") {
        radius_m = to_double(key, value);
    } else if (key == "seed") {
        seed = to_u64(key, value);
    } else if (key == "places") {
        places = to_u64(key, value);
    } else if (key == "extent_m") {
        extent_m = to_double(key, value);
    } else if (key == "latent_dim") {
        latent_dim = to_u64(key, value);
    } else if (key == "rows_per_view") {
        rows_per_view = to_u64(key, value);
    } else if (key == "collaborators") {
        collaborators = to_u64(key, value);
    } else if (key == "occlusion") {
        occlusion = to_double(key, value);
    } else if (key == "noise_per_meter") {
        noise_per_meter = to_double(key, value);
    } else if (key == "ref_noise") {
        ref_noise = to_double(key, value);
    } else if (key == "view_noise") {
        view_noise = to_double(key, value);
    } else if (key == "epochs") {
        epochs = to_u64(key, value);
    } else if (key == "learning_rate") {
        learning_rate = to_double(key, value);
    } else if (key == "margin") {
        margin = to_double(key, value);
    } else if (key == "negatives") {
        negatives = to_u64(key, value);
    } else if (key == "positive_radius_m") {
        positive_radius_m = to_double(key, value);
    } else if (key == "train_clusters") {
        train_clusters = to_u64(key, value);
    } else if (key == "train_softness") {
        train_softness = to_double(key, value);
    } else {
        throw ShapeError("unknown config key '" + key + "'");
    }
}

SceneConfig RunConfig::scene() const {
    SceneConfig sc;
    sc.place_count = places;
    sc.extent_m = extent_m;
    sc.latent_dim = latent_dim;
    sc.rows_per_view = rows_per_view;
    sc.collaborators = collaborators;
    sc.max_collab_distance_m = radius_m;
    sc.noise_per_meter = noise_per_meter;
    sc.occlusion_fraction = occlusion;
    sc.ref_noise = ref_noise;
    sc.view_noise = view_noise;
    sc.seed = seed;
    return sc;
}

KeyValues RunConfig::echo() const {
    return {
        {"fusion_mode", std::string(to_string(mode))},
        {"agg_mode", agg_mode == AssignMode::kHard ? "hard" : "soft"},
        {"clusters", std::to_string(clusters)},
        {"softness", format_double(softness)},
        {"k_top", std::to_string(k_top)},
        {"threshold_m", format_double(threshold_m)},
        {"radius_m", format_double(radius_m)},
        {"seed", std::to_string(seed)},
        {"places", std::to_string(places)},
        {"extent_m", format_double(extent_m)},
        {"latent_dim", std::to_string(latent_dim)},
        {"rows_per_view", std::to_string(rows_per_view)},
        {"collaborators", std::to_string(collaborators)},
        {"occlusion", format_double(occlusion)},
        {"noise_per_meter", format_double(noise_per_meter)},
        {"ref_noise", format_double(ref_noise)},
        {"view_noise", format_double(view_noise)},
        {"epochs", std::to_string(epochs)},
        {"learning_rate", format_double(learning_rate)},
        {"margin", format_double(margin)},
        {"negatives", std::to_string(negatives)},
        {"positive_radius_m", format_double(positive_radius_m)},
        {"train_clusters", std::to_string(train_clusters)},
        {"train_softness", format_double(train_softness)},
    };
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    const KeyValues kv = load_key_values(path);
    for (const auto& [key, value] : kv) {
        base.apply_key(key, value);
    }
    return base;
}

}  // namespace covpr
