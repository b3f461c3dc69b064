#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "covpr/aggregate.hpp"
#include "covpr/codebook.hpp"
#include "covpr/config.hpp"
#include "covpr/errors.hpp"
#include "covpr/fusion.hpp"
#include "covpr/io.hpp"
#include "covpr/retrieval.hpp"
#include "covpr/rng.hpp"
#include "covpr/selfcheck.hpp"
#include "covpr/simworld.hpp"
#include "covpr/training.hpp"

namespace fs = std::filesystem;
using namespace covpr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitIo = 2;
constexpr int kExitShape = 3;

void echo_config(std::ostream& out, const RunConfig& config) {
    for (const auto& [key, value] : config.echo()) {
        out << "# " << key << " = " << value << "\n";
    }
}

std::ofstream open_text_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

// Descriptor inputs may be files or directories; directories are scanned for
// *.cvpd and sorted by name so runs stay deterministic.
std::vector<fs::path> collect_descriptor_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& input : inputs) {
        const fs::path p(input);
        if (fs::is_directory(p)) {
            for (const auto& entry : fs::directory_iterator(p)) {
                if (entry.path().extension() == ".cvpd") files.push_back(entry.path());
            }
        } else if (fs::exists(p)) {
            files.push_back(p);
        } else {
            throw IoError("no such input: " + input);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no descriptor files found");
    return files;
}

World obtain_world(const RunConfig& config, const std::string& world_dir) {
    if (!world_dir.empty()) {
        if (!fs::is_directory(world_dir)) throw IoError("no such world directory: " + world_dir);
        return import_world(world_dir);
    }
    return generate_world(config.scene());
}

Codebook obtain_codebook(const RunConfig& config, const std::string& codebook_path,
                         const World& world) {
    if (!codebook_path.empty()) return load_codebook(codebook_path);
    std::vector<LocalDescriptorSet> sets;
    sets.reserve(world.references.size());
    for (const auto& r : world.references) sets.push_back(r.set);
    FitOptions opts;
    opts.softness = config.softness;
    return fit_codebook(sets, config.clusters, derive_seed(config.seed, "fit"), opts).codebook;
}

// Aggregates and fuses every query group under the requested mode; "reorder"
// routes through the cumulative-score baseline instead of descriptor fusion.
std::vector<EvalQuery> run_queries(const World& world, const Codebook& codebook,
                                   const RunConfig& config, const ReferenceDatabase& db,
                                   const std::string& mode) {
    const std::size_t k_top = std::max<std::size_t>(config.k_top, 10);
    std::vector<EvalQuery> out;
    out.reserve(world.queries.size());
    for (const auto& group : world.queries) {
        const GlobalDescriptor ego = aggregate(group.ego.descriptors, codebook, config.agg_mode);
        std::vector<GlobalDescriptor> collabs;
        for (const auto& c : group.collaborators) {
            collabs.push_back(aggregate(c.descriptors, codebook, config.agg_mode));
        }
        if (mode == "reorder") {
            std::vector<GlobalDescriptor> all{ego};
            all.insert(all.end(), collabs.begin(), collabs.end());
            out.push_back({group.ego.pose, query_reordering(db, all, k_top)});
        } else {
            FusionInput input{ego, collabs};
            const GlobalDescriptor fused = fuse(input, fusion_mode_from_string(mode));
            out.push_back({group.ego.pose, query_topk(db, fused, k_top)});
        }
    }
    return out;
}

ReferenceDatabase database_from_world(const World& world, const Codebook& codebook,
                                      const RunConfig& config) {
    std::vector<DatabaseEntry> entries;
    entries.reserve(world.references.size());
    for (const auto& r : world.references) {
        entries.push_back(
            {r.place_id, r.pose, aggregate(r.set, codebook, config.agg_mode).flat()});
    }
    return ReferenceDatabase::build(std::move(entries));
}

int cmd_fit(const RunConfig& config, const std::vector<std::string>& inputs,
            const std::string& out_path) {
    const auto files = collect_descriptor_files(inputs);
    std::vector<LocalDescriptorSet> sets;
    sets.reserve(files.size());
    for (const auto& f : files) sets.push_back(load_descriptor_set(f));

    FitOptions opts;
    opts.softness = config.softness;
    const FitResult result =
        fit_codebook(sets, config.clusters, derive_seed(config.seed, "fit"), opts);
    save_codebook(out_path, result.codebook);

    echo_config(std::cout, config);
    std::cout << "K=" << result.codebook.cluster_count() << " d=" << result.codebook.dim()
              << " inertia=" << format_double(result.inertia) << "\n";
    return kExitOk;
}

int cmd_build_db(const RunConfig& config, const std::vector<std::string>& inputs,
                 const std::string& poses_path, const std::string& codebook_path,
                 const std::string& out_path) {
    const auto files = collect_descriptor_files(inputs);
    const auto poses = load_poses_csv(poses_path);
    const Codebook codebook = load_codebook(codebook_path);

    std::vector<std::pair<std::uint64_t, fs::path>> ordered;
    for (const auto& f : files) {
        std::uint64_t id = 0;
        const std::string stem = f.stem().string();
        try {
            id = std::stoull(stem);
        } catch (const std::exception&) {
            throw ShapeError("descriptor file name must be a numeric id: " + f.string());
        }
        ordered.emplace_back(id, f);
    }
    std::sort(ordered.begin(), ordered.end());

    std::vector<DatabaseEntry> entries;
    for (const auto& [id, path] : ordered) {
        const auto it = poses.find(id);
        if (it == poses.end()) {
            throw ShapeError("no pose for id " + std::to_string(id) + " in " + poses_path);
        }
        const LocalDescriptorSet set = load_descriptor_set(path);
        entries.push_back({id, it->second, aggregate(set, codebook, config.agg_mode).flat()});
    }
    const ReferenceDatabase db = ReferenceDatabase::build(std::move(entries));
    save_database(out_path, db);

    echo_config(std::cout, config);
    std::cout << "entries=" << db.size() << " dim=" << db.dim() << "\n";
    return kExitOk;
}

int cmd_query(const RunConfig& config, const std::string& db_path,
              const std::string& codebook_path, const std::string& ego_path,
              const std::vector<std::string>& collab_paths, const std::string& mode,
              const std::string& out_path) {
    const ReferenceDatabase db = load_database(db_path);
    const Codebook codebook = load_codebook(codebook_path);
    const GlobalDescriptor ego =
        aggregate(load_descriptor_set(ego_path), codebook, config.agg_mode);
    std::vector<GlobalDescriptor> collabs;
    for (const auto& p : collab_paths) {
        collabs.push_back(aggregate(load_descriptor_set(p), codebook, config.agg_mode));
    }

    RetrievalResult result;
    if (mode == "reorder") {
        std::vector<GlobalDescriptor> all{ego};
        all.insert(all.end(), collabs.begin(), collabs.end());
        result = query_reordering(db, all, config.k_top);
    } else {
        result = query_topk(db, fuse(FusionInput{ego, collabs}, fusion_mode_from_string(mode)),
                            config.k_top);
    }

    std::ostringstream body;
    body << "rank,id,score,x,y\n";
    for (std::size_t r = 0; r < result.ranked.size(); ++r) {
        const auto& m = result.ranked[r];
        body << r + 1 << "," << m.id << "," << format_double(m.score) << ","
             << format_double(m.pose.x) << "," << format_double(m.pose.y) << "\n";
    }
    echo_config(std::cout, config);
    std::cout << body.str();
    if (!out_path.empty()) {
        auto out = open_text_out(out_path);
        echo_config(out, config);
        out << body.str();
    }
    return kExitOk;
}

int cmd_eval(const RunConfig& config, const std::string& world_dir, const std::string& mode,
             const std::string& codebook_path, const std::string& out_path,
             const std::string& export_dir) {
    const World world = obtain_world(config, world_dir);
    if (!export_dir.empty()) export_world(world, export_dir);
    const Codebook codebook = obtain_codebook(config, codebook_path, world);
    const ReferenceDatabase db = database_from_world(world, codebook, config);
    const auto queries = run_queries(world, codebook, config, db, mode);
    const EvalReport report = evaluate(db, queries, config.threshold_m);

    std::ostringstream body;
    body << "k,recall,error\n";
    for (const auto& [k, recall] : report.recall_at) {
        body << k << "," << format_double(recall) << "," << format_double(report.error_at.at(k))
             << "\n";
    }
    echo_config(std::cout, config);
    std::cout << "mode=" << mode << " queries=" << report.query_count
              << " threshold_m=" << format_double(report.threshold_m) << "\n";
    for (const auto& [k, recall] : report.recall_at) {
        std::cout << "recall@" << k << "=" << format_double(recall) << " error@" << k << "="
                  << format_double(report.error_at.at(k)) << "\n";
    }
    if (!out_path.empty()) {
        auto out = open_text_out(out_path);
        echo_config(out, config);
        out << "mode," << mode << "\n" << body.str();
    }
    return kExitOk;
}

int cmd_train(const RunConfig& config, const std::string& world_dir,
              const std::string& init_path, const std::string& trace_path,
              const std::string& out_codebook) {
    const World world = obtain_world(config, world_dir);
    const TrainDataset dataset = to_train_dataset(world);

    TrainConfig tc;
    tc.epochs = config.epochs;
    tc.learning_rate = config.learning_rate;
    tc.margin = config.margin;
    tc.positive_radius_m =
        config.positive_radius_m > 0.0 ? config.positive_radius_m : config.threshold_m;
    tc.negatives_per_query = config.negatives;
    tc.mode = config.mode;
    tc.seed = config.seed;
    tc.fit_clusters = config.train_clusters;
    tc.fit_softness = config.train_softness;
    if (!init_path.empty()) tc.init = load_codebook(init_path);

    const TrainResult result = train(dataset, tc);
    if (!out_codebook.empty()) save_codebook(out_codebook, result.codebook);
    if (!trace_path.empty()) {
        auto out = open_text_out(trace_path);
        echo_config(out, config);
        out << "epoch,mean_loss,lr\n";
        for (const auto& row : result.trace) {
            out << row.epoch << "," << format_double(row.mean_loss) << ","
                << format_double(row.learning_rate) << "\n";
        }
    }

    echo_config(std::cout, config);
    std::cout << "epochs=" << result.trace.size() << " first_loss="
              << format_double(result.trace.empty() ? 0.0 : result.trace.front().mean_loss)
              << " final_loss="
              << format_double(result.trace.empty() ? 0.0 : result.trace.back().mean_loss)
              << " skipped=" << result.skipped_items << "\n";
    return kExitOk;
}

int cmd_sweep(const RunConfig& config, const std::string& distances_arg, std::size_t trials,
              const std::string& out_path) {
    std::vector<double> distances;
    {
        std::stringstream ss(distances_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) distances.push_back(std::stod(tok));
        }
    }
    if (distances.empty()) throw ShapeError("sweep needs at least one distance");
    if (trials < 1) throw ShapeError("sweep needs at least one trial");

    const std::vector<std::string> modes{"single", "global", "clusterwise", "average", "reorder"};
    std::ostringstream body;
    body << "distance,trial,mode,recall1,recall5,recall10,gain1,gain5,gain10\n";

    for (double dist : distances) {
        // Per-mode, per-k sums for the mean row.
        std::map<std::string, std::array<double, 6>> sums;
        for (std::size_t t = 0; t < trials; ++t) {
            RunConfig rc = config;
            rc.radius_m = dist;
            rc.seed = trials == 1 ? config.seed : derive_seed(config.seed, "trial" + std::to_string(t));
            const World world = generate_world(rc.scene());
            ExperimentConfig ec;
            ec.clusters = rc.clusters;
            ec.softness = rc.softness;
            ec.agg_mode = rc.agg_mode;
            ec.k_top = rc.k_top;
            ec.threshold_m = rc.threshold_m;
            ec.seed = rc.seed;
            const ExperimentReport report = run_experiment(world, ec);
            for (const auto& mode : modes) {
                const EvalReport& er = report.mode(mode);
                const std::array<double, 6> row{
                    er.recall_at.at(1),        er.recall_at.at(5),       er.recall_at.at(10),
                    report.gain(mode, 1),      report.gain(mode, 5),     report.gain(mode, 10)};
                body << format_double(dist) << "," << t << "," << mode;
                for (double v : row) body << "," << format_double(v);
                body << "\n";
                for (std::size_t i = 0; i < row.size(); ++i) sums[mode][i] += row[i];
            }
        }
        if (trials > 1) {
            for (const auto& mode : modes) {
                body << format_double(dist) << ",mean," << mode;
                for (double v : sums[mode]) {
                    body << "," << format_double(v / static_cast<double>(trials));
                }
                body << "\n";
            }
        }
    }

    echo_config(std::cout, config);
    std::cout << body.str();
    if (!out_path.empty()) {
        auto out = open_text_out(out_path);
        echo_config(out, config);
        out << body.str();
    }
    return kExitOk;
}

int cmd_selfcheck(const RunConfig& config, bool corrupt_sigma) {
    SelfCheckOptions options;
    options.seed = config.seed;
    options.corrupt_sigma = corrupt_sigma;
    const auto results = run_selfcheck(options);
    for (const auto& r : results) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " (" << r.detail << ")\n";
    }
    if (!all_passed(results)) {
        std::cout << "selfcheck: FAILED\n";
        return kExitPropertyFailure;
    }
    std::cout << "selfcheck: OK\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaborative place recognition by descriptor fusion"};
    app.require_subcommand(1);

    std::string config_path;
    if (const char* env = std::getenv("COVPR_CONFIG")) config_path = env;
    app.add_option("--config", config_path, "structured text config file (key = value)");
    std::vector<std::string> overrides;
    app.add_option("--set", overrides, "config override key=value (repeatable)");

    // fit
    auto* fit = app.add_subcommand("fit", "fit a codebook from descriptor files");
    std::vector<std::string> fit_inputs;
    std::string fit_out;
    fit->add_option("--input", fit_inputs, "descriptor files or directories")->required();
    fit->add_option("--out", fit_out, "output codebook path")->required();

    // build-db
    auto* bdb = app.add_subcommand("build-db", "aggregate descriptors into a reference database");
    std::vector<std::string> bdb_inputs;
    std::string bdb_poses, bdb_codebook, bdb_out;
    bdb->add_option("--descriptors", bdb_inputs, "descriptor files or directories")->required();
    bdb->add_option("--poses", bdb_poses, "pose CSV (header id,x,y)")->required();
    bdb->add_option("--codebook", bdb_codebook, "codebook file")->required();
    bdb->add_option("--out", bdb_out, "output database path")->required();

    // query
    auto* qry = app.add_subcommand("query", "top-K retrieval for one query group");
    std::string qry_db, qry_codebook, qry_ego, qry_mode, qry_out;
    std::vector<std::string> qry_collabs;
    qry->add_option("--db", qry_db, "database file")->required();
    qry->add_option("--codebook", qry_codebook, "codebook file")->required();
    qry->add_option("--ego", qry_ego, "ego descriptor file")->required();
    qry->add_option("--collab", qry_collabs, "collaborator descriptor files");
    qry->add_option("--mode", qry_mode, "none|global|clusterwise|average|reorder");
    qry->add_option("--out", qry_out, "also write the ranking CSV here");

    // eval
    auto* evl = app.add_subcommand("eval", "recall/error over a world");
    std::string evl_world, evl_mode, evl_codebook, evl_out, evl_export;
    evl->add_option("--world", evl_world, "world directory (default: synthetic from config)");
    evl->add_option("--mode", evl_mode, "none|global|clusterwise|average|reorder");
    evl->add_option("--codebook", evl_codebook, "reuse a codebook instead of fitting");
    evl->add_option("--out", evl_out, "report CSV path");
    evl->add_option("--export", evl_export, "export the world to this directory");

    // train
    auto* trn = app.add_subcommand("train", "toy triplet training of the codebook");
    std::string trn_world, trn_init, trn_trace, trn_out;
    trn->add_option("--world", trn_world, "world directory (default: synthetic from config)");
    trn->add_option("--init-from", trn_init, "initial codebook (e.g. single-agent trained)");
    trn->add_option("--trace", trn_trace, "loss trace CSV path");
    trn->add_option("--out-codebook", trn_out, "trained codebook path");

    // sweep
    auto* swp = app.add_subcommand("sweep", "collaborator-distance ablation sweep");
    std::string swp_distances = "1,5,8,15";
    std::size_t swp_trials = 1;
    std::string swp_out;
    swp->add_option("--distances", swp_distances, "comma-separated distances in meters");
    swp->add_option("--trials", swp_trials, "seeds per distance (per-seed rows plus mean)");
    swp->add_option("--out", swp_out, "gain table CSV path");

    // selfcheck
    auto* chk = app.add_subcommand("selfcheck", "run the constraint and gradient suite");
    bool chk_corrupt = false;
    chk->add_flag("--corrupt-sigma", chk_corrupt,
                  "negative control: skip fusion normalization");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitShape;
    }

    try {
        RunConfig config;
        if (!config_path.empty()) config = load_run_config(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ShapeError("--set expects key=value");
            config.apply_key(kv.substr(0, eq), kv.substr(eq + 1));
        }
        const std::string mode_name(to_string(config.mode));

        if (fit->parsed()) return cmd_fit(config, fit_inputs, fit_out);
        if (bdb->parsed()) return cmd_build_db(config, bdb_inputs, bdb_poses, bdb_codebook, bdb_out);
        if (qry->parsed()) {
            return cmd_query(config, qry_db, qry_codebook, qry_ego, qry_collabs,
                             qry_mode.empty() ? mode_name : qry_mode, qry_out);
        }
        if (evl->parsed()) {
            return cmd_eval(config, evl_world, evl_mode.empty() ? mode_name : evl_mode,
                            evl_codebook, evl_out, evl_export);
        }
        if (trn->parsed()) return cmd_train(config, trn_world, trn_init, trn_trace, trn_out);
        if (swp->parsed()) return cmd_sweep(config, swp_distances, swp_trials, swp_out);
        if (chk->parsed()) return cmd_selfcheck(config, chk_corrupt);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ShapeError& e) {
        std::cerr << "config/shape error: " << e.what() << "\n";
        return kExitShape;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitShape;
    }
    return kExitOk;
}
