#include "covpr/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "covpr/errors.hpp"

namespace covpr {

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32le(std::ofstream& out, std::uint32_t v) {
    std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                   static_cast<unsigned char>(v >> 16),
                                   static_cast<unsigned char>(v >> 24)};
    write_bytes(out, b.data(), b.size());
}

void write_u64le(std::ofstream& out, std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b.data(), b.size());
}

void write_f32le(std::ofstream& out, float v) { write_u32le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64le(std::ofstream& out, double v) { write_u64le(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    std::ifstream in;
    std::filesystem::path path;

    explicit Reader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p.string());
    }

    void read_bytes(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw IoError("truncated file " + path.string());
        }
    }

    std::uint32_t read_u32le() {
        std::array<unsigned char, 4> b{};
        read_bytes(b.data(), b.size());
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t read_u64le() {
        std::array<unsigned char, 8> b{};
        read_bytes(b.data(), b.size());
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    float read_f32le() { return std::bit_cast<float>(read_u32le()); }
    double read_f64le() { return std::bit_cast<double>(read_u64le()); }

    void expect_magic(const char (&magic)[5]) {
        std::array<char, 4> m{};
        read_bytes(m.data(), m.size());
        if (std::memcmp(m.data(), magic, 4) != 0) {
            throw IoError("bad magic in " + path.string());
        }
        const std::uint32_t version = read_u32le();
        if (version != kFormatVersion) {
            throw IoError("unsupported format version in " + path.string());
        }
    }
};

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

}  // namespace

std::string format_double(double value) {
    std::array<char, 40> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), res.ptr);
}

void save_descriptor_set(const std::filesystem::path& path, const LocalDescriptorSet& set) {
    set.validate();
    auto out = open_out(path);
    write_bytes(out, "CVPD", 4);
    write_u32le(out, kFormatVersion);
    write_u32le(out, static_cast<std::uint32_t>(set.count()));
    write_u32le(out, static_cast<std::uint32_t>(set.dim()));
    for (std::size_t i = 0; i < set.count(); ++i) {
        for (std::size_t j = 0; j < set.dim(); ++j) {
            write_f32le(out, static_cast<float>(set.data(i, j)));
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

LocalDescriptorSet load_descriptor_set(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("CVPD");
    const std::uint32_t m = r.read_u32le();
    const std::uint32_t d = r.read_u32le();
    LocalDescriptorSet set;
    set.image_id = path.stem().string();
    set.data = Matrix(m, d);
    for (std::uint32_t i = 0; i < m; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) set.data(i, j) = r.read_f32le();
    }
    set.validate();
    return set;
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook) {
    codebook.validate();
    auto out = open_out(path);
    write_bytes(out, "CVPC", 4);
    write_u32le(out, kFormatVersion);
    write_u32le(out, static_cast<std::uint32_t>(codebook.cluster_count()));
    write_u32le(out, static_cast<std::uint32_t>(codebook.dim()));
    write_f64le(out, codebook.softness);
    for (std::size_t k = 0; k < codebook.cluster_count(); ++k) {
        for (std::size_t j = 0; j < codebook.dim(); ++j) {
            write_f32le(out, static_cast<float>(codebook.centroids(k, j)));
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Codebook load_codebook(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("CVPC");
    const std::uint32_t k = r.read_u32le();
    const std::uint32_t d = r.read_u32le();
    Codebook cb;
    cb.softness = r.read_f64le();
    cb.centroids = Matrix(k, d);
    for (std::uint32_t i = 0; i < k; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) cb.centroids(i, j) = r.read_f32le();
    }
    cb.validate();
    return cb;
}

void save_database(const std::filesystem::path& path, const ReferenceDatabase& db) {
    auto out = open_out(path);
    write_bytes(out, "CVDB", 4);
    write_u32le(out, kFormatVersion);
    write_u32le(out, static_cast<std::uint32_t>(db.size()));
    write_u32le(out, static_cast<std::uint32_t>(db.dim()));
    for (const auto& e : db.entries()) {
        write_u64le(out, e.id);
        write_f64le(out, e.pose.x);
        write_f64le(out, e.pose.y);
        for (double v : e.descriptor) write_f32le(out, static_cast<float>(v));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

ReferenceDatabase load_database(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_magic("CVDB");
    const std::uint32_t count = r.read_u32le();
    const std::uint32_t dim = r.read_u32le();
    std::vector<DatabaseEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        DatabaseEntry e;
        e.id = r.read_u64le();
        e.pose.x = r.read_f64le();
        e.pose.y = r.read_f64le();
        e.descriptor.resize(dim);
        for (std::uint32_t j = 0; j < dim; ++j) e.descriptor[j] = r.read_f32le();
        entries.push_back(std::move(e));
    }
    return ReferenceDatabase::build(std::move(entries));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
    const std::string t = trim(s);
    double v = 0.0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw IoError("bad number '" + s + "' in " + path.string());
    }
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::filesystem::path& path) {
    const std::string t = trim(s);
    std::uint64_t v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw IoError("bad id '" + s + "' in " + path.string());
    }
    return v;
}

}  // namespace

std::map<std::uint64_t, Pose> load_poses_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty pose file " + path.string());
    if (trim(line) != "id,x,y") {
        throw IoError("pose CSV must start with header 'id,x,y': " + path.string());
    }
    std::map<std::uint64_t, Pose> poses;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) throw IoError("bad pose row in " + path.string());
        poses[parse_u64(fields[0], path)] = {parse_double(fields[1], path),
                                             parse_double(fields[2], path)};
    }
    return poses;
}

void save_key_values(const std::filesystem::path& path, const KeyValues& kv) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& [key, value] : kv) {
        out << key << " = " << value << "\n";
    }
    if (!out) throw IoError("write failed for " + path.string());
}

KeyValues load_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    KeyValues kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw IoError("expected 'key = value' in " + path.string());
        kv.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return kv;
}

namespace {

std::string kv_get(const KeyValues& kv, const std::string& key,
                   const std::filesystem::path& where) {
    for (const auto& [k, v] : kv) {
        if (k == key) return v;
    }
    throw IoError("missing key '" + key + "' in " + where.string());
}

void write_poses_csv(const std::filesystem::path& path,
                     const std::vector<std::pair<std::uint64_t, Pose>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "id,x,y\n";
    for (const auto& [id, pose] : rows) {
        out << id << "," << format_double(pose.x) << "," << format_double(pose.y) << "\n";
    }
}

}  // namespace

void export_world(const World& world, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "refs", ec);
    std::filesystem::create_directories(dir / "queries", ec);
    if (ec) throw IoError("cannot create world directory " + dir.string());

    const SceneConfig& c = world.config;
    KeyValues manifest{
        {"format", "covpr-world"},
        {"version", std::to_string(kFormatVersion)},
        {"seed", std::to_string(c.seed)},
        {"place_count", std::to_string(c.place_count)},
        {"extent_m", format_double(c.extent_m)},
        {"latent_dim", std::to_string(c.latent_dim)},
        {"rows_per_view", std::to_string(c.rows_per_view)},
        {"collaborators", std::to_string(c.collaborators)},
        {"max_collab_distance_m", format_double(c.max_collab_distance_m)},
        {"noise_per_meter", format_double(c.noise_per_meter)},
        {"occlusion_fraction", format_double(c.occlusion_fraction)},
        {"ref_noise", format_double(c.ref_noise)},
        {"view_noise", format_double(c.view_noise)},
        {"query_count", std::to_string(world.queries.size())},
    };
    save_key_values(dir / "manifest.txt", manifest);

    std::vector<std::pair<std::uint64_t, Pose>> ref_poses;
    for (const auto& r : world.references) {
        save_descriptor_set(dir / "refs" / (std::to_string(r.place_id) + ".cvpd"), r.set);
        ref_poses.emplace_back(r.place_id, r.pose);
    }
    write_poses_csv(dir / "refs_poses.csv", ref_poses);

    std::vector<std::pair<std::uint64_t, Pose>> ego_poses;
    std::ofstream collab_csv(dir / "collab_poses.csv", std::ios::trunc);
    collab_csv << "query,agent,x,y\n";
    for (std::size_t qi = 0; qi < world.queries.size(); ++qi) {
        const auto& group = world.queries[qi];
        save_descriptor_set(dir / "queries" / ("q" + std::to_string(qi) + "_ego.cvpd"),
                            group.ego.descriptors);
        ego_poses.emplace_back(qi, group.ego.pose);
        for (std::size_t ci = 0; ci < group.collaborators.size(); ++ci) {
            save_descriptor_set(
                dir / "queries" /
                    ("q" + std::to_string(qi) + "_collab" + std::to_string(ci) + ".cvpd"),
                group.collaborators[ci].descriptors);
            collab_csv << qi << "," << ci << "," << format_double(group.collaborators[ci].pose.x)
                       << "," << format_double(group.collaborators[ci].pose.y) << "\n";
        }
    }
    write_poses_csv(dir / "queries_poses.csv", ego_poses);
    if (!collab_csv) throw IoError("write failed for collaborator poses");
}

World import_world(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.txt";
    const KeyValues manifest = load_key_values(manifest_path);
    if (kv_get(manifest, "format", manifest_path) != "covpr-world") {
        throw IoError("not a world directory: " + dir.string());
    }

    World world;
    SceneConfig& c = world.config;
    c.seed = parse_u64(kv_get(manifest, "seed", manifest_path), manifest_path);
    c.place_count = parse_u64(kv_get(manifest, "place_count", manifest_path), manifest_path);
    c.extent_m = parse_double(kv_get(manifest, "extent_m", manifest_path), manifest_path);
    c.latent_dim = parse_u64(kv_get(manifest, "latent_dim", manifest_path), manifest_path);
    c.rows_per_view = parse_u64(kv_get(manifest, "rows_per_view", manifest_path), manifest_path);
    c.collaborators = parse_u64(kv_get(manifest, "collaborators", manifest_path), manifest_path);
    c.max_collab_distance_m =
        parse_double(kv_get(manifest, "max_collab_distance_m", manifest_path), manifest_path);
    c.noise_per_meter =
        parse_double(kv_get(manifest, "noise_per_meter", manifest_path), manifest_path);
    c.occlusion_fraction =
        parse_double(kv_get(manifest, "occlusion_fraction", manifest_path), manifest_path);
    c.ref_noise = parse_double(kv_get(manifest, "ref_noise", manifest_path), manifest_path);
    c.view_noise = parse_double(kv_get(manifest, "view_noise", manifest_path), manifest_path);
    const std::size_t query_count =
        parse_u64(kv_get(manifest, "query_count", manifest_path), manifest_path);

    const auto ref_poses = load_poses_csv(dir / "refs_poses.csv");
    for (const auto& [id, pose] : ref_poses) {
        PlaceView view;
        view.place_id = id;
        view.pose = pose;
        view.set = load_descriptor_set(dir / "refs" / (std::to_string(id) + ".cvpd"));
        world.references.push_back(std::move(view));
    }

    const auto ego_poses = load_poses_csv(dir / "queries_poses.csv");
    std::map<std::pair<std::uint64_t, std::uint64_t>, Pose> collab_poses;
    {
        const auto collab_path = dir / "collab_poses.csv";
        std::ifstream in(collab_path);
        if (!in) throw IoError("cannot open " + collab_path.string());
        std::string line;
        if (!std::getline(in, line) || trim(line) != "query,agent,x,y") {
            throw IoError("collaborator CSV must start with 'query,agent,x,y'");
        }
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 4) throw IoError("bad collaborator row in " + collab_path.string());
            collab_poses[{parse_u64(f[0], collab_path), parse_u64(f[1], collab_path)}] = {
                parse_double(f[2], collab_path), parse_double(f[3], collab_path)};
        }
    }

    for (std::size_t qi = 0; qi < query_count; ++qi) {
        QueryGroup group;
        group.ego.agent_id = 0;
        group.ego.role = Role::kEgo;
        group.ego.pose = ego_poses.at(qi);
        group.ego.descriptors =
            load_descriptor_set(dir / "queries" / ("q" + std::to_string(qi) + "_ego.cvpd"));
        for (std::size_t ci = 0; ci < c.collaborators; ++ci) {
            AgentObservation collab;
            collab.agent_id = ci + 1;
            collab.role = Role::kCollaborator;
            collab.pose = collab_poses.at({qi, ci});
            collab.descriptors = load_descriptor_set(
                dir / "queries" /
                ("q" + std::to_string(qi) + "_collab" + std::to_string(ci) + ".cvpd"));
            group.collaborators.push_back(std::move(collab));
        }
        world.queries.push_back(std::move(group));
    }
    return world;
}

}  // namespace covpr
