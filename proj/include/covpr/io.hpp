#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "covpr/codebook.hpp"
#include "covpr/descriptor.hpp"
#include "covpr/retrieval.hpp"
#include "covpr/simworld.hpp"

namespace covpr {

inline constexpr std::uint32_t kFormatVersion = 1;

// Descriptor file "CVPD": magic, version u32 LE, M u32, d u32, then M*d
// IEEE-754 32-bit floats, row-major, little-endian.
void save_descriptor_set(const std::filesystem::path& path, const LocalDescriptorSet& set);
LocalDescriptorSet load_descriptor_set(const std::filesystem::path& path);

// Codebook file "CVPC": magic, version, K u32, d u32, softness f64 LE, then
// K*d f32 LE.
void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

// Database file "CVDB": magic, version, entry count u32, descriptor length
// u32, then per entry: id u64 LE, pose x,y f64 LE, descriptor f32 LE.
void save_database(const std::filesystem::path& path, const ReferenceDatabase& db);
ReferenceDatabase load_database(const std::filesystem::path& path);

// CSV with required header `id,x,y`.
std::map<std::uint64_t, Pose> load_poses_csv(const std::filesystem::path& path);

// Ordered key-value text (also the scene manifest and config file format):
// one `key = value` per line, '#' comments.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
void save_key_values(const std::filesystem::path& path, const KeyValues& kv);
KeyValues load_key_values(const std::filesystem::path& path);

// World directory layout: manifest.txt, refs/<id>.cvpd, refs_poses.csv,
// queries/q<i>_ego.cvpd, queries/q<i>_collab<j>.cvpd, queries_poses.csv,
// collab_poses.csv.
void export_world(const World& world, const std::filesystem::path& dir);
World import_world(const std::filesystem::path& dir);

// Shortest round-trip decimal form; used everywhere a double is printed so
// repeated runs stay byte-identical.
std::string format_double(double value);

}  // namespace covpr
