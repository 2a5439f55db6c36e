#pragma once

// Scene representation, PLY ingestion/export, synthetic-scene generation
// and augmentation. Scenes are immutable after creation by convention;
// augment() returns a transformed copy.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dyco/errors.hpp"

namespace dyco::data {

using Vec3 = std::array<double, 3>;

struct Scene {
    std::string id;
    int feat_dim = 0;
    std::vector<double> coords;      // N*3, meters
    std::vector<double> feats;       // N*feat_dim, e.g. RGB in [0,1]
    std::vector<int> sem_labels;     // in [0,C) or -1 (ignore)
    std::vector<int> inst_labels;    // instance id or -1

    int num_points() const { return static_cast<int>(coords.size() / 3); }
    Vec3 point(int i) const { return {coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]}; }
};

struct InstanceGT {
    int id = -1;
    int sem_label = -1;
    std::vector<int> members;  // ascending point indices
    Vec3 centroid{};           // mean of member coordinates
};

// Fails fast (DataError) on violated invariants: array lengths, instance
// points without semantics, non-contiguous instance ids.
void validate_scene(const Scene& s);

std::vector<InstanceGT> instances_of(const Scene& s);

struct SynthConfig {
    int num_scenes = 20;
    int classes = 3;             // instance classes; background uses label `classes`
    int min_instances = 2, max_instances = 8;
    int min_points = 150, max_points = 500;
    Vec3 room{8.0, 8.0, 3.0};
    double noise_sigma = 0.01;
    double separation = 1.3;     // min inter-centroid distance, meters
    double color_noise = 0.05;
    int floor_points = 600;
    uint64_t seed = 0;
};

std::vector<Scene> generate_synthetic(const SynthConfig& cfg);

// Geometric primitives used by augment(); each is its own inverse or has
// an exact inverse, which the tests rely on.
Scene rotate_z(const Scene& s, double theta, const Vec3& center);
Scene flip_axis(const Scene& s, int axis, double plane);
Vec3 scene_center(const Scene& s);

struct AugmentConfig {
    bool rotate = true;
    bool flip = true;
    bool crop = true;
    double min_keep = 0.5;       // crop keeps at least this fraction of points
    int min_points_after = 100;
};

Scene augment(const Scene& s, uint64_t seed, const AugmentConfig& cfg = {});

// ---- PLY ----------------------------------------------------------------

// ASCII or binary-little-endian, x/y/z required; red/green/blue, label and
// instance properties are picked up when present.
Scene load_ply(const std::string& path);
void save_ply(const Scene& s, const std::string& path, bool binary = true);

// One deterministic color per predicted instance, seeded by instance rank;
// points not covered by any mask come out gray.
void save_colored_ply(const Scene& s, const std::vector<std::vector<int>>& masks,
                      const std::string& path);

// ---- dataset manifest ----------------------------------------------------

// Newline-delimited scene file paths, relative to the manifest directory.
std::vector<std::string> read_manifest(const std::string& manifest_path);
void write_manifest(const std::string& manifest_path, const std::vector<std::string>& names);
std::vector<Scene> load_dataset(const std::string& manifest_path);

}  // namespace dyco::data
