#pragma once

// Uniform hash grid for fixed-radius neighbor queries, and voxel pooling.
// Both structures are immutable after build; concurrent queries are safe.

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dyco/errors.hpp"

namespace dyco::spatial {

using Vec3 = std::array<double, 3>;

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
    size_t operator()(const CellKey& k) const {
        uint64_t h = static_cast<uint64_t>(k.x) * 73856093ull ^
                     static_cast<uint64_t>(k.y) * 19349669ull ^
                     static_cast<uint64_t>(k.z) * 83492791ull;
        return static_cast<size_t>(h);
    }
};

class HashGrid {
public:
    // coords: N*3 row-major, meters. Throws DataError on non-finite input.
    static HashGrid build(const std::vector<double>& coords, double cell_size);

    // Indices of all points with euclidean distance <= r (closed ball).
    // Result is sorted ascending.
    std::vector<int> radius_neighbors(const Vec3& query, double r) const;

    double cell_size() const { return cell_size_; }
    size_t num_cells() const { return cells_.size(); }
    const std::unordered_map<CellKey, std::vector<int>, CellKeyHash>& cells() const { return cells_; }

private:
    double cell_size_ = 0;
    std::vector<double> coords_;  // owned copy, N*3
    std::unordered_map<CellKey, std::vector<int>, CellKeyHash> cells_;
};

struct VoxelMap {
    double voxel_size = 0;
    // Deterministic order: lexicographic voxel coordinate.
    std::vector<CellKey> voxel_coords;
    std::vector<std::vector<int>> members;       // per voxel, ascending point indices
    std::vector<std::vector<double>> mean_feats; // per voxel arithmetic mean
};

// Per-voxel mean features. Empty input yields an empty map.
VoxelMap voxelize(const std::vector<double>& coords, const std::vector<double>& feats,
                  int feat_dim, double voxel_size);

}  // namespace dyco::spatial
