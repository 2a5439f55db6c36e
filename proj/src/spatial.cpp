#include "dyco/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace dyco::spatial {

namespace {

CellKey key_of(const double* p, double cell) {
    return CellKey{static_cast<int64_t>(std::floor(p[0] / cell)),
                   static_cast<int64_t>(std::floor(p[1] / cell)),
                   static_cast<int64_t>(std::floor(p[2] / cell))};
}

}  // namespace

HashGrid HashGrid::build(const std::vector<double>& coords, double cell_size) {
    if (cell_size <= 0) throw ConfigError("hash grid: cell_size must be positive");
    if (coords.size() % 3 != 0) throw DataError("hash grid: coords not a multiple of 3");
    HashGrid g;
    g.cell_size_ = cell_size;
    g.coords_ = coords;
    int n = static_cast<int>(coords.size() / 3);
    for (int i = 0; i < n; ++i) {
        const double* p = coords.data() + static_cast<size_t>(i) * 3;
        for (int d = 0; d < 3; ++d)
            if (!std::isfinite(p[d]))
                throw DataError("hash grid: non-finite coordinate at point " + std::to_string(i));
        g.cells_[key_of(p, cell_size)].push_back(i);
    }
    return g;
}

std::vector<int> HashGrid::radius_neighbors(const Vec3& query, double r) const {
    if (r <= 0) throw ConfigError("radius_neighbors: r must be positive");
    std::vector<int> out;
    int64_t reach = static_cast<int64_t>(std::ceil(r / cell_size_));
    CellKey c = key_of(query.data(), cell_size_);
    double r2 = r * r;
    for (int64_t dx = -reach; dx <= reach; ++dx)
        for (int64_t dy = -reach; dy <= reach; ++dy)
            for (int64_t dz = -reach; dz <= reach; ++dz) {
                auto it = cells_.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
                if (it == cells_.end()) continue;
                for (int i : it->second) {
                    const double* p = coords_.data() + static_cast<size_t>(i) * 3;
                    double ddx = p[0] - query[0], ddy = p[1] - query[1], ddz = p[2] - query[2];
                    if (ddx * ddx + ddy * ddy + ddz * ddz <= r2) out.push_back(i);
                }
            }
    std::sort(out.begin(), out.end());
    return out;
}

VoxelMap voxelize(const std::vector<double>& coords, const std::vector<double>& feats,
                  int feat_dim, double voxel_size) {
    if (voxel_size <= 0) throw ConfigError("voxelize: voxel_size must be positive");
    size_t n = coords.size() / 3;
    if (feat_dim > 0 && feats.size() != n * static_cast<size_t>(feat_dim))
        throw ShapeError("voxelize: feature row count differs from point count");
    VoxelMap vm;
    vm.voxel_size = voxel_size;
    if (n == 0) return vm;

    // std::map gives the lexicographic voxel ordering directly
    auto cmp = [](const CellKey& a, const CellKey& b) {
        if (a.x != b.x) return a.x < b.x;
        if (a.y != b.y) return a.y < b.y;
        return a.z < b.z;
    };
    std::map<CellKey, std::vector<int>, decltype(cmp)> buckets(cmp);
    for (size_t i = 0; i < n; ++i)
        buckets[key_of(coords.data() + i * 3, voxel_size)].push_back(static_cast<int>(i));

    for (auto& [key, idx] : buckets) {
        std::vector<double> mean(feat_dim, 0.0);
        for (int i : idx)
            for (int d = 0; d < feat_dim; ++d) mean[d] += feats[static_cast<size_t>(i) * feat_dim + d];
        for (double& v : mean) v /= static_cast<double>(idx.size());
        vm.voxel_coords.push_back(key);
        vm.members.push_back(std::move(idx));
        vm.mean_feats.push_back(std::move(mean));
    }
    return vm;
}

}  // namespace dyco::spatial
