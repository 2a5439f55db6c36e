#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "dyco/spatial.hpp"

using namespace dyco;
using namespace dyco::spatial;

namespace {

std::vector<double> random_cloud(int n, std::mt19937_64& rng, double extent = 2.0) {
    std::uniform_real_distribution<double> u(0.0, extent);
    std::vector<double> c(static_cast<size_t>(n) * 3);
    for (double& v : c) v = u(rng);
    return c;
}

// O(n) scan, the distance oracle for radius queries
std::vector<int> brute_neighbors(const std::vector<double>& coords, const Vec3& q, double r) {
    std::vector<int> out;
    for (size_t i = 0; i < coords.size() / 3; ++i) {
        double dx = coords[3 * i] - q[0], dy = coords[3 * i + 1] - q[1], dz = coords[3 * i + 2] - q[2];
        if (std::sqrt(dx * dx + dy * dy + dz * dz) <= r) out.push_back(static_cast<int>(i));
    }
    return out;
}

}  // namespace

TEST_CASE("build separates points across the cell boundary") {
    std::vector<double> pts = {0, 0, 0, 0.025, 0, 0};
    HashGrid g = HashGrid::build(pts, 0.02);
    CHECK(g.num_cells() == 2);
}

TEST_CASE("single point lands in one cell with index 0") {
    HashGrid g = HashGrid::build({0.5, 0.5, 0.5}, 0.1);
    REQUIRE(g.num_cells() == 1);
    CHECK(g.cells().begin()->second == std::vector<int>{0});
}

TEST_CASE("build covers all indices exactly once") {
    std::mt19937_64 rng(1);
    auto pts = random_cloud(10000, rng, 5.0);
    HashGrid g = HashGrid::build(pts, 0.07);
    std::set<int> seen;
    size_t total = 0;
    for (const auto& [key, members] : g.cells()) {
        total += members.size();
        seen.insert(members.begin(), members.end());
    }
    CHECK(total == 10000);
    CHECK(seen.size() == 10000);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 9999);
}

TEST_CASE("build rejects non-finite coordinates with the point index") {
    std::vector<double> pts = {0, 0, 0, std::nan(""), 0, 0};
    CHECK_THROWS_WITH_AS(HashGrid::build(pts, 0.1), doctest::Contains("point 1"), DataError);
}

TEST_CASE("radius query includes the query point itself") {
    std::mt19937_64 rng(2);
    auto pts = random_cloud(100, rng);
    HashGrid g = HashGrid::build(pts, 0.05);
    Vec3 q = {pts[33], pts[34], pts[35]};
    auto nb = g.radius_neighbors(q, 1e-6);
    CHECK(std::find(nb.begin(), nb.end(), 11) != nb.end());
}

TEST_CASE("tiny radius isolates points") {
    std::vector<double> pts = {0, 0, 0, 1, 0, 0, 0, 1, 0};
    HashGrid g = HashGrid::build(pts, 0.5);
    auto nb = g.radius_neighbors({0, 0, 0}, 0.1);
    CHECK(nb == std::vector<int>{0});
}

TEST_CASE("radius query rejects non-positive radius") {
    HashGrid g = HashGrid::build({0, 0, 0}, 0.5);
    CHECK_THROWS_AS(g.radius_neighbors({0, 0, 0}, 0.0), ConfigError);
}

TEST_CASE("radius query equals brute-force scan, including cell size < r") {
    std::mt19937_64 rng(3);
    auto pts = random_cloud(2000, rng);
    std::uniform_real_distribution<double> ur(0.01, 0.4);
    std::uniform_real_distribution<double> uq(0.0, 2.0);
    for (double cell : {0.03, 0.1, 0.5}) {
        HashGrid g = HashGrid::build(pts, cell);
        for (int k = 0; k < 34; ++k) {
            Vec3 q = {uq(rng), uq(rng), uq(rng)};
            double r = ur(rng);
            CHECK(g.radius_neighbors(q, r) == brute_neighbors(pts, q, r));
        }
    }
}

TEST_CASE("radius neighborship is symmetric") {
    std::mt19937_64 rng(4);
    auto pts = random_cloud(300, rng);
    HashGrid g = HashGrid::build(pts, 0.08);
    double r = 0.21;
    for (int i = 0; i < 300; i += 17) {
        auto nbi = g.radius_neighbors({pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]}, r);
        for (int j : nbi) {
            auto nbj = g.radius_neighbors({pts[3 * j], pts[3 * j + 1], pts[3 * j + 2]}, r);
            CHECK(std::find(nbj.begin(), nbj.end(), i) != nbj.end());
        }
    }
}

TEST_CASE("query result independent of insertion order") {
    std::mt19937_64 rng(5);
    auto pts = random_cloud(200, rng);
    std::vector<int> perm(200);
    for (int i = 0; i < 200; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> shuffled(pts.size());
    for (int i = 0; i < 200; ++i)
        for (int d = 0; d < 3; ++d) shuffled[3 * i + d] = pts[3 * perm[i] + d];

    HashGrid a = HashGrid::build(pts, 0.1);
    HashGrid b = HashGrid::build(shuffled, 0.1);
    Vec3 q = {1.0, 1.0, 1.0};
    auto na = a.radius_neighbors(q, 0.3);
    auto nb = b.radius_neighbors(q, 0.3);
    // map shuffled indices back
    std::vector<int> nb_mapped;
    for (int j : nb) nb_mapped.push_back(perm[j]);
    std::sort(nb_mapped.begin(), nb_mapped.end());
    CHECK(na == nb_mapped);
}

TEST_CASE("voxelize: coincident points average their features") {
    std::vector<double> pts = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    std::vector<double> feats = {2.0, 4.0};
    VoxelMap vm = voxelize(pts, feats, 1, 0.2);
    REQUIRE(vm.voxel_coords.size() == 1);
    CHECK(vm.mean_feats[0][0] == 3.0);
    CHECK(vm.members[0] == std::vector<int>{0, 1});
}

TEST_CASE("voxelize: huge voxel swallows the whole cloud") {
    std::mt19937_64 rng(6);
    auto pts = random_cloud(50, rng);
    std::vector<double> feats(50, 1.0);
    VoxelMap vm = voxelize(pts, feats, 1, 100.0);
    CHECK(vm.voxel_coords.size() == 1);
    CHECK(vm.members[0].size() == 50);
}

TEST_CASE("voxelize: empty input gives an empty map") {
    VoxelMap vm = voxelize({}, {}, 3, 0.1);
    CHECK(vm.voxel_coords.empty());
}

TEST_CASE("voxelize mean equals a groupby oracle and order is lexicographic") {
    std::mt19937_64 rng(7);
    auto pts = random_cloud(500, rng);
    std::vector<double> feats(500 * 2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& f : feats) f = u(rng);
    double vs = 0.3;
    VoxelMap vm = voxelize(pts, feats, 2, vs);

    // oracle: map keyed by floored coordinates
    std::map<std::array<int64_t, 3>, std::vector<int>> groups;
    for (int i = 0; i < 500; ++i)
        groups[{static_cast<int64_t>(std::floor(pts[3 * i] / vs)),
                static_cast<int64_t>(std::floor(pts[3 * i + 1] / vs)),
                static_cast<int64_t>(std::floor(pts[3 * i + 2] / vs))}]
            .push_back(i);
    REQUIRE(vm.voxel_coords.size() == groups.size());
    size_t vi = 0;
    for (const auto& [key, members] : groups) {
        CHECK(vm.voxel_coords[vi].x == key[0]);
        CHECK(vm.members[vi] == members);
        for (int d = 0; d < 2; ++d) {
            double mean = 0;
            for (int i : members) mean += feats[2 * i + d];
            mean /= static_cast<double>(members.size());
            CHECK(vm.mean_feats[vi][d] == doctest::Approx(mean).epsilon(1e-12));
        }
        ++vi;
    }
}

TEST_CASE("voxelization is translation-consistent") {
    std::mt19937_64 rng(8);
    auto pts = random_cloud(300, rng);
    double vs = 0.25;
    std::vector<double> feats(300, 1.0);
    VoxelMap a = voxelize(pts, feats, 1, vs);
    auto shifted = pts;
    for (size_t i = 0; i < shifted.size(); i += 3) shifted[i] += 3 * vs;  // exact multiple
    VoxelMap b = voxelize(shifted, feats, 1, vs);
    REQUIRE(a.voxel_coords.size() == b.voxel_coords.size());
    for (size_t i = 0; i < a.voxel_coords.size(); ++i) {
        CHECK(b.voxel_coords[i].x == a.voxel_coords[i].x + 3);
        CHECK(b.voxel_coords[i].y == a.voxel_coords[i].y);
        CHECK(b.members[i] == a.members[i]);
    }
}
