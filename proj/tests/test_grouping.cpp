#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>

#include "dyco/grouping.hpp"
#include "oracles.hpp"

using namespace dyco;
using namespace dyco::group;

namespace {

struct DSU {
    std::vector<int> p;
    explicit DSU(int n) : p(n) {
        for (int i = 0; i < n; ++i) p[i] = i;
    }
    int find(int x) { return p[x] == x ? x : p[x] = find(p[x]); }
    void unite(int a, int b) { p[find(a)] = find(b); }
};

// O(n^2) union-find oracle with the same keep/order rules.
std::vector<Cluster> group_oracle(const std::vector<double>& pts, const std::vector<int>& labels,
                                  double r, int min_size, const std::set<int>& ignore) {
    int n = static_cast<int>(labels.size());
    DSU dsu(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (labels[i] != labels[j]) continue;
            double d = 0;
            for (int c = 0; c < 3; ++c) d += (pts[3 * i + c] - pts[3 * j + c]) * (pts[3 * i + c] - pts[3 * j + c]);
            if (std::sqrt(d) <= r) dsu.unite(i, j);
        }
    std::map<int, std::vector<int>> comps;
    for (int i = 0; i < n; ++i)
        if (!ignore.count(labels[i])) comps[dsu.find(i)].push_back(i);
    std::vector<Cluster> out;
    for (auto& [root, members] : comps) {
        if (static_cast<int>(members.size()) < min_size) continue;
        Cluster c;
        c.label = labels[members[0]];
        std::sort(members.begin(), members.end());
        c.members = members;
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(), [](const Cluster& a, const Cluster& b) {
        if (a.label != b.label) return a.label < b.label;
        return a.members.front() < b.members.front();
    });
    for (size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i);
    return out;
}

std::vector<double> random_points(int n, uint64_t seed, double extent) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.0, extent);
    std::vector<double> pts(3 * n);
    for (double& v : pts) v = d(rng);
    return pts;
}

}  // namespace

TEST_CASE("shift points elementwise and mismatch error") {
    std::vector<double> c{1, 2, 3, 4, 5, 6}, o{0.1, -0.2, 0.3, 0, 0, -1};
    auto s = shift_points(c, o);
    CHECK(s[0] == doctest::Approx(1.1));
    CHECK(s[5] == doctest::Approx(5.0));
    CHECK_THROWS_AS(shift_points(c, {1, 2}), ShapeError);
}

TEST_CASE("grouping matches the union-find oracle") {
    std::mt19937_64 lab_rng(9);
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        auto pts = random_points(80, seed, 2.0);
        std::vector<int> labels(80);
        for (int& l : labels) l = static_cast<int>(lab_rng() % 4);
        for (double r : {0.15, 0.4, 0.9}) {
            for (int min_size : {1, 4}) {
                std::set<int> ignore{3};
                auto got = group_points(pts, labels, r, min_size, ignore);
                auto want = group_oracle(pts, labels, r, min_size, ignore);
                REQUIRE(got.size() == want.size());
                for (size_t i = 0; i < got.size(); ++i) {
                    CHECK(got[i].id == want[i].id);
                    CHECK(got[i].label == want[i].label);
                    CHECK(got[i].members == want[i].members);
                }
            }
        }
    }
}

TEST_CASE("closed ball: exactly r apart connects") {
    std::vector<double> pts{0, 0, 0, 0.5, 0, 0};
    std::vector<int> labels{0, 0};
    auto cl = group_points(pts, labels, 0.5, 1, {});
    REQUIRE(cl.size() == 1);
    CHECK(cl[0].members == std::vector<int>{0, 1});
}

TEST_CASE("labels split otherwise-connected points") {
    std::vector<double> pts{0, 0, 0, 0.1, 0, 0};
    std::vector<int> labels{0, 1};
    auto cl = group_points(pts, labels, 1.0, 1, {});
    REQUIRE(cl.size() == 2);
    CHECK(cl[0].label == 0);
    CHECK(cl[1].label == 1);
}

TEST_CASE("component count is non-increasing in radius") {
    auto pts = random_points(60, 4, 1.5);
    std::vector<int> labels(60, 0);
    size_t prev = SIZE_MAX;
    for (double r : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
        size_t n = group_points(pts, labels, r, 1, {}).size();
        CHECK(n <= prev);
        prev = n;
    }
    CHECK(group_points(pts, labels, 10.0, 1, {}).size() == 1);
}

TEST_CASE("min_size drops small components, ignore_labels excluded") {
    std::vector<double> pts{0, 0, 0, 0.1, 0, 0, 5, 5, 5, 8, 8, 8};
    std::vector<int> labels{0, 0, 0, 2};
    auto cl = group_points(pts, labels, 0.5, 2, {});
    REQUIRE(cl.size() == 1);
    CHECK(cl[0].members == std::vector<int>{0, 1});
    auto cl2 = group_points(pts, labels, 0.5, 1, {0});
    REQUIRE(cl2.size() == 1);
    CHECK(cl2[0].label == 2);
}

TEST_CASE("grouping validates arguments") {
    std::vector<double> pts{0, 0, 0};
    std::vector<int> labels{0};
    CHECK_THROWS_AS(group_points(pts, labels, 0.0, 1, {}), ConfigError);
    CHECK_THROWS_AS(group_points(pts, labels, 0.5, 0, {}), ConfigError);
    CHECK_THROWS_AS(group_points({0, 0, 0, 1, 1, 1}, labels, 0.5, 1, {}), ShapeError);
}

TEST_CASE("cluster stats: mean, mixed labels, empty") {
    std::vector<double> coords{0, 0, 0, 2, 4, 6, 4, 2, 0};
    std::vector<int> labels{1, 1, 1};
    auto [label, ctr] = cluster_stats({0, 1, 2}, coords, labels);
    CHECK(label == 1);
    CHECK(ctr[0] == doctest::Approx(2.0));
    CHECK(ctr[1] == doctest::Approx(2.0));
    CHECK(ctr[2] == doctest::Approx(2.0));

    labels[2] = 0;
    CHECK_THROWS_AS(cluster_stats({0, 1, 2}, coords, labels), LabelError);
    CHECK_THROWS_AS(cluster_stats({}, coords, labels), DataError);
}
