#pragma once

// BFS clustering of homogeneous points: identical predicted label and
// shifted positions within radius r of each other (closed ball).

#include <array>
#include <set>
#include <vector>

#include "dyco/errors.hpp"

namespace dyco::group {

using Vec3 = std::array<double, 3>;

struct Cluster {
    int id = -1;
    int label = -1;
    std::vector<int> members;  // ascending point indices
    Vec3 centroid{};           // mean of ORIGINAL coordinates by default
};

// p_ctr = p + o_off, elementwise.
std::vector<double> shift_points(const std::vector<double>& coords,
                                 const std::vector<double>& offsets);

// Connected components per label over the radius-r graph on shifted
// coordinates. Components below min_size are dropped; ignored labels are
// excluded entirely. Output ordered by (label, smallest member index),
// ids assigned in that order. Centroids are left zeroed; fill them with
// cluster_stats against the coordinate set of your choice.
std::vector<Cluster> group_points(const std::vector<double>& shifted,
                                  const std::vector<int>& labels, double r, int min_size,
                                  const std::set<int>& ignore_labels);

// Shared label and mean coordinate of a cluster's members. Throws on an
// empty cluster or mixed labels.
std::pair<int, Vec3> cluster_stats(const std::vector<int>& members,
                                   const std::vector<double>& coords,
                                   const std::vector<int>& labels);

}  // namespace dyco::group
