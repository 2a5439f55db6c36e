#include "dyco/grouping.hpp"

#include <algorithm>
#include <map>

#include "dyco/spatial.hpp"

namespace dyco::group {

std::vector<double> shift_points(const std::vector<double>& coords,
                                 const std::vector<double>& offsets) {
    if (coords.size() != offsets.size())
        throw ShapeError("shift: coords and offsets disagree, " + std::to_string(coords.size()) +
                         " vs " + std::to_string(offsets.size()));
    std::vector<double> out(coords.size());
    for (size_t i = 0; i < coords.size(); ++i) out[i] = coords[i] + offsets[i];
    return out;
}

std::vector<Cluster> group_points(const std::vector<double>& shifted,
                                  const std::vector<int>& labels, double r, int min_size,
                                  const std::set<int>& ignore_labels) {
    if (shifted.size() != labels.size() * 3)
        throw ShapeError("group: expected " + std::to_string(labels.size()) +
                         " labelled points, got " + std::to_string(shifted.size() / 3));
    if (r <= 0) throw ConfigError("group: radius must be positive");
    if (min_size < 1) throw ConfigError("group: min_size must be >= 1");

    std::map<int, std::vector<int>> by_label;
    for (size_t i = 0; i < labels.size(); ++i)
        if (!ignore_labels.count(labels[i])) by_label[labels[i]].push_back(static_cast<int>(i));

    std::vector<Cluster> out;
    for (auto& [label, pts] : by_label) {
        std::vector<double> sub(pts.size() * 3);
        for (size_t s = 0; s < pts.size(); ++s)
            for (int c = 0; c < 3; ++c) sub[3 * s + c] = shifted[3 * static_cast<size_t>(pts[s]) + c];
        auto grid = spatial::HashGrid::build(sub, r);

        std::vector<char> seen(pts.size(), 0);
        for (size_t s = 0; s < pts.size(); ++s) {
            if (seen[s]) continue;
            std::vector<int> frontier{static_cast<int>(s)}, comp;
            seen[s] = 1;
            while (!frontier.empty()) {
                int cur = frontier.back();
                frontier.pop_back();
                comp.push_back(pts[cur]);
                spatial::Vec3 q{sub[3 * cur], sub[3 * cur + 1], sub[3 * cur + 2]};
                for (int nb : grid.radius_neighbors(q, r)) {
                    if (!seen[nb]) {
                        seen[nb] = 1;
                        frontier.push_back(nb);
                    }
                }
            }
            if (static_cast<int>(comp.size()) < min_size) continue;
            std::sort(comp.begin(), comp.end());
            Cluster c;
            c.label = label;
            c.members = std::move(comp);
            out.push_back(std::move(c));
        }
    }
    std::sort(out.begin(), out.end(), [](const Cluster& a, const Cluster& b) {
        if (a.label != b.label) return a.label < b.label;
        return a.members.front() < b.members.front();
    });
    for (size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i);
    return out;
}

std::pair<int, Vec3> cluster_stats(const std::vector<int>& members,
                                   const std::vector<double>& coords,
                                   const std::vector<int>& labels) {
    if (members.empty()) throw DataError("cluster_stats: empty cluster");
    int label = labels[members[0]];
    Vec3 ctr{};
    for (int i : members) {
        if (labels[i] != label)
            throw LabelError("cluster_stats: mixed labels " + std::to_string(label) + " and " +
                             std::to_string(labels[i]));
        for (int c = 0; c < 3; ++c) ctr[c] += coords[3 * static_cast<size_t>(i) + c];
    }
    for (int c = 0; c < 3; ++c) ctr[c] /= static_cast<double>(members.size());
    return {label, ctr};
}

}  // namespace dyco::group
