#include "dyco/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace dyco::data {

namespace fs = std::filesystem;

void validate_scene(const Scene& s) {
    size_t n = s.coords.size() / 3;
    if (s.coords.size() % 3 != 0) throw DataError("scene " + s.id + ": coords not a multiple of 3");
    if (s.sem_labels.size() != n || s.inst_labels.size() != n)
        throw DataError("scene " + s.id + ": label arrays disagree with point count");
    if (s.feats.size() != n * static_cast<size_t>(s.feat_dim))
        throw DataError("scene " + s.id + ": feature array disagrees with point count");
    std::set<int> ids;
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.coords[3 * i]) || !std::isfinite(s.coords[3 * i + 1]) ||
            !std::isfinite(s.coords[3 * i + 2]))
            throw DataError("scene " + s.id + ": non-finite coordinate at point " + std::to_string(i));
        if (s.inst_labels[i] >= 0 && s.sem_labels[i] < 0)
            throw DataError("scene " + s.id + ": point " + std::to_string(i) +
                            " has an instance but no semantic label");
        if (s.inst_labels[i] >= 0) ids.insert(s.inst_labels[i]);
    }
    int expect = 0;
    for (int id : ids)
        if (id != expect++)
            throw DataError("scene " + s.id + ": instance ids are not contiguous from 0");
}

std::vector<InstanceGT> instances_of(const Scene& s) {
    int n = s.num_points();
    int max_id = -1;
    for (int i = 0; i < n; ++i) max_id = std::max(max_id, s.inst_labels[i]);
    std::vector<InstanceGT> out(max_id + 1);
    for (int k = 0; k <= max_id; ++k) out[k].id = k;
    for (int i = 0; i < n; ++i) {
        int id = s.inst_labels[i];
        if (id < 0) continue;
        out[id].members.push_back(i);
        out[id].sem_label = s.sem_labels[i];
        for (int d = 0; d < 3; ++d) out[id].centroid[d] += s.coords[3 * i + d];
    }
    for (auto& g : out) {
        if (g.members.empty()) throw DataError("scene " + s.id + ": empty instance " + std::to_string(g.id));
        for (int d = 0; d < 3; ++d) g.centroid[d] /= static_cast<double>(g.members.size());
    }
    return out;
}

// ---- synthetic generation ------------------------------------------------

namespace {

Vec3 sample_box_surface(std::mt19937_64& rng, const Vec3& half) {
    // faces weighted by area
    double ax = half[1] * half[2], ay = half[0] * half[2], az = half[0] * half[1];
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double pick = u(rng) * (ax + ay + az);
    std::uniform_real_distribution<double> s(-1.0, 1.0);
    double sign = u(rng) < 0.5 ? -1.0 : 1.0;
    if (pick < ax) return {sign * half[0], s(rng) * half[1], s(rng) * half[2]};
    if (pick < ax + ay) return {s(rng) * half[0], sign * half[1], s(rng) * half[2]};
    return {s(rng) * half[0], s(rng) * half[1], sign * half[2]};
}

Vec3 sample_sphere_surface(std::mt19937_64& rng, double radius) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v{g(rng), g(rng), g(rng)};
    double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (norm < 1e-12) return {radius, 0, 0};
    for (double& c : v) c *= radius / norm;
    return v;
}

Vec3 sample_cylinder_surface(std::mt19937_64& rng, double radius, double half_h) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double side = 2.0 * M_PI * radius * 2.0 * half_h;
    double cap = M_PI * radius * radius;
    double pick = u(rng) * (side + 2.0 * cap);
    double phi = u(rng) * 2.0 * M_PI;
    if (pick < side)
        return {radius * std::cos(phi), radius * std::sin(phi), (2.0 * u(rng) - 1.0) * half_h};
    double rr = radius * std::sqrt(u(rng));
    double z = pick < side + cap ? half_h : -half_h;
    return {rr * std::cos(phi), rr * std::sin(phi), z};
}

Vec3 class_color(int cls, int background_label) {
    if (cls == background_label) return {0.5, 0.5, 0.5};
    switch (cls % 3) {
        case 0: return {0.85, 0.2, 0.15};
        case 1: return {0.15, 0.8, 0.2};
        default: return {0.2, 0.25, 0.85};
    }
}

}  // namespace

std::vector<Scene> generate_synthetic(const SynthConfig& cfg) {
    if (cfg.min_instances > cfg.max_instances || cfg.min_points > cfg.max_points)
        throw ConfigError("synthetic: min exceeds max in a range");
    if (cfg.classes < 1) throw ConfigError("synthetic: need at least one class");

    std::vector<Scene> scenes;
    for (int si = 0; si < cfg.num_scenes; ++si) {
        // per-scene derived seed so scenes are independent of each other
        std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0xda3e39cb94b95bdbull + si);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

        Scene s;
        s.feat_dim = 3;
        std::ostringstream id;
        id << "synth_" << cfg.seed << "_" << si;
        s.id = id.str();

        int num_inst = cfg.min_instances +
                       static_cast<int>(u(rng) * (cfg.max_instances - cfg.min_instances + 1));
        num_inst = std::min(num_inst, cfg.max_instances);

        std::vector<Vec3> centers;
        const double wall = 0.8;
        for (int k = 0; k < num_inst; ++k) {
            int cls = static_cast<int>(u(rng) * cfg.classes);
            cls = std::min(cls, cfg.classes - 1);
            double size = 0.09 + 0.07 * u(rng);  // characteristic half-extent

            Vec3 ctr;
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                ctr = {wall + u(rng) * (cfg.room[0] - 2 * wall),
                       wall + u(rng) * (cfg.room[1] - 2 * wall),
                       size + 0.1 + u(rng) * std::max(0.1, cfg.room[2] - 2 * size - 0.4)};
                placed = true;
                for (const Vec3& c : centers) {
                    double dx = c[0] - ctr[0], dy = c[1] - ctr[1], dz = c[2] - ctr[2];
                    if (std::sqrt(dx * dx + dy * dy + dz * dz) < cfg.separation) {
                        placed = false;
                        break;
                    }
                }
            }
            if (!placed)
                throw DataError("synthetic: could not place instance " + std::to_string(k) +
                                " in scene " + s.id + " without overlap");
            centers.push_back(ctr);

            int npts = cfg.min_points + static_cast<int>(u(rng) * (cfg.max_points - cfg.min_points + 1));
            npts = std::min(npts, cfg.max_points);
            Vec3 half{size, size * (0.7 + 0.6 * u(rng)), size * (0.7 + 0.6 * u(rng))};
            double cyl_r = size * 0.7, cyl_h = size;
            Vec3 base = class_color(cls, cfg.classes);
            for (int p = 0; p < npts; ++p) {
                Vec3 q;
                switch (cls % 3) {
                    case 0: q = sample_box_surface(rng, half); break;
                    case 1: q = sample_sphere_surface(rng, size); break;
                    default: q = sample_cylinder_surface(rng, cyl_r, cyl_h); break;
                }
                for (int d = 0; d < 3; ++d) s.coords.push_back(ctr[d] + q[d] + noise(rng));
                for (int d = 0; d < 3; ++d)
                    s.feats.push_back(std::clamp(base[d] + cfg.color_noise * (2.0 * u(rng) - 1.0), 0.0, 1.0));
                s.sem_labels.push_back(cls);
                s.inst_labels.push_back(k);
            }
        }

        Vec3 floor_col = class_color(cfg.classes, cfg.classes);
        for (int p = 0; p < cfg.floor_points; ++p) {
            s.coords.push_back(u(rng) * cfg.room[0]);
            s.coords.push_back(u(rng) * cfg.room[1]);
            s.coords.push_back(std::fabs(noise(rng)));
            for (int d = 0; d < 3; ++d)
                s.feats.push_back(std::clamp(floor_col[d] + cfg.color_noise * (2.0 * u(rng) - 1.0), 0.0, 1.0));
            s.sem_labels.push_back(cfg.classes);  // background class
            s.inst_labels.push_back(-1);
        }

        validate_scene(s);
        scenes.push_back(std::move(s));
    }
    return scenes;
}

// ---- augmentation --------------------------------------------------------

Vec3 scene_center(const Scene& s) {
    Vec3 c{0, 0, 0};
    int n = s.num_points();
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d) c[d] += s.coords[3 * i + d];
    for (double& v : c) v /= std::max(1, n);
    return c;
}

Scene rotate_z(const Scene& s, double theta, const Vec3& center) {
    Scene out = s;
    double c = std::cos(theta), sn = std::sin(theta);
    int n = s.num_points();
    for (int i = 0; i < n; ++i) {
        double x = s.coords[3 * i] - center[0];
        double y = s.coords[3 * i + 1] - center[1];
        out.coords[3 * i] = center[0] + c * x - sn * y;
        out.coords[3 * i + 1] = center[1] + sn * x + c * y;
    }
    return out;
}

Scene flip_axis(const Scene& s, int axis, double plane) {
    if (axis < 0 || axis > 2) throw ConfigError("flip_axis: axis must be 0..2");
    Scene out = s;
    int n = s.num_points();
    for (int i = 0; i < n; ++i) out.coords[3 * i + axis] = 2.0 * plane - s.coords[3 * i + axis];
    return out;
}

namespace {

Scene apply_crop(const Scene& s, std::mt19937_64& rng, const AugmentConfig& cfg) {
    int n = s.num_points();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], s.coords[3 * i + d]);
            hi[d] = std::max(hi[d], s.coords[3 * i + d]);
        }

    for (int attempt = 0; attempt < 10; ++attempt) {
        Vec3 clo = lo, chi = hi;
        for (int d = 0; d < 2; ++d) {  // crop in x/y only
            double extent = hi[d] - lo[d];
            double frac = 0.7 + 0.3 * u(rng);
            double off = u(rng) * extent * (1.0 - frac);
            clo[d] = lo[d] + off;
            chi[d] = clo[d] + extent * frac;
        }
        std::vector<int> keep;
        for (int i = 0; i < n; ++i) {
            bool inside = true;
            for (int d = 0; d < 3; ++d)
                inside = inside && s.coords[3 * i + d] >= clo[d] && s.coords[3 * i + d] <= chi[d];
            if (inside) keep.push_back(i);
        }
        if (static_cast<double>(keep.size()) < cfg.min_keep * n ||
            static_cast<int>(keep.size()) < cfg.min_points_after)
            continue;

        Scene out;
        out.id = s.id;
        out.feat_dim = s.feat_dim;
        std::map<int, int> remap;  // old instance id -> new contiguous id
        for (int i : keep)
            if (s.inst_labels[i] >= 0) remap.emplace(s.inst_labels[i], 0);
        int next = 0;
        for (auto& [old_id, new_id] : remap) new_id = next++;
        for (int i : keep) {
            for (int d = 0; d < 3; ++d) out.coords.push_back(s.coords[3 * i + d]);
            for (int d = 0; d < s.feat_dim; ++d)
                out.feats.push_back(s.feats[static_cast<size_t>(i) * s.feat_dim + d]);
            out.sem_labels.push_back(s.sem_labels[i]);
            out.inst_labels.push_back(s.inst_labels[i] >= 0 ? remap[s.inst_labels[i]] : -1);
        }
        return out;
    }
    std::cerr << "warning: crop skipped for scene " << s.id << " (too few points would survive)\n";
    return s;
}

}  // namespace

Scene augment(const Scene& s, uint64_t seed, const AugmentConfig& cfg) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Scene out = s;
    Vec3 c = scene_center(s);
    if (cfg.rotate) out = rotate_z(out, u(rng) * 2.0 * M_PI, c);
    if (cfg.flip) {
        if (u(rng) < 0.5) out = flip_axis(out, 0, c[0]);
        if (u(rng) < 0.5) out = flip_axis(out, 1, c[1]);
    }
    if (cfg.crop) out = apply_crop(out, rng, cfg);
    validate_scene(out);
    return out;
}

// ---- manifest ------------------------------------------------------------

std::vector<std::string> read_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw DataError("cannot open manifest " + manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        out.push_back((base / line).string());
    }
    return out;
}

void write_manifest(const std::string& manifest_path, const std::vector<std::string>& names) {
    std::ofstream os(manifest_path);
    if (!os) throw DataError("cannot open manifest " + manifest_path + " for writing");
    for (const std::string& n : names) os << n << "\n";
}

std::vector<Scene> load_dataset(const std::string& manifest_path) {
    std::vector<Scene> scenes;
    for (const std::string& p : read_manifest(manifest_path)) {
        Scene s = load_ply(p);
        validate_scene(s);
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace dyco::data
