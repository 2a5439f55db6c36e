#include "dyco/inference.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dyco::infer {

double score_prediction(const MaskPrediction& pred, const std::vector<double>& seg_probs,
                        int num_classes) {
    if (pred.foreground.empty()) return 0.0;
    if (pred.label < 0 || pred.label >= num_classes)
        throw LabelError("score: category " + std::to_string(pred.label) + " outside [0," +
                         std::to_string(num_classes) + ")");
    double s = 0;
    for (int i : pred.foreground)
        s += seg_probs[static_cast<size_t>(i) * num_classes + pred.label];
    return s / static_cast<double>(pred.foreground.size());
}

double mask_iou(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() && b.empty()) return 0.0;
    size_t ia = 0, ib = 0, inter = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] == b[ib]) {
            ++inter;
            ++ia;
            ++ib;
        } else if (a[ia] < b[ib]) {
            ++ia;
        } else {
            ++ib;
        }
    }
    size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> nms(const std::vector<std::vector<int>>& masks, const std::vector<double>& scores,
                     const std::vector<int>& ids, double iou_thr) {
    if (masks.size() != scores.size() || masks.size() != ids.size())
        throw ShapeError("nms: masks, scores and ids must align");
    std::vector<int> order(masks.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<int> kept;
    for (int i : order) {
        bool drop = false;
        for (int k : kept) {
            if (mask_iou(masks[i], masks[k]) > iou_thr) {
                drop = true;
                break;
            }
        }
        if (!drop) kept.push_back(i);
    }
    return kept;
}

Vec3 fit_box_min(const data::Scene& scene, const std::vector<int>& mask) {
    if (mask.empty()) throw DataError("box fit: empty mask");
    Vec3 lo = scene.point(mask[0]);
    for (int i : mask)
        for (int c = 0; c < 3; ++c) lo[c] = std::min(lo[c], scene.coords[3 * i + c]);
    return lo;
}

Vec3 fit_box_max(const data::Scene& scene, const std::vector<int>& mask) {
    if (mask.empty()) throw DataError("box fit: empty mask");
    Vec3 hi = scene.point(mask[0]);
    for (int i : mask)
        for (int c = 0; c < 3; ++c) hi[c] = std::max(hi[c], scene.coords[3 * i + c]);
    return hi;
}

std::vector<FinalInstance> finalize(const data::Scene& scene, std::vector<MaskPrediction> preds,
                                    const std::vector<double>& seg_probs, int num_classes,
                                    const FinalizeConfig& cfg) {
    std::vector<MaskPrediction> sized;
    for (auto& p : preds)
        if (static_cast<int>(p.foreground.size()) >= cfg.min_points) sized.push_back(std::move(p));

    std::vector<std::vector<int>> masks;
    std::vector<double> scores;
    std::vector<int> ids;
    for (const auto& p : sized) {
        masks.push_back(p.foreground);
        scores.push_back(score_prediction(p, seg_probs, num_classes));
        ids.push_back(p.cluster_id);
    }
    std::vector<FinalInstance> out;
    for (int i : nms(masks, scores, ids, cfg.nms_iou)) {
        FinalInstance fi;
        fi.mask = std::move(masks[i]);
        fi.category = sized[i].label;
        fi.score = scores[i];
        fi.box_min = fit_box_min(scene, fi.mask);
        fi.box_max = fit_box_max(scene, fi.mask);
        out.push_back(std::move(fi));
    }
    return out;
}

std::string rle_encode(const std::vector<int>& sorted_indices) {
    std::ostringstream os;
    size_t i = 0;
    bool first = true;
    while (i < sorted_indices.size()) {
        size_t j = i;
        while (j + 1 < sorted_indices.size() && sorted_indices[j + 1] == sorted_indices[j] + 1) ++j;
        if (!first) os << ',';
        first = false;
        if (j == i)
            os << sorted_indices[i];
        else
            os << sorted_indices[i] << '-' << sorted_indices[j];
        i = j + 1;
    }
    return os.str();
}

std::vector<int> rle_decode(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string run;
    while (std::getline(ss, run, ',')) {
        if (run.empty()) continue;
        size_t dash = run.find('-', 1);  // position 0 would be a negative number
        try {
            if (dash == std::string::npos) {
                out.push_back(std::stoi(run));
            } else {
                int lo = std::stoi(run.substr(0, dash));
                int hi = std::stoi(run.substr(dash + 1));
                if (hi < lo) throw DataError("rle: descending run '" + run + "'");
                for (int v = lo; v <= hi; ++v) out.push_back(v);
            }
        } catch (const std::invalid_argument&) {
            throw DataError("rle: malformed run '" + run + "'");
        }
    }
    return out;
}

void dump_records(const std::string& path, const std::vector<InstanceRecord>& records) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write predictions to " + path);
    f.precision(17);
    for (const auto& r : records)
        f << r.scene_id << ' ' << r.category << ' ' << r.score << ' ' << rle_encode(r.mask) << '\n';
}

std::vector<InstanceRecord> load_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read predictions from " + path);
    std::vector<InstanceRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        InstanceRecord r;
        std::string rle;
        if (!(is >> r.scene_id >> r.category >> r.score >> rle))
            throw DataError("predictions " + path + ": malformed line " + std::to_string(lineno));
        r.mask = rle_decode(rle);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dyco::infer
