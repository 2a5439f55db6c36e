#include "dyco/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace dyco::eval {

namespace {

// Generic greedy AP: predictions sorted by score, matched to the unmatched
// same-scene GT with the highest IoU >= thr.
template <typename Pred, typename Gt, typename IouFn>
std::optional<double> greedy_ap(const std::vector<Pred>& preds, const std::vector<Gt>& gts,
                                double iou_thr, int category, const IouFn& iou) {
    std::vector<int> gt_idx;
    for (size_t i = 0; i < gts.size(); ++i)
        if (gts[i].category == category) gt_idx.push_back(static_cast<int>(i));
    if (gt_idx.empty()) return std::nullopt;

    std::vector<int> pred_idx;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i].category == category) pred_idx.push_back(static_cast<int>(i));
    std::stable_sort(pred_idx.begin(), pred_idx.end(),
                     [&](int a, int b) { return preds[a].score > preds[b].score; });

    std::vector<char> matched(gt_idx.size(), 0);
    std::vector<char> tp(pred_idx.size(), 0);
    for (size_t pi = 0; pi < pred_idx.size(); ++pi) {
        const Pred& p = preds[pred_idx[pi]];
        int best = -1;
        double best_iou = 0;
        for (size_t gi = 0; gi < gt_idx.size(); ++gi) {
            if (matched[gi]) continue;
            const Gt& g = gts[gt_idx[gi]];
            if (g.scene_id != p.scene_id) continue;
            double v = iou(p, g);
            if (v >= iou_thr && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(gi);
            }
        }
        if (best >= 0) {
            matched[best] = 1;
            tp[pi] = 1;
        }
    }

    // All-point interpolation: area under the monotone precision envelope.
    double total_gt = static_cast<double>(gt_idx.size());
    std::vector<double> precs, recs;
    int tps = 0;
    for (size_t i = 0; i < pred_idx.size(); ++i) {
        if (tp[i]) ++tps;
        precs.push_back(static_cast<double>(tps) / static_cast<double>(i + 1));
        recs.push_back(static_cast<double>(tps) / total_gt);
    }
    for (int i = static_cast<int>(precs.size()) - 2; i >= 0; --i)
        precs[i] = std::max(precs[i], precs[i + 1]);
    double ap = 0, prev_rec = 0;
    for (size_t i = 0; i < precs.size(); ++i) {
        ap += (recs[i] - prev_rec) * precs[i];
        prev_rec = recs[i];
    }
    return ap;
}

double record_iou(const InstanceRecord& a, const InstanceRecord& b) {
    return infer::mask_iou(a.mask, b.mask);
}

}  // namespace

std::optional<double> instance_ap(const std::vector<InstanceRecord>& preds,
                                  const std::vector<InstanceRecord>& gts, double iou_thr,
                                  int category) {
    return greedy_ap(preds, gts, iou_thr, category, record_iou);
}

std::optional<Coverage> coverage_metrics(const std::vector<InstanceRecord>& preds,
                                         const std::vector<InstanceRecord>& gts, double iou_thr) {
    if (gts.empty()) return std::nullopt;
    Coverage cov;
    double wsum = 0, wtotal = 0;
    int recalled = 0;
    for (const auto& g : gts) {
        double best = 0;
        for (const auto& p : preds) {
            if (p.scene_id != g.scene_id) continue;
            best = std::max(best, record_iou(p, g));
        }
        cov.mCov += best;
        wsum += best * static_cast<double>(g.mask.size());
        wtotal += static_cast<double>(g.mask.size());
        if (best >= iou_thr) ++recalled;
    }
    cov.mCov /= static_cast<double>(gts.size());
    cov.mWCov = wtotal > 0 ? wsum / wtotal : 0.0;
    cov.mRec = static_cast<double>(recalled) / static_cast<double>(gts.size());

    if (!preds.empty()) {
        int hit = 0;
        for (const auto& p : preds) {
            double best = 0;
            for (const auto& g : gts) {
                if (p.scene_id != g.scene_id) continue;
                best = std::max(best, record_iou(p, g));
            }
            if (best >= iou_thr) ++hit;
        }
        cov.mPrec = static_cast<double>(hit) / static_cast<double>(preds.size());
    }
    return cov;
}

double box_iou(const Vec3& amin, const Vec3& amax, const Vec3& bmin, const Vec3& bmax) {
    double inter = 1, va = 1, vb = 1;
    for (int c = 0; c < 3; ++c) {
        inter *= std::max(0.0, std::min(amax[c], bmax[c]) - std::max(amin[c], bmin[c]));
        va *= std::max(0.0, amax[c] - amin[c]);
        vb *= std::max(0.0, bmax[c] - bmin[c]);
    }
    double uni = va + vb - inter;
    if (uni <= 0) return amin == bmin && amax == bmax ? 1.0 : 0.0;
    return inter / uni;
}

std::optional<double> detection_ap(const std::vector<BoxRecord>& preds,
                                   const std::vector<BoxRecord>& gts, double iou_thr,
                                   int category) {
    return greedy_ap(preds, gts, iou_thr, category, [](const BoxRecord& a, const BoxRecord& b) {
        return box_iou(a.box_min, a.box_max, b.box_min, b.box_max);
    });
}

EvalReport evaluate_records(const std::vector<InstanceRecord>& preds,
                            const std::vector<InstanceRecord>& gts,
                            const std::vector<data::Scene>& scenes, int num_categories) {
    EvalReport r;
    double s25 = 0, s50 = 0, smap = 0;
    for (int c = 0; c < num_categories; ++c) {
        auto ap50 = instance_ap(preds, gts, 0.50, c);
        if (!ap50) continue;
        auto ap25 = instance_ap(preds, gts, 0.25, c);
        double sum = 0;
        int n = 0;
        for (double thr = 0.50; thr < 0.951; thr += 0.05) {
            sum += *instance_ap(preds, gts, thr, c);
            ++n;
        }
        r.ap25_per_class[c] = *ap25;
        r.ap50_per_class[c] = *ap50;
        r.map_per_class[c] = sum / n;
        s25 += *ap25;
        s50 += *ap50;
        smap += sum / n;
        ++r.classes_with_gt;
    }
    if (r.classes_with_gt > 0) {
        r.ap25 = s25 / r.classes_with_gt;
        r.ap50 = s50 / r.classes_with_gt;
        r.mAP = smap / r.classes_with_gt;
    }
    r.coverage = coverage_metrics(preds, gts, 0.5);

    std::map<std::string, const data::Scene*> by_id;
    for (const auto& s : scenes) by_id[s.id] = &s;
    auto to_boxes = [&](const std::vector<InstanceRecord>& recs) {
        std::vector<BoxRecord> out;
        for (const auto& rec : recs) {
            auto it = by_id.find(rec.scene_id);
            if (it == by_id.end())
                throw DataError("evaluate: unknown scene id '" + rec.scene_id + "'");
            BoxRecord b;
            b.scene_id = rec.scene_id;
            b.category = rec.category;
            b.score = rec.score;
            b.box_min = infer::fit_box_min(*it->second, rec.mask);
            b.box_max = infer::fit_box_max(*it->second, rec.mask);
            out.push_back(std::move(b));
        }
        return out;
    };
    auto pb = to_boxes(preds);
    auto gb = to_boxes(gts);
    double d25 = 0, d50 = 0;
    int det_classes = 0;
    for (int c = 0; c < num_categories; ++c) {
        auto ap = detection_ap(pb, gb, 0.50, c);
        if (!ap) continue;
        d50 += *ap;
        d25 += *detection_ap(pb, gb, 0.25, c);
        ++det_classes;
    }
    if (det_classes > 0) {
        r.det_ap25 = d25 / det_classes;
        r.det_ap50 = d50 / det_classes;
    }
    return r;
}

std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << "mAP " << r.mAP << "\nAP@50 " << r.ap50 << "\nAP@25 " << r.ap25 << '\n';
    for (const auto& [c, v] : r.map_per_class) os << "class_" << c << "_mAP " << v << '\n';
    for (const auto& [c, v] : r.ap50_per_class) os << "class_" << c << "_AP@50 " << v << '\n';
    for (const auto& [c, v] : r.ap25_per_class) os << "class_" << c << "_AP@25 " << v << '\n';
    if (r.coverage) {
        os << "mCov " << r.coverage->mCov << "\nmWCov " << r.coverage->mWCov << '\n';
        if (r.coverage->mPrec) os << "mPrec " << *r.coverage->mPrec << '\n';
        os << "mRec " << r.coverage->mRec << '\n';
    }
    os << "det_AP@50 " << r.det_ap50 << "\ndet_AP@25 " << r.det_ap25 << '\n';
    os << "classes_with_gt " << r.classes_with_gt << '\n';
    return os.str();
}

}  // namespace dyco::eval
