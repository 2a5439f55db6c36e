#pragma once

// Instance-segmentation AP, coverage/precision metrics and detection AP
// over fitted axis-aligned boxes.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dyco/inference.hpp"

namespace dyco::eval {

using infer::InstanceRecord;
using infer::Vec3;

struct BoxRecord {
    std::string scene_id;
    int category = -1;
    double score = 1.0;
    Vec3 box_min{}, box_max{};
};

// Greedy score-ordered matching to the unmatched same-class GT with the
// highest IoU >= iou_thr, then area under the monotone precision envelope.
// Returns nullopt when the class has no ground truth.
std::optional<double> instance_ap(const std::vector<InstanceRecord>& preds,
                                  const std::vector<InstanceRecord>& gts, double iou_thr,
                                  int category);

struct Coverage {
    double mCov = 0;
    double mWCov = 0;
    std::optional<double> mPrec;  // absent when there are no predictions
    double mRec = 0;
};

// Instance-wise coverage over GT, with mPrec/mRec thresholded at iou_thr.
// Undefined (nullopt) when there is no ground truth at all.
std::optional<Coverage> coverage_metrics(const std::vector<InstanceRecord>& preds,
                                         const std::vector<InstanceRecord>& gts,
                                         double iou_thr = 0.5);

double box_iou(const Vec3& amin, const Vec3& amax, const Vec3& bmin, const Vec3& bmax);

std::optional<double> detection_ap(const std::vector<BoxRecord>& preds,
                                   const std::vector<BoxRecord>& gts, double iou_thr, int category);

struct EvalReport {
    std::map<int, double> ap25_per_class, ap50_per_class, map_per_class;
    double ap25 = 0, ap50 = 0, mAP = 0;  // macro means over classes with GT
    std::optional<Coverage> coverage;
    double det_ap25 = 0, det_ap50 = 0;
    int classes_with_gt = 0;
};

// Full report over prediction/GT record sets; boxes are fitted from masks
// on both sides with the provided scenes.
EvalReport evaluate_records(const std::vector<InstanceRecord>& preds,
                            const std::vector<InstanceRecord>& gts,
                            const std::vector<data::Scene>& scenes, int num_categories);

// Structured key-value text, one "key value" pair per line.
std::string report_text(const EvalReport& r);

}  // namespace dyco::eval
