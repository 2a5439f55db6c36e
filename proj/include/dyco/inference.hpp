#pragma once

// Final instance assembly: scoring, size filtering, NMS, box fitting, and
// the newline-delimited prediction dump format (scene id, category, score,
// run-length encoded point indices).

#include <array>
#include <string>
#include <vector>

#include "dyco/scene.hpp"

namespace dyco::infer {

using Vec3 = std::array<double, 3>;

struct MaskPrediction {
    int cluster_id = -1;
    int label = -1;
    std::vector<int> foreground;  // ascending point indices, sigmoid > 0.5
};

struct FinalInstance {
    std::vector<int> mask;  // ascending point indices
    int category = -1;
    double score = 0;
    Vec3 box_min{}, box_max{};
};

// Mean softmax probability of the prediction's own class over foreground
// points. seg_probs is N x num_classes row-major.
double score_prediction(const MaskPrediction& pred, const std::vector<double>& seg_probs,
                        int num_classes);

// |a n b| / |a u b| over sorted index sets; 0 when both are empty.
double mask_iou(const std::vector<int>& a, const std::vector<int>& b);

// Greedy class-agnostic suppression; sorts by (score desc, id asc) and
// drops masks with IoU strictly above the threshold against a kept one.
// Returns positions into the input vectors, in kept order.
std::vector<int> nms(const std::vector<std::vector<int>>& masks, const std::vector<double>& scores,
                     const std::vector<int>& ids, double iou_thr);

struct FinalizeConfig {
    int min_points = 50;    // inclusive: masks with >= min_points survive
    double nms_iou = 0.3;
};

std::vector<FinalInstance> finalize(const data::Scene& scene, std::vector<MaskPrediction> preds,
                                    const std::vector<double>& seg_probs, int num_classes,
                                    const FinalizeConfig& cfg = {});

Vec3 fit_box_min(const data::Scene& scene, const std::vector<int>& mask);
Vec3 fit_box_max(const data::Scene& scene, const std::vector<int>& mask);

// ---- prediction dump -----------------------------------------------------

struct InstanceRecord {
    std::string scene_id;
    int category = -1;
    double score = 1.0;
    std::vector<int> mask;
};

std::string rle_encode(const std::vector<int>& sorted_indices);
std::vector<int> rle_decode(const std::string& text);

void dump_records(const std::string& path, const std::vector<InstanceRecord>& records);
std::vector<InstanceRecord> load_records(const std::string& path);

}  // namespace dyco::infer
