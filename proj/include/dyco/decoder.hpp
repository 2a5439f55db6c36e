#pragma once

// Instance decoding: run the dynamically parameterized 3-layer 1x1 network
// over position-embedded features of the cluster's category scope.

#include <vector>

#include "dyco/grouping.hpp"
#include "dyco/scene.hpp"
#include "dyco/tensor.hpp"
#include "dyco/weight_generator.hpp"

namespace dyco::model {

// f_pos^i = p^i - centroid, as an untracked constant tensor.
ad::Tensor position_embed(const std::vector<double>& coords, const group::Vec3& centroid);

// Rowwise [mask | position] concatenation.
ad::Tensor assemble(const ad::Tensor& mask_feats, const ad::Tensor& pos_feats);

// Logits for the given rows of f_z under the flat weight vector; slices
// (W1,b1,W2,b2,W3,b3) per the layout. Output shape [rows].
ad::Tensor dynamic_forward(const ad::Tensor& weights, const WeightLayout& layout,
                           const ad::Tensor& features);

// Plurality ground-truth instance among the cluster's members; ties break
// to the smaller instance id; -1 when the plurality is "no instance".
int assign_gt(const group::Cluster& cluster, const std::vector<int>& inst_labels);

// One decoded cluster during training: logits restricted to the points
// whose predicted label matches the cluster's, plus their binary targets.
struct ClusterDecode {
    int cluster_id = -1;
    std::vector<int> scope;       // matching-label point indices
    ad::Tensor logits;            // [scope.size()]
    std::vector<double> targets;  // same length, 0/1
};

struct MaskLosses {
    ad::Tensor bce;   // Eq-style per-cluster normalized BCE, mean over clusters
    ad::Tensor dice;  // squared-denominator dice, mean over clusters
    int used_clusters = 0;
};

// Clusters with an empty scope are skipped from both means; with no usable
// cluster both losses are exact zeros.
MaskLosses mask_losses(ad::Session& sess, const std::vector<ClusterDecode>& decodes,
                       double dice_eps = 1e-6);

}  // namespace dyco::model
