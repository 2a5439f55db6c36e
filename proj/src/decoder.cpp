#include "dyco/decoder.hpp"

#include <algorithm>
#include <map>

namespace dyco::model {

using ad::Tensor;

Tensor position_embed(const std::vector<double>& coords, const group::Vec3& centroid) {
    int n = static_cast<int>(coords.size() / 3);
    std::vector<double> out(coords.size());
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) out[3 * i + c] = coords[3 * i + c] - centroid[c];
    return Tensor::from({n, 3}, std::move(out));
}

Tensor assemble(const Tensor& mask_feats, const Tensor& pos_feats) {
    return ad::concat({mask_feats, pos_feats}, 1);
}

Tensor dynamic_forward(const Tensor& weights, const WeightLayout& layout, const Tensor& features) {
    if (weights.size() != layout.total)
        throw ShapeError("decoder: weight vector has " + std::to_string(weights.size()) +
                         " entries, layout expects " + std::to_string(layout.total));
    int d = layout.feat_dim, h = layout.hidden;
    if (features.cols() != d + 3)
        throw ShapeError("decoder: features must be [rows, " + std::to_string(d + 3) + "], got " +
                         ad::shape_str(features.shape));

    Tensor w1 = ad::reshape(ad::slice_flat(weights, layout.w1_off, layout.w1_len), {d + 3, h});
    Tensor b1 = ad::slice_flat(weights, layout.b1_off, layout.b1_len);
    Tensor w2 = ad::reshape(ad::slice_flat(weights, layout.w2_off, layout.w2_len), {h, h});
    Tensor b2 = ad::slice_flat(weights, layout.b2_off, layout.b2_len);
    Tensor w3 = ad::reshape(ad::slice_flat(weights, layout.w3_off, layout.w3_len), {h, 1});
    Tensor b3 = ad::slice_flat(weights, layout.b3_off, layout.b3_len);

    Tensor x = ad::relu(ad::add(ad::matmul(features, w1), b1));
    x = ad::relu(ad::add(ad::matmul(x, w2), b2));
    Tensor logits = ad::add(ad::matmul(x, w3), b3);
    return ad::reshape(logits, {features.rows()});
}

int assign_gt(const group::Cluster& cluster, const std::vector<int>& inst_labels) {
    if (cluster.members.empty()) throw DataError("assign_gt: empty cluster");
    std::map<int, int> counts;
    for (int i : cluster.members) ++counts[inst_labels[i]];
    int best = -1, best_count = -1;
    for (auto [id, cnt] : counts) {
        if (cnt > best_count) {  // map order means ties keep the smaller id
            best_count = cnt;
            best = id;
        }
    }
    return best;
}

MaskLosses mask_losses(ad::Session& sess, const std::vector<ClusterDecode>& decodes,
                       double dice_eps) {
    (void)sess;
    MaskLosses out;
    Tensor bce_sum, dice_sum;
    for (const auto& d : decodes) {
        if (d.scope.empty()) continue;
        if (static_cast<int64_t>(d.targets.size()) != d.logits.size())
            throw ShapeError("mask loss: cluster " + std::to_string(d.cluster_id) +
                             " logits/targets disagree");
        Tensor bce = ad::reduce_mean(ad::bce_with_logits(d.logits, d.targets));

        Tensor p = ad::sigmoid(d.logits);
        double t2 = 0;
        for (double t : d.targets) t2 += t * t;
        Tensor inter = ad::reduce_sum(
            ad::mul(p, Tensor::from({static_cast<int>(d.targets.size())},
                                    std::vector<double>(d.targets))));
        Tensor den = ad::add_const(ad::reduce_sum(ad::square(p)), t2 + dice_eps);
        Tensor dice = ad::add_const(ad::neg(ad::div(ad::scale(inter, 2.0), den)), 1.0);

        bce_sum = out.used_clusters == 0 ? bce : ad::add(bce_sum, bce);
        dice_sum = out.used_clusters == 0 ? dice : ad::add(dice_sum, dice);
        ++out.used_clusters;
    }
    if (out.used_clusters == 0) {
        out.bce = Tensor::zeros({1});
        out.dice = Tensor::zeros({1});
        return out;
    }
    out.bce = ad::scale(bce_sum, 1.0 / out.used_clusters);
    out.dice = ad::scale(dice_sum, 1.0 / out.used_clusters);
    return out;
}

}  // namespace dyco::model
