#pragma once

// Per-cluster dynamic filter generation: voxelized feature pooling on a
// cluster-anchored g^3 grid, two kernel-3 convolutions, global mean pool,
// and an MLP emitting the flattened decoder parameters.

#include <cstdint>
#include <vector>

#include "dyco/grouping.hpp"
#include "dyco/tensor.hpp"

namespace dyco::model {

struct WeightLayout {
    int feat_dim = 8;  // D, width of the mask features
    int hidden = 8;    // h, width of the two hidden decoder layers
    int w1_off = 0, w1_len = 0;
    int b1_off = 0, b1_len = 0;
    int w2_off = 0, w2_len = 0;
    int b2_off = 0, b2_len = 0;
    int w3_off = 0, w3_len = 0;
    int b3_off = 0, b3_len = 0;
    int total = 0;

    static WeightLayout make(int feat_dim, int hidden);
};

struct WeightGenConfig {
    int in_dim = 16;        // width of F_b
    int grid = 14;          // g
    int conv_channels = 16; // both convolution layers
    int mlp_hidden = 64;
    WeightLayout layout = WeightLayout::make(8, 8);
};

// Dense 3-D convolution tower over the per-cluster grid: voxel features at
// occupied cells, zeros elsewhere, two kernel-3 convs with ReLU, then a
// global mean over all g^3 cells. occupied: flattened cell index per row of
// `voxel_feats`. A fused op with a hand-written backward pass.
ad::Tensor conv_tower_pool(ad::Session& sess, const ad::Tensor& voxel_feats,
                           const std::vector<int>& occupied, int grid,
                           const ad::Tensor& w1, const ad::Tensor& b1,
                           const ad::Tensor& w2, const ad::Tensor& b2);

class WeightGenerator {
public:
    WeightGenerator(const WeightGenConfig& cfg, uint64_t seed);

    // Flattened decoder parameters for one cluster, length layout.total.
    ad::Tensor generate(ad::Session& sess, const group::Cluster& cluster,
                        const ad::Tensor& backbone_feats, const std::vector<double>& coords);

    std::vector<ad::Parameter*> params();
    const WeightGenConfig& config() const { return cfg_; }

private:
    WeightGenConfig cfg_;
    ad::Parameter cw1_, cb1_, cw2_, cb2_;  // conv tower, im2col weight layout
    ad::Parameter mw1_, mb1_, mw2_, mb2_;  // pooled-vector MLP
};

}  // namespace dyco::model
