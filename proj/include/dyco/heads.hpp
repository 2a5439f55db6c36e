#pragma once

// Three parallel 2-layer MLP branches on F_b, plus their direct losses.

#include <cstdint>
#include <vector>

#include "dyco/scene.hpp"
#include "dyco/tensor.hpp"

namespace dyco::model {

struct HeadOutputs {
    ad::Tensor seg;   // N x C logits
    ad::Tensor off;   // N x 3 centroid offsets, meters
    ad::Tensor mask;  // N x mask_dim
};

enum class OffsetNorm { L2, L1 };

struct HeadsConfig {
    int in_dim = 16;      // D of F_b
    int num_classes = 4;  // C, includes the background class
    int mask_dim = 8;
    int hidden = 32;
    OffsetNorm offset_norm = OffsetNorm::L2;
};

class Heads {
public:
    Heads(const HeadsConfig& cfg, uint64_t seed);

    HeadOutputs forward(ad::Session& sess, const ad::Tensor& features);

    std::vector<ad::Parameter*> params();
    const HeadsConfig& config() const { return cfg_; }

private:
    HeadsConfig cfg_;
    ad::Parameter sw1_, sb1_, sw2_, sb2_;
    ad::Parameter ow1_, ob1_, ow2_, ob2_;
    ad::Parameter mw1_, mb1_, mw2_, mb2_;
};

// Per-row argmax; ties break to the smallest class index.
std::vector<int> semantic_labels(const ad::Tensor& seg_logits);

// Mean offset-to-centroid distance over points with an instance id; exact
// zero when no point is valid.
ad::Tensor loss_ctr(ad::Session& sess, const ad::Tensor& offsets, const data::Scene& scene,
                    OffsetNorm norm = OffsetNorm::L2);

// Cross-entropy over rows with sem_label != -1.
ad::Tensor loss_seg(ad::Session& sess, const ad::Tensor& seg_logits, const data::Scene& scene);

}  // namespace dyco::model
