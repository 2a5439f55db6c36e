#pragma once

// Per-point feature backbone: shared MLP over (coords, feats) plus one
// light-weight self-attention block with direction-based position encoding.

#include <cstdint>
#include <vector>

#include "dyco/scene.hpp"
#include "dyco/tensor.hpp"

namespace dyco::model {

struct EncoderConfig {
    int input_dim = 3;             // per-point input features (coords appended internally)
    std::vector<int> hidden{32, 64};
    int out_dim = 16;              // D, width of F_b
    int heads = 4;
    int attn_dim = 64;             // must equal hidden.back(); heads must divide it
    int neighbor_k = 16;           // context size for the direction encoding
    int attn_cap = 4096;           // attention runs on an FPS subset above this

    void validate() const;
};

// Deterministic farthest point sampling; starts from the lexicographically
// smallest coordinate so the subset depends on geometry, not input order.
std::vector<int> farthest_point_sample(const std::vector<double>& coords, int count);

// Mean over the K nearest context points of the unit direction vectors,
// zero for coincident pairs. Translation invariant by construction.
std::vector<double> direction_encoding(const std::vector<double>& coords, int k);

class Encoder {
public:
    Encoder(const EncoderConfig& cfg, uint64_t seed);

    // F_b, shape N x out_dim. Throws DataError on an empty scene.
    ad::Tensor encode(ad::Session& sess, const data::Scene& scene);

    // Self-attention + feed-forward with residuals over an M x attn_dim
    // slab; exposed for tests.
    ad::Tensor transformer_block(ad::Session& sess, const ad::Tensor& x,
                                 const std::vector<double>& coords);

    std::vector<ad::Parameter*> params();
    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    ad::Parameter w1_, b1_, w2_, b2_;           // shared per-point MLP
    ad::Parameter wq_, wk_, wv_, wo_, wdir_;    // attention
    ad::Parameter ff1_, bf1_, ff2_, bf2_;       // feed-forward
    ad::Parameter wout_, bout_;                 // projection to out_dim
};

}  // namespace dyco::model
