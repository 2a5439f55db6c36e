#include "dyco/heads.hpp"

#include <cmath>

namespace dyco::model {

using ad::Tensor;

namespace {

Tensor mlp2(ad::Session& sess, const Tensor& x, ad::Parameter& w1, ad::Parameter& b1,
            ad::Parameter& w2, ad::Parameter& b2) {
    Tensor h = ad::relu(ad::add(ad::matmul(x, sess.use(w1)), sess.use(b1)));
    return ad::add(ad::matmul(h, sess.use(w2)), sess.use(b2));
}

}  // namespace

Heads::Heads(const HeadsConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.in_dim <= 0 || cfg.num_classes < 2 || cfg.mask_dim <= 0 || cfg.hidden <= 0)
        throw ConfigError("heads: dimensions must be positive, num_classes >= 2");
    std::mt19937_64 rng(seed);
    auto mk = [&](const char* name, int fi, int fo) {
        return ad::Parameter(name, ad::glorot({fi, fo}, fi, fo, rng));
    };
    auto zb = [](const char* name, int n) { return ad::Parameter(name, Tensor::zeros({n})); };
    sw1_ = mk("heads.seg.w1", cfg.in_dim, cfg.hidden);
    sb1_ = zb("heads.seg.b1", cfg.hidden);
    sw2_ = mk("heads.seg.w2", cfg.hidden, cfg.num_classes);
    sb2_ = zb("heads.seg.b2", cfg.num_classes);
    ow1_ = mk("heads.off.w1", cfg.in_dim, cfg.hidden);
    ob1_ = zb("heads.off.b1", cfg.hidden);
    ow2_ = mk("heads.off.w2", cfg.hidden, 3);
    ob2_ = zb("heads.off.b2", 3);
    mw1_ = mk("heads.mask.w1", cfg.in_dim, cfg.hidden);
    mb1_ = zb("heads.mask.b1", cfg.hidden);
    mw2_ = mk("heads.mask.w2", cfg.hidden, cfg.mask_dim);
    mb2_ = zb("heads.mask.b2", cfg.mask_dim);
}

HeadOutputs Heads::forward(ad::Session& sess, const Tensor& features) {
    if (features.cols() != cfg_.in_dim)
        throw ShapeError("heads: expected feature width " + std::to_string(cfg_.in_dim) +
                         ", got " + ad::shape_str(features.shape));
    HeadOutputs out;
    out.seg = mlp2(sess, features, sw1_, sb1_, sw2_, sb2_);
    out.off = mlp2(sess, features, ow1_, ob1_, ow2_, ob2_);
    out.mask = mlp2(sess, features, mw1_, mb1_, mw2_, mb2_);
    return out;
}

std::vector<ad::Parameter*> Heads::params() {
    return {&sw1_, &sb1_, &sw2_, &sb2_, &ow1_, &ob1_, &ow2_, &ob2_,
            &mw1_, &mb1_, &mw2_, &mb2_};
}

std::vector<int> semantic_labels(const Tensor& seg_logits) {
    int n = seg_logits.rows(), c = seg_logits.cols();
    std::vector<int> out(n, 0);
    for (int i = 0; i < n; ++i) {
        const double* row = seg_logits.data->data() + static_cast<int64_t>(i) * c;
        int arg = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[arg]) arg = j;
        out[i] = arg;
    }
    return out;
}

Tensor loss_ctr(ad::Session& sess, const Tensor& offsets, const data::Scene& scene,
                OffsetNorm norm) {
    (void)sess;
    auto insts = data::instances_of(scene);
    std::vector<int> valid;
    for (int i = 0; i < scene.num_points(); ++i)
        if (scene.inst_labels[i] != -1) valid.push_back(i);
    if (valid.empty()) return Tensor::zeros({1});

    std::vector<double> target(valid.size() * 3);
    for (size_t v = 0; v < valid.size(); ++v) {
        int i = valid[v];
        const auto& ctr = insts[scene.inst_labels[i]].centroid;
        for (int c = 0; c < 3; ++c) target[3 * v + c] = ctr[c] - scene.coords[3 * i + c];
    }
    Tensor diff = ad::sub(ad::gather_rows(offsets, valid),
                          Tensor::from({static_cast<int>(valid.size()), 3}, std::move(target)));
    if (norm == OffsetNorm::L1) return ad::reduce_mean(ad::reduce_sum(ad::abs(diff), 1));
    return ad::reduce_mean(ad::sqrt(ad::reduce_sum(ad::square(diff), 1)));
}

Tensor loss_seg(ad::Session& sess, const Tensor& seg_logits, const data::Scene& scene) {
    (void)sess;
    return ad::cross_entropy(seg_logits, scene.sem_labels);
}

}  // namespace dyco::model
