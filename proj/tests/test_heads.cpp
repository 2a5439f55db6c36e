#include "doctest.h"

#include <cmath>
#include <random>

#include "dyco/heads.hpp"
#include "oracles.hpp"

using namespace dyco;
using namespace dyco::model;
using ad::Tensor;

namespace {

data::Scene two_instance_scene() {
    // 4 points: instance 0 = {0,1} (class 1), instance 1 = {2} (class 2),
    // point 3 is background with no instance.
    data::Scene s;
    s.id = "hand";
    s.feat_dim = 0;
    s.coords = {0, 0, 0, 2, 0, 0, 5, 5, 0, 9, 9, 9};
    s.sem_labels = {1, 1, 2, 0};
    s.inst_labels = {0, 0, 1, -1};
    return s;
}

}  // namespace

TEST_CASE("heads output shapes and determinism") {
    HeadsConfig cfg;
    Heads a(cfg, 3), b(cfg, 3);
    std::mt19937_64 rng(1);
    Tensor f = ad::glorot({5, cfg.in_dim}, 4, 4, rng);
    ad::Session sa(false), sb(false);
    auto oa = a.forward(sa, f);
    auto ob = b.forward(sb, f);
    CHECK(oa.seg.shape == ad::Shape{5, cfg.num_classes});
    CHECK(oa.off.shape == ad::Shape{5, 3});
    CHECK(oa.mask.shape == ad::Shape{5, cfg.mask_dim});
    for (int64_t i = 0; i < oa.seg.size(); ++i) CHECK(oa.seg[i] == ob.seg[i]);
    for (int64_t i = 0; i < oa.off.size(); ++i) CHECK(oa.off[i] == ob.off[i]);
}

TEST_CASE("semantic labels argmax with ties to smallest class") {
    Tensor logits = Tensor::from({3, 3}, {0.5, 2.0, 1.0,   //
                                          3.0, 3.0, 1.0,   // tie -> class 0
                                          -1.0, -1.0, -1.0});
    auto lab = semantic_labels(logits);
    CHECK(lab == std::vector<int>{1, 0, 0});
}

TEST_CASE("centroid loss matches hand computation, L2 and L1") {
    auto s = two_instance_scene();
    // Instance 0 centroid (1,0,0); instance 1 centroid (5,5,0).
    // Targets: p0 -> (1,0,0), p1 -> (-1,0,0), p2 -> (0,0,0).
    Tensor off = Tensor::from({4, 3}, {1, 0, 0,      // exact
                                       -1, 0, 3,     // error (0,0,3), L2 3, L1 3
                                       1, -2, 0,     // error (1,-2,0), L2 sqrt5, L1 3
                                       99, 99, 99}); // ignored, no instance
    ad::Session sess(false);
    double l2 = loss_ctr(sess, off, s, OffsetNorm::L2).scalar();
    CHECK(l2 == doctest::Approx((0.0 + 3.0 + std::sqrt(5.0)) / 3.0));
    double l1 = loss_ctr(sess, off, s, OffsetNorm::L1).scalar();
    CHECK(l1 == doctest::Approx((0.0 + 3.0 + 3.0) / 3.0));
}

TEST_CASE("centroid loss is exactly zero with no valid points") {
    data::Scene s;
    s.feat_dim = 0;
    s.coords = {0, 0, 0, 1, 1, 1};
    s.sem_labels = {0, 0};
    s.inst_labels = {-1, -1};
    Tensor off = Tensor::from({2, 3}, {5, 5, 5, 5, 5, 5});
    ad::Session sess(false);
    CHECK(loss_ctr(sess, off, s).scalar() == 0.0);
}

TEST_CASE("centroid loss gradient matches finite differences") {
    auto s = two_instance_scene();
    std::mt19937_64 rng(5);
    auto build = [&](ad::Session& sess, std::vector<Tensor>& leaves) {
        return loss_ctr(sess, leaves[0], s, OffsetNorm::L2);
    };
    CHECK(oracle::gradient_check(build, {{4, 3}}, rng) < 1e-6);
}

TEST_CASE("segmentation loss matches manual cross-entropy with ignores") {
    auto s = two_instance_scene();
    s.sem_labels = {1, -1, 2, 0};
    Tensor logits = Tensor::from({4, 3}, {0.2, 1.1, -0.4,  //
                                          9, 9, 9,          // ignored
                                          0.0, 0.5, 2.0,    //
                                          1.5, 0.1, 0.1});
    ad::Session sess(false);
    double got = loss_seg(sess, logits, s).scalar();
    double want = 0;
    std::vector<int> rows{0, 2, 3};
    for (int i : rows) {
        double z = 0;
        for (int j = 0; j < 3; ++j) z += std::exp(logits[i * 3 + j]);
        want += std::log(z) - logits[i * 3 + s.sem_labels[i]];
    }
    want /= 3;
    CHECK(got == doctest::Approx(want));
}

TEST_CASE("heads gradients match finite differences") {
    HeadsConfig cfg;
    cfg.in_dim = 4;
    cfg.hidden = 6;
    cfg.mask_dim = 3;
    Heads heads(cfg, 17);
    std::mt19937_64 rng(2);
    Tensor f = ad::glorot({5, 4}, 3, 3, rng);

    auto loss_of = [&](ad::Session& sess) {
        auto o = heads.forward(sess, f);
        return ad::add(ad::add(ad::reduce_sum(ad::square(o.seg)), ad::reduce_sum(ad::square(o.off))),
                       ad::reduce_sum(ad::square(o.mask)));
    };
    ad::Session sess(true);
    Tensor loss = loss_of(sess);
    sess.backward(loss);

    std::vector<double> analytic, numeric;
    const double h = 1e-5;
    for (ad::Parameter* p : heads.params()) {
        auto g = sess.grad_of(*p);
        analytic.insert(analytic.end(), g.begin(), g.end());
        for (int64_t i = 0; i < p->value.size(); ++i) {
            double keep = (*p->value.data)[i];
            (*p->value.data)[i] = keep + h;
            ad::Session sp(false);
            double fp = loss_of(sp).scalar();
            (*p->value.data)[i] = keep - h;
            ad::Session sm(false);
            double fm = loss_of(sm).scalar();
            (*p->value.data)[i] = keep;
            numeric.push_back((fp - fm) / (2 * h));
        }
    }
    CHECK(oracle::rel_err(analytic, numeric) < 1e-6);
}
