#include "doctest.h"

#include <cmath>
#include <random>

#include "dyco/decoder.hpp"
#include "oracles.hpp"

using namespace dyco;
using namespace dyco::model;
using ad::Tensor;

namespace {

std::vector<double> rand_vec(size_t n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

// Direct 3-layer MLP evaluation from the flat weight vector.
std::vector<double> forward_oracle(const std::vector<double>& w, const WeightLayout& l,
                                   const std::vector<double>& feats, int rows) {
    int d = l.feat_dim + 3, h = l.hidden;
    std::vector<double> out(rows);
    for (int r = 0; r < rows; ++r) {
        std::vector<double> h1(h), h2(h);
        for (int j = 0; j < h; ++j) {
            double s = w[l.b1_off + j];
            for (int i = 0; i < d; ++i) s += feats[r * d + i] * w[l.w1_off + i * h + j];
            h1[j] = std::max(s, 0.0);
        }
        for (int j = 0; j < h; ++j) {
            double s = w[l.b2_off + j];
            for (int i = 0; i < h; ++i) s += h1[i] * w[l.w2_off + i * h + j];
            h2[j] = std::max(s, 0.0);
        }
        double s = w[l.b3_off];
        for (int i = 0; i < h; ++i) s += h2[i] * w[l.w3_off + i];
        out[r] = s;
    }
    return out;
}

}  // namespace

TEST_CASE("position embedding and assembly") {
    std::vector<double> coords{1, 2, 3, 4, 5, 6};
    Tensor pos = position_embed(coords, {1, 1, 1});
    REQUIRE(pos.shape == ad::Shape{2, 3});
    CHECK(pos[0] == 0.0);
    CHECK(pos[5] == 5.0);
    CHECK(!pos.tracked());

    Tensor mask = Tensor::from({2, 2}, {9, 8, 7, 6});
    Tensor f = assemble(mask, pos);
    REQUIRE(f.shape == ad::Shape{2, 5});
    CHECK(f[0] == 9);
    CHECK(f[2] == 0.0);
    CHECK(f[9] == 5.0);
}

TEST_CASE("dynamic forward 9-parameter hand case") {
    auto l = WeightLayout::make(1, 1);
    REQUIRE(l.total == 9);
    // w1 = (1, -1, 0.5, 2), b1 = 0.5, w2 = 3, b2 = -1, w3 = 2, b3 = 0.25
    Tensor w = Tensor::from({9}, {1, -1, 0.5, 2, 0.5, 3, -1, 2, 0.25});
    Tensor f = Tensor::from({2, 4}, {1, 1, 2, 0.5,   //
                                     -4, 0, 0, 0});
    Tensor out = dynamic_forward(w, l, f);
    // Row 0: pre1 = 1-1+1+1+0.5 = 2.5 -> h1 = 2.5; pre2 = 7.5-1 = 6.5; out = 13.25.
    // Row 1: pre1 = -4+0.5 = -3.5 -> 0; pre2 = -1 -> 0; out = b3 = 0.25.
    REQUIRE(out.shape == ad::Shape{2});
    CHECK(out[0] == doctest::Approx(13.25));
    CHECK(out[1] == doctest::Approx(0.25));
}

TEST_CASE("dynamic forward matches the loop oracle") {
    auto l = WeightLayout::make(2, 3);
    std::mt19937_64 rng(5);
    auto wv = rand_vec(l.total, rng);
    auto fv = rand_vec(4 * 5, rng);
    Tensor out = dynamic_forward(Tensor::from({l.total}, wv), l, Tensor::from({4, 5}, fv));
    CHECK(oracle::rel_err(out.values(), forward_oracle(wv, l, fv, 4)) < 1e-12);
}

TEST_CASE("dynamic forward validates lengths") {
    auto l = WeightLayout::make(2, 3);
    CHECK_THROWS_AS(dynamic_forward(Tensor::zeros({l.total - 1}), l, Tensor::zeros({2, 5})),
                    ShapeError);
    CHECK_THROWS_AS(dynamic_forward(Tensor::zeros({l.total}), l, Tensor::zeros({2, 4})),
                    ShapeError);
}

TEST_CASE("dynamic forward gradients match finite differences") {
    auto l = WeightLayout::make(2, 3);
    std::mt19937_64 rng(8);
    auto build = [&](ad::Session& sess, std::vector<Tensor>& leaves) {
        return ad::reduce_sum(ad::square(dynamic_forward(leaves[0], l, leaves[1])));
    };
    CHECK(oracle::gradient_check(build, {{l.total}, {4, 5}}, rng) < 1e-6);
}

TEST_CASE("ground-truth assignment: plurality, ties, background") {
    group::Cluster c;
    c.members = {0, 1, 2, 3, 4};
    CHECK(assign_gt(c, {2, 2, 1, 2, -1}) == 2);
    CHECK(assign_gt(c, {1, 1, 2, 2, 3}) == 1);     // tie -> smaller id
    CHECK(assign_gt(c, {-1, -1, -1, 5, 5}) == -1); // tie with no-instance -> -1
    CHECK(assign_gt(c, {-1, -1, -1, 5, 4}) == -1);
    group::Cluster empty;
    CHECK_THROWS_AS(assign_gt(empty, {}), DataError);
}

TEST_CASE("mask losses match hand computation") {
    ad::Session sess(true);
    ClusterDecode d;
    d.cluster_id = 0;
    d.scope = {0, 1, 2};
    d.targets = {1, 0, 1};
    Tensor logits = sess.watch(Tensor::from({3}, {2.0, -1.0, 0.5}));
    d.logits = logits;

    auto ml = mask_losses(sess, {d});
    CHECK(ml.used_clusters == 1);

    auto bce_term = [](double l, double t) {
        return std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
    };
    double bce = (bce_term(2, 1) + bce_term(-1, 0) + bce_term(0.5, 1)) / 3.0;
    CHECK(ml.bce.scalar() == doctest::Approx(bce));

    auto sg = [](double l) { return 1.0 / (1.0 + std::exp(-l)); };
    double p0 = sg(2.0), p1 = sg(-1.0), p2 = sg(0.5);
    double inter = p0 + p2, den = p0 * p0 + p1 * p1 + p2 * p2 + 2.0 + 1e-6;
    CHECK(ml.dice.scalar() == doctest::Approx(1.0 - 2.0 * inter / den));
}

TEST_CASE("mask losses skip empty scopes and zero out with no clusters") {
    ad::Session sess(true);
    ClusterDecode empty;
    empty.cluster_id = 3;
    auto ml = mask_losses(sess, {empty});
    CHECK(ml.used_clusters == 0);
    CHECK(ml.bce.scalar() == 0.0);
    CHECK(ml.dice.scalar() == 0.0);

    ClusterDecode d;
    d.scope = {0};
    d.targets = {1};
    d.logits = sess.watch(Tensor::from({1}, {0.3}));
    auto ml2 = mask_losses(sess, {empty, d});
    CHECK(ml2.used_clusters == 1);
}

TEST_CASE("mask losses average over clusters and backprop correctly") {
    std::mt19937_64 rng(3);
    std::vector<std::vector<double>> targets{{1, 0, 1, 1}, {0, 0, 1}};
    auto build = [&](ad::Session& sess, std::vector<Tensor>& leaves) {
        std::vector<ClusterDecode> ds(2);
        for (int i = 0; i < 2; ++i) {
            ds[i].cluster_id = i;
            ds[i].scope.resize(targets[i].size());
            ds[i].targets = targets[i];
            ds[i].logits = leaves[i];
        }
        auto ml = mask_losses(sess, ds);
        return ad::add(ml.bce, ml.dice);
    };
    CHECK(oracle::gradient_check(build, {{4}, {3}}, rng) < 1e-6);
}
