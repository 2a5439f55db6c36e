#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dyco/encoder.hpp"
#include "oracles.hpp"

using namespace dyco;
using namespace dyco::model;
using ad::Tensor;

namespace {

data::Scene random_scene(int n, uint64_t seed, double extent = 2.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.0, extent), col(0.0, 1.0);
    data::Scene s;
    s.id = "test";
    s.feat_dim = 3;
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) s.coords.push_back(pos(rng));
        for (int c = 0; c < 3; ++c) s.feats.push_back(col(rng));
        s.sem_labels.push_back(0);
        s.inst_labels.push_back(-1);
    }
    return s;
}

// Greedy FPS oracle with the same rules: lexicographic-min start, then
// repeatedly the point with the largest min-distance to the chosen set.
std::vector<int> fps_oracle(const std::vector<double>& c, int count) {
    int n = static_cast<int>(c.size() / 3);
    int start = 0;
    for (int i = 1; i < n; ++i)
        if (std::lexicographical_compare(&c[3 * i], &c[3 * i] + 3, &c[3 * start], &c[3 * start] + 3))
            start = i;
    std::vector<int> picked{start};
    while (static_cast<int>(picked.size()) < count) {
        int arg = -1;
        double far = -1;
        for (int i = 0; i < n; ++i) {
            double best = 1e300;
            for (int p : picked) {
                double d = 0;
                for (int k = 0; k < 3; ++k) d += (c[3 * i + k] - c[3 * p + k]) * (c[3 * i + k] - c[3 * p + k]);
                best = std::min(best, d);
            }
            if (best > far) {
                far = best;
                arg = i;
            }
        }
        picked.push_back(arg);
    }
    return picked;
}

}  // namespace

TEST_CASE("fps identity when count covers all points") {
    auto s = random_scene(7, 1);
    auto idx = farthest_point_sample(s.coords, 10);
    REQUIRE(idx.size() == 7);
    for (int i = 0; i < 7; ++i) CHECK(idx[i] == i);
}

TEST_CASE("fps matches greedy oracle") {
    auto s = random_scene(40, 2);
    auto got = farthest_point_sample(s.coords, 12);
    auto want = fps_oracle(s.coords, 12);
    CHECK(got == want);
    std::set<int> uniq(got.begin(), got.end());
    CHECK(uniq.size() == got.size());
}

TEST_CASE("fps start point is lexicographically smallest") {
    std::vector<double> c{1, 0, 0, 0, 2, 0, 0, 1, 5, 3, 3, 3};
    auto idx = farthest_point_sample(c, 2);
    CHECK(idx[0] == 2);  // (0,1,5) < (0,2,0)
}

TEST_CASE("direction encoding hand case and translation invariance") {
    std::vector<double> c{0, 0, 0, 1, 0, 0};
    auto enc = direction_encoding(c, 1);
    CHECK(enc[0] == doctest::Approx(1.0));
    CHECK(enc[1] == doctest::Approx(0.0));
    CHECK(enc[3] == doctest::Approx(-1.0));

    auto s = random_scene(25, 3);
    auto base = direction_encoding(s.coords, 5);
    auto shifted = s.coords;
    for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i % 3 == 0) ? 4.25 : -1.5;
    auto moved = direction_encoding(shifted, 5);
    CHECK(oracle::rel_err(base, moved) < 1e-12);
}

TEST_CASE("direction encoding ignores coincident pairs") {
    std::vector<double> c{0, 0, 0, 0, 0, 0, 2, 0, 0};
    auto enc = direction_encoding(c, 2);
    // point 0: neighbors are the coincident twin (zero) and +x.
    CHECK(enc[0] == doctest::Approx(0.5));
    CHECK(enc[1] == doctest::Approx(0.0));
}

TEST_CASE("encoder output shape, determinism, finiteness") {
    EncoderConfig cfg;
    cfg.hidden = {16, 16};
    cfg.attn_dim = 16;
    cfg.heads = 2;
    auto s = random_scene(30, 4);
    Encoder a(cfg, 7), b(cfg, 7);
    ad::Session sa(false), sb(false);
    Tensor fa = a.encode(sa, s), fb = b.encode(sb, s);
    REQUIRE(fa.shape == ad::Shape{30, cfg.out_dim});
    for (int64_t i = 0; i < fa.size(); ++i) {
        CHECK(fa[i] == fb[i]);
        CHECK(std::isfinite(fa[i]));
    }
    Encoder c(cfg, 8);
    ad::Session sc(false);
    Tensor fc = c.encode(sc, s);
    CHECK(oracle::rel_err(fa.values(), fc.values()) > 1e-6);  // seed matters
}

TEST_CASE("encoder is permutation-equivariant under the cap") {
    EncoderConfig cfg;
    cfg.hidden = {16, 16};
    cfg.attn_dim = 16;
    cfg.heads = 2;
    auto s = random_scene(24, 5);
    std::vector<int> perm(24);
    for (int i = 0; i < 24; ++i) perm[i] = i;
    std::mt19937_64 rng(11);
    std::shuffle(perm.begin(), perm.end(), rng);

    data::Scene sp = s;
    for (int i = 0; i < 24; ++i) {
        for (int c = 0; c < 3; ++c) {
            sp.coords[3 * i + c] = s.coords[3 * perm[i] + c];
            sp.feats[3 * i + c] = s.feats[3 * perm[i] + c];
        }
    }
    Encoder enc(cfg, 9);
    ad::Session s1(false), s2(false);
    Tensor f = enc.encode(s1, s);
    Tensor fp = enc.encode(s2, sp);
    int d = cfg.out_dim;
    for (int i = 0; i < 24; ++i)
        for (int c = 0; c < d; ++c)
            CHECK(fp[i * d + c] == doctest::Approx(f[perm[i] * d + c]).epsilon(1e-10));
}

TEST_CASE("encoder subset path runs and stays finite") {
    EncoderConfig cfg;
    cfg.hidden = {16, 16};
    cfg.attn_dim = 16;
    cfg.heads = 2;
    cfg.attn_cap = 10;
    auto s = random_scene(50, 6);
    Encoder enc(cfg, 3);
    ad::Session sess(false);
    Tensor f = enc.encode(sess, s);
    REQUIRE(f.shape == ad::Shape{50, cfg.out_dim});
    for (int64_t i = 0; i < f.size(); ++i) CHECK(std::isfinite(f[i]));
}

TEST_CASE("encoder rejects empty scenes and wrong feature width") {
    EncoderConfig cfg;
    cfg.hidden = {16, 16};
    cfg.attn_dim = 16;
    Encoder enc(cfg, 0);
    ad::Session sess(false);
    data::Scene empty;
    empty.feat_dim = 3;
    CHECK_THROWS_AS(enc.encode(sess, empty), DataError);
    auto s = random_scene(5, 1);
    s.feat_dim = 2;
    s.feats.resize(10);
    CHECK_THROWS_AS(enc.encode(sess, s), ShapeError);
}

TEST_CASE("encoder config validation") {
    EncoderConfig cfg;
    cfg.hidden = {16, 24};
    cfg.attn_dim = 16;  // must equal hidden.back()
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.hidden = {16, 16};
    cfg.heads = 5;  // must divide 16
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encoder gradients match finite differences") {
    EncoderConfig cfg;
    cfg.hidden = {6, 8};
    cfg.attn_dim = 8;
    cfg.heads = 2;
    cfg.out_dim = 4;
    cfg.neighbor_k = 3;
    auto s = random_scene(8, 12);
    Encoder enc(cfg, 21);

    ad::Session sess(true);
    Tensor loss = ad::reduce_sum(enc.encode(sess, s));
    sess.backward(loss);

    std::vector<double> analytic, numeric;
    const double h = 1e-5;
    for (ad::Parameter* p : enc.params()) {
        auto g = sess.grad_of(*p);
        analytic.insert(analytic.end(), g.begin(), g.end());
        for (int64_t i = 0; i < p->value.size(); ++i) {
            double keep = (*p->value.data)[i];
            (*p->value.data)[i] = keep + h;
            ad::Session sp(false);
            double fp = ad::reduce_sum(enc.encode(sp, s)).scalar();
            (*p->value.data)[i] = keep - h;
            ad::Session sm(false);
            double fm = ad::reduce_sum(enc.encode(sm, s)).scalar();
            (*p->value.data)[i] = keep;
            numeric.push_back((fp - fm) / (2 * h));
        }
    }
    CHECK(oracle::rel_err(analytic, numeric) < 1e-6);
}
