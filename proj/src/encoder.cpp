#include "dyco/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dyco/spatial.hpp"

namespace dyco::model {

using ad::Tensor;

void EncoderConfig::validate() const {
    if (input_dim < 0) throw ConfigError("encoder: input_dim must be >= 0");
    if (hidden.empty()) throw ConfigError("encoder: hidden widths must be non-empty");
    for (int h : hidden)
        if (h <= 0) throw ConfigError("encoder: hidden widths must be positive");
    if (out_dim <= 0) throw ConfigError("encoder: out_dim must be positive");
    if (attn_dim != hidden.back())
        throw ConfigError("encoder: attn_dim must equal the last hidden width");
    if (heads <= 0 || attn_dim % heads != 0)
        throw ConfigError("encoder: heads must divide attn_dim");
    if (neighbor_k <= 0) throw ConfigError("encoder: neighbor_k must be positive");
    if (attn_cap <= 0) throw ConfigError("encoder: attn_cap must be positive");
}

std::vector<int> farthest_point_sample(const std::vector<double>& coords, int count) {
    int n = static_cast<int>(coords.size() / 3);
    if (count >= n) {
        std::vector<int> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    int start = 0;
    for (int i = 1; i < n; ++i) {
        const double* a = &coords[3 * static_cast<size_t>(i)];
        const double* b = &coords[3 * static_cast<size_t>(start)];
        if (std::lexicographical_compare(a, a + 3, b, b + 3)) start = i;
    }
    std::vector<int> picked{start};
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    int last = start;
    while (static_cast<int>(picked.size()) < count) {
        int arg = -1;
        double far = -1;
        for (int i = 0; i < n; ++i) {
            double dx = coords[3 * i] - coords[3 * last];
            double dy = coords[3 * i + 1] - coords[3 * last + 1];
            double dz = coords[3 * i + 2] - coords[3 * last + 2];
            best[i] = std::min(best[i], dx * dx + dy * dy + dz * dz);
            if (best[i] > far) {
                far = best[i];
                arg = i;
            }
        }
        picked.push_back(arg);
        last = arg;
    }
    return picked;
}

std::vector<double> direction_encoding(const std::vector<double>& coords, int k) {
    int n = static_cast<int>(coords.size() / 3);
    std::vector<double> enc(static_cast<size_t>(n) * 3, 0.0);
    if (n < 2 || k <= 0) return enc;
    k = std::min(k, n - 1);
    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double dx = coords[3 * j] - coords[3 * i];
            double dy = coords[3 * j + 1] - coords[3 * i + 1];
            double dz = coords[3 * j + 2] - coords[3 * i + 2];
            dist[j] = {dx * dx + dy * dy + dz * dz, j};
        }
        dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
        std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
        double sx = 0, sy = 0, sz = 0;
        for (int m = 0; m < k; ++m) {
            int j = dist[m].second;
            double dx = coords[3 * j] - coords[3 * i];
            double dy = coords[3 * j + 1] - coords[3 * i + 1];
            double dz = coords[3 * j + 2] - coords[3 * i + 2];
            double len = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (len > 0) {
                sx += dx / len;
                sy += dy / len;
                sz += dz / len;
            }
        }
        enc[3 * i] = sx / k;
        enc[3 * i + 1] = sy / k;
        enc[3 * i + 2] = sz / k;
    }
    return enc;
}

// Sinusoidal coordinate features; plain MLPs on raw meter-scale coordinates
// cannot resolve decimeter-scale structure across a room-sized range.
const double kFourierFreqs[] = {1.0, 4.0, 16.0, 32.0};
constexpr int kNumFreqs = 4;
constexpr int kFourierDims = 2 * 3 * kNumFreqs;

// Ball-query context: mean neighbor displacement and occupancy within this
// radius. For isolated objects the displacement is a direct estimate of the
// direction toward the local center of mass, which pointwise layers and a
// capped attention block cannot recover on their own.
constexpr double kContextRadius = 0.25;
constexpr int kContextDims = 4;

Encoder::Encoder(const EncoderConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    int in = 3 + kFourierDims + kContextDims + cfg_.input_dim;
    int h0 = cfg_.hidden[0], d = cfg_.attn_dim;
    auto mk = [&](const char* name, int fi, int fo) {
        return ad::Parameter(name, ad::glorot({fi, fo}, fi, fo, rng));
    };
    w1_ = mk("enc.w1", in, h0);
    b1_ = ad::Parameter("enc.b1", Tensor::zeros({h0}));
    w2_ = mk("enc.w2", h0, d);
    b2_ = ad::Parameter("enc.b2", Tensor::zeros({d}));
    wq_ = mk("enc.wq", d, d);
    wk_ = mk("enc.wk", d, d);
    wv_ = mk("enc.wv", d, d);
    wo_ = mk("enc.wo", d, d);
    wdir_ = mk("enc.wdir", 3, d);
    ff1_ = mk("enc.ff1", d, d);
    bf1_ = ad::Parameter("enc.bf1", Tensor::zeros({d}));
    ff2_ = mk("enc.ff2", d, d);
    bf2_ = ad::Parameter("enc.bf2", Tensor::zeros({d}));
    wout_ = mk("enc.wout", d, cfg_.out_dim);
    bout_ = ad::Parameter("enc.bout", Tensor::zeros({cfg_.out_dim}));
}

std::vector<ad::Parameter*> Encoder::params() {
    return {&w1_, &b1_, &w2_, &b2_,  &wq_,  &wk_,  &wv_,  &wo_,
            &wdir_, &ff1_, &bf1_, &ff2_, &bf2_, &wout_, &bout_};
}

Tensor Encoder::transformer_block(ad::Session& sess, const Tensor& x,
                                  const std::vector<double>& coords) {
    int m = x.rows();
    int d = cfg_.attn_dim;
    int dh = d / cfg_.heads;

    auto dir = direction_encoding(coords, cfg_.neighbor_k);
    Tensor dir_t = Tensor::from({m, 3}, std::move(dir));
    Tensor xin = ad::add(x, ad::matmul(dir_t, sess.use(wdir_)));

    Tensor q = ad::matmul(xin, sess.use(wq_));
    Tensor k = ad::matmul(xin, sess.use(wk_));
    Tensor v = ad::matmul(xin, sess.use(wv_));

    std::vector<Tensor> heads;
    heads.reserve(cfg_.heads);
    for (int h = 0; h < cfg_.heads; ++h) {
        Tensor qh = ad::slice_cols(q, h * dh, dh);
        Tensor kh = ad::slice_cols(k, h * dh, dh);
        Tensor vh = ad::slice_cols(v, h * dh, dh);
        Tensor attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(dh)));
        heads.push_back(ad::matmul(attn, vh));
    }
    Tensor o = ad::matmul(ad::concat(heads, 1), sess.use(wo_));
    Tensor x2 = ad::add(x, o);

    Tensor hidden = ad::relu(ad::add(ad::matmul(x2, sess.use(ff1_)), sess.use(bf1_)));
    Tensor ff = ad::add(ad::matmul(hidden, sess.use(ff2_)), sess.use(bf2_));
    return ad::add(x2, ff);
}

Tensor Encoder::encode(ad::Session& sess, const data::Scene& scene) {
    int n = scene.num_points();
    if (n == 0) throw DataError("encoder: scene '" + scene.id + "' has no points");
    if (scene.feat_dim != cfg_.input_dim)
        throw ShapeError("encoder: scene feat_dim " + std::to_string(scene.feat_dim) +
                         " != configured input_dim " + std::to_string(cfg_.input_dim));

    int in = 3 + kFourierDims + kContextDims + cfg_.input_dim;
    auto grid = spatial::HashGrid::build(scene.coords, kContextRadius);
    std::vector<double> xin(static_cast<size_t>(n) * in);
    for (int i = 0; i < n; ++i) {
        double* row = &xin[static_cast<size_t>(i) * in];
        for (int c = 0; c < 3; ++c) row[c] = scene.coords[3 * i + c];
        int at = 3;
        for (int c = 0; c < 3; ++c)
            for (int f = 0; f < kNumFreqs; ++f) {
                double w = kFourierFreqs[f] * scene.coords[3 * i + c];
                row[at++] = std::sin(w);
                row[at++] = std::cos(w);
            }
        auto nb = grid.radius_neighbors(scene.point(i), kContextRadius);
        double mx = 0, my = 0, mz = 0;
        for (int j : nb) {
            mx += scene.coords[3 * j];
            my += scene.coords[3 * j + 1];
            mz += scene.coords[3 * j + 2];
        }
        double k = static_cast<double>(nb.size());  // includes the point itself
        row[at++] = mx / k - scene.coords[3 * i];
        row[at++] = my / k - scene.coords[3 * i + 1];
        row[at++] = mz / k - scene.coords[3 * i + 2];
        row[at++] = std::min(1.0, k / 256.0);
        for (int c = 0; c < cfg_.input_dim; ++c)
            row[at + c] = scene.feats[static_cast<size_t>(i) * cfg_.input_dim + c];
    }
    Tensor x0 = Tensor::from({n, in}, std::move(xin));

    Tensor x = ad::relu(ad::add(ad::matmul(x0, sess.use(w1_)), sess.use(b1_)));
    x = ad::relu(ad::add(ad::matmul(x, sess.use(w2_)), sess.use(b2_)));

    Tensor fused;
    if (n <= cfg_.attn_cap) {
        fused = transformer_block(sess, x, scene.coords);
    } else {
        // Run attention on an FPS subset and broadcast the residual update
        // to every point via its nearest subset point.
        std::vector<int> sub = farthest_point_sample(scene.coords, cfg_.attn_cap);
        std::vector<double> sub_coords(sub.size() * 3);
        for (size_t s = 0; s < sub.size(); ++s)
            for (int c = 0; c < 3; ++c) sub_coords[3 * s + c] = scene.coords[3 * sub[s] + c];
        Tensor sx = ad::gather_rows(x, sub);
        Tensor delta = ad::sub(transformer_block(sess, sx, sub_coords), sx);

        std::vector<int> nearest(n, 0);
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t s = 0; s < sub.size(); ++s) {
                double dx = scene.coords[3 * i] - sub_coords[3 * s];
                double dy = scene.coords[3 * i + 1] - sub_coords[3 * s + 1];
                double dz = scene.coords[3 * i + 2] - sub_coords[3 * s + 2];
                double d2 = dx * dx + dy * dy + dz * dz;
                if (d2 < best) {
                    best = d2;
                    nearest[i] = static_cast<int>(s);
                }
            }
        }
        fused = ad::add(x, ad::gather_rows(delta, nearest));
    }

    Tensor out = ad::add(ad::matmul(fused, sess.use(wout_)), sess.use(bout_));
    for (double v : out.values())
        if (!std::isfinite(v))
            throw NumericError("encoder: non-finite feature in scene '" + scene.id + "'");
    return out;
}

}  // namespace dyco::model
