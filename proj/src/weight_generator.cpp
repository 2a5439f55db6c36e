#include "dyco/weight_generator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

namespace dyco::model {

using ad::Tensor;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

WeightLayout WeightLayout::make(int feat_dim, int hidden) {
    if (feat_dim <= 0 || hidden <= 0)
        throw ConfigError("weight layout: feat_dim and hidden must be positive");
    WeightLayout l;
    l.feat_dim = feat_dim;
    l.hidden = hidden;
    l.w1_len = (feat_dim + 3) * hidden;
    l.b1_len = hidden;
    l.w2_len = hidden * hidden;
    l.b2_len = hidden;
    l.w3_len = hidden;
    l.b3_len = 1;
    l.w1_off = 0;
    l.b1_off = l.w1_off + l.w1_len;
    l.w2_off = l.b1_off + l.b1_len;
    l.b2_off = l.w2_off + l.w2_len;
    l.w3_off = l.b2_off + l.b2_len;
    l.b3_off = l.w3_off + l.w3_len;
    l.total = l.b3_off + l.b3_len;
    return l;
}

namespace {

// Column layout: tap t = (dx+1)*9 + (dy+1)*3 + (dz+1), column t*cin + ci.
// Flat cell index (x*g + y)*g + z; zero padding outside the grid.
RowMat im2col(const std::vector<double>& dense, int g, int cin) {
    int64_t cells = static_cast<int64_t>(g) * g * g;
    RowMat col = RowMat::Zero(cells, 27 * cin);
    for (int x = 0; x < g; ++x)
        for (int y = 0; y < g; ++y)
            for (int z = 0; z < g; ++z) {
                int64_t p = (static_cast<int64_t>(x) * g + y) * g + z;
                for (int dx = -1; dx <= 1; ++dx)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dz = -1; dz <= 1; ++dz) {
                            int nx = x + dx, ny = y + dy, nz = z + dz;
                            if (nx < 0 || nx >= g || ny < 0 || ny >= g || nz < 0 || nz >= g)
                                continue;
                            int64_t q = (static_cast<int64_t>(nx) * g + ny) * g + nz;
                            int t = (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1);
                            for (int ci = 0; ci < cin; ++ci)
                                col(p, t * cin + ci) = dense[q * cin + ci];
                        }
            }
    return col;
}

void col2im_add(const RowMat& gcols, int g, int cin, std::vector<double>& gdense) {
    for (int x = 0; x < g; ++x)
        for (int y = 0; y < g; ++y)
            for (int z = 0; z < g; ++z) {
                int64_t p = (static_cast<int64_t>(x) * g + y) * g + z;
                for (int dx = -1; dx <= 1; ++dx)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dz = -1; dz <= 1; ++dz) {
                            int nx = x + dx, ny = y + dy, nz = z + dz;
                            if (nx < 0 || nx >= g || ny < 0 || ny >= g || nz < 0 || nz >= g)
                                continue;
                            int64_t q = (static_cast<int64_t>(nx) * g + ny) * g + nz;
                            int t = (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1);
                            for (int ci = 0; ci < cin; ++ci)
                                gdense[q * cin + ci] += gcols(p, t * cin + ci);
                        }
            }
}

}  // namespace

Tensor conv_tower_pool(ad::Session& sess, const Tensor& voxel_feats,
                       const std::vector<int>& occupied, int grid, const Tensor& w1,
                       const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    (void)sess;
    if (grid <= 0) throw ConfigError("conv tower: grid must be positive");
    int v = voxel_feats.rows(), cin = voxel_feats.cols();
    if (static_cast<int>(occupied.size()) != v)
        throw ShapeError("conv tower: occupied list has " + std::to_string(occupied.size()) +
                         " entries for " + std::to_string(v) + " voxels");
    int64_t cells = static_cast<int64_t>(grid) * grid * grid;
    for (int f : occupied)
        if (f < 0 || f >= cells) throw ShapeError("conv tower: voxel index out of grid");
    if (w1.rank() != 2 || w1.shape[0] != 27 * cin)
        throw ShapeError("conv tower: w1 must be [27*cin, c1], got " + ad::shape_str(w1.shape));
    int c1 = w1.shape[1];
    if (b1.size() != c1) throw ShapeError("conv tower: b1 width mismatch");
    if (w2.rank() != 2 || w2.shape[0] != 27 * c1)
        throw ShapeError("conv tower: w2 must be [27*c1, c2], got " + ad::shape_str(w2.shape));
    int c2 = w2.shape[1];
    if (b2.size() != c2) throw ShapeError("conv tower: b2 width mismatch");

    auto dense = std::make_shared<std::vector<double>>(cells * cin, 0.0);
    for (int r = 0; r < v; ++r)
        for (int ci = 0; ci < cin; ++ci)
            (*dense)[static_cast<int64_t>(occupied[r]) * cin + ci] =
                (*voxel_feats.data)[static_cast<int64_t>(r) * cin + ci];

    Eigen::Map<const RowMat> mw1(w1.data->data(), 27 * cin, c1);
    Eigen::Map<const RowMat> mw2(w2.data->data(), 27 * c1, c2);

    auto h1pre = std::make_shared<std::vector<double>>(cells * c1);
    {
        RowMat h = im2col(*dense, grid, cin) * mw1;
        for (int64_t p = 0; p < cells; ++p)
            for (int c = 0; c < c1; ++c) (*h1pre)[p * c1 + c] = h(p, c) + (*b1.data)[c];
    }
    std::vector<double> h1(cells * c1);
    for (int64_t i = 0; i < cells * c1; ++i) h1[i] = std::max((*h1pre)[i], 0.0);

    auto h2pre = std::make_shared<std::vector<double>>(cells * c2);
    {
        RowMat h = im2col(h1, grid, c1) * mw2;
        for (int64_t p = 0; p < cells; ++p)
            for (int c = 0; c < c2; ++c) (*h2pre)[p * c2 + c] = h(p, c) + (*b2.data)[c];
    }
    std::vector<double> pooled(c2, 0.0);
    for (int64_t p = 0; p < cells; ++p)
        for (int c = 0; c < c2; ++c) pooled[c] += std::max((*h2pre)[p * c2 + c], 0.0);
    for (int c = 0; c < c2; ++c) pooled[c] /= static_cast<double>(cells);

    ad::Tape* tape = nullptr;
    for (const Tensor* t : {&voxel_feats, &w1, &b1, &w2, &b2})
        if (t->tracked()) tape = t->tape;
    if (!tape) return Tensor::from({c2}, std::move(pooled));

    std::vector<int> parents;
    for (const Tensor* t : {&voxel_feats, &w1, &b1, &w2, &b2})
        if (t->tracked()) parents.push_back(t->node);

    int vf_node = voxel_feats.tracked() ? voxel_feats.node : -1;
    int w1_node = w1.tracked() ? w1.node : -1;
    int b1_node = b1.tracked() ? b1.node : -1;
    int w2_node = w2.tracked() ? w2.node : -1;
    int b2_node = b2.tracked() ? b2.node : -1;
    auto w1d = w1.data, w2d = w2.data;
    std::vector<int> occ = occupied;

    auto backward = [=](ad::Tape& tp, const std::vector<double>& g) {
        Eigen::Map<const RowMat> bw1(w1d->data(), 27 * cin, c1);
        Eigen::Map<const RowMat> bw2(w2d->data(), 27 * c1, c2);

        RowMat gh2(cells, c2);
        for (int64_t p = 0; p < cells; ++p)
            for (int c = 0; c < c2; ++c)
                gh2(p, c) = (*h2pre)[p * c2 + c] > 0 ? g[c] / static_cast<double>(cells) : 0.0;

        std::vector<double> relu1(cells * c1);
        for (int64_t i = 0; i < cells * c1; ++i) relu1[i] = std::max((*h1pre)[i], 0.0);
        RowMat col2 = im2col(relu1, grid, c1);

        if (w2_node >= 0) {
            RowMat gw2 = col2.transpose() * gh2;
            auto& buf = tp.grad(w2_node);
            for (int64_t i = 0; i < gw2.size(); ++i) buf[i] += gw2.data()[i];
        }
        if (b2_node >= 0) {
            auto& buf = tp.grad(b2_node);
            for (int64_t p = 0; p < cells; ++p)
                for (int c = 0; c < c2; ++c) buf[c] += gh2(p, c);
        }

        RowMat gcols2 = gh2 * bw2.transpose();
        std::vector<double> gh1(cells * c1, 0.0);
        col2im_add(gcols2, grid, c1, gh1);
        for (int64_t i = 0; i < cells * c1; ++i)
            if ((*h1pre)[i] <= 0) gh1[i] = 0.0;
        Eigen::Map<RowMat> mgh1(gh1.data(), cells, c1);

        RowMat col1 = im2col(*dense, grid, cin);
        if (w1_node >= 0) {
            RowMat gw1 = col1.transpose() * mgh1;
            auto& buf = tp.grad(w1_node);
            for (int64_t i = 0; i < gw1.size(); ++i) buf[i] += gw1.data()[i];
        }
        if (b1_node >= 0) {
            auto& buf = tp.grad(b1_node);
            for (int64_t p = 0; p < cells; ++p)
                for (int c = 0; c < c1; ++c) buf[c] += mgh1(p, c);
        }
        if (vf_node >= 0) {
            RowMat gcols1 = mgh1 * bw1.transpose();
            std::vector<double> gdense(cells * cin, 0.0);
            col2im_add(gcols1, grid, cin, gdense);
            auto& buf = tp.grad(vf_node);
            for (size_t r = 0; r < occ.size(); ++r)
                for (int ci = 0; ci < cin; ++ci)
                    buf[r * cin + ci] += gdense[static_cast<int64_t>(occ[r]) * cin + ci];
        }
    };
    return ad::make_op(tape, {c2}, std::move(pooled), std::move(parents), std::move(backward));
}

WeightGenerator::WeightGenerator(const WeightGenConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.in_dim <= 0 || cfg.grid <= 0 || cfg.conv_channels <= 0 || cfg.mlp_hidden <= 0)
        throw ConfigError("weight generator: dimensions must be positive");
    std::mt19937_64 rng(seed);
    int c = cfg.conv_channels;
    auto mk = [&](const char* name, int fi, int fo) {
        return ad::Parameter(name, ad::glorot({fi, fo}, fi, fo, rng));
    };
    cw1_ = mk("wgen.conv1.w", 27 * cfg.in_dim, c);
    cb1_ = ad::Parameter("wgen.conv1.b", Tensor::zeros({c}));
    cw2_ = mk("wgen.conv2.w", 27 * c, c);
    cb2_ = ad::Parameter("wgen.conv2.b", Tensor::zeros({c}));
    mw1_ = mk("wgen.mlp.w1", c, cfg.mlp_hidden);
    mb1_ = ad::Parameter("wgen.mlp.b1", Tensor::zeros({cfg.mlp_hidden}));
    mw2_ = mk("wgen.mlp.w2", cfg.mlp_hidden, cfg.layout.total);
    mb2_ = ad::Parameter("wgen.mlp.b2", Tensor::zeros({cfg.layout.total}));
}

std::vector<ad::Parameter*> WeightGenerator::params() {
    return {&cw1_, &cb1_, &cw2_, &cb2_, &mw1_, &mb1_, &mw2_, &mb2_};
}

Tensor WeightGenerator::generate(ad::Session& sess, const group::Cluster& cluster,
                                 const Tensor& backbone_feats, const std::vector<double>& coords) {
    if (cluster.members.empty()) throw DataError("weight generator: empty cluster");
    if (backbone_feats.cols() != cfg_.in_dim)
        throw ShapeError("weight generator: expected feature width " + std::to_string(cfg_.in_dim) +
                         ", got " + ad::shape_str(backbone_feats.shape));
    int g = cfg_.grid;

    // Cluster-anchored cubified grid: the bounding box stretched to its
    // longest edge, split into g^3 cells.
    double lo[3], hi[3];
    for (int c = 0; c < 3; ++c) {
        lo[c] = hi[c] = coords[3 * static_cast<size_t>(cluster.members[0]) + c];
    }
    for (int i : cluster.members)
        for (int c = 0; c < 3; ++c) {
            double v = coords[3 * static_cast<size_t>(i) + c];
            lo[c] = std::min(lo[c], v);
            hi[c] = std::max(hi[c], v);
        }
    double edge = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    double cell = edge > 0 ? edge / g : 1.0;

    std::map<int64_t, int> flat_to_voxel;
    std::vector<int64_t> flats(cluster.members.size());
    for (size_t m = 0; m < cluster.members.size(); ++m) {
        int i = cluster.members[m];
        int64_t f = 0;
        for (int c = 0; c < 3; ++c) {
            int idx = static_cast<int>(std::floor((coords[3 * static_cast<size_t>(i) + c] - lo[c]) / cell));
            idx = std::clamp(idx, 0, g - 1);
            f = f * g + idx;
        }
        flats[m] = f;
        flat_to_voxel.emplace(f, 0);
    }
    std::vector<int> occupied;
    occupied.reserve(flat_to_voxel.size());
    for (auto& [f, idx] : flat_to_voxel) {
        idx = static_cast<int>(occupied.size());
        occupied.push_back(static_cast<int>(f));
    }
    std::vector<int> seg(cluster.members.size());
    for (size_t m = 0; m < cluster.members.size(); ++m) seg[m] = flat_to_voxel[flats[m]];

    Tensor voxel_feats = ad::segment_mean(ad::gather_rows(backbone_feats, cluster.members), seg,
                                          static_cast<int>(occupied.size()));
    Tensor pooled = conv_tower_pool(sess, voxel_feats, occupied, g, sess.use(cw1_),
                                    sess.use(cb1_), sess.use(cw2_), sess.use(cb2_));

    Tensor h = ad::relu(ad::add(ad::matmul(ad::reshape(pooled, {1, cfg_.conv_channels}),
                                           sess.use(mw1_)),
                                sess.use(mb1_)));
    Tensor out = ad::add(ad::matmul(h, sess.use(mw2_)), sess.use(mb2_));
    return ad::reshape(out, {cfg_.layout.total});
}

}  // namespace dyco::model
