#include "dyco/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

namespace dyco::train {

using ad::Tensor;

namespace {

model::EncoderConfig encoder_config(const ModelConfig& c) {
    model::EncoderConfig e;
    e.input_dim = c.input_dim;
    e.out_dim = c.feat_dim;
    e.attn_cap = c.attn_cap;
    return e;
}

model::HeadsConfig heads_config(const ModelConfig& c) {
    model::HeadsConfig h;
    h.in_dim = c.feat_dim;
    h.num_classes = c.num_classes();
    h.mask_dim = c.mask_dim;
    return h;
}

model::WeightGenConfig wgen_config(const ModelConfig& c) {
    model::WeightGenConfig w;
    w.in_dim = c.feat_dim;
    w.grid = c.grid;
    w.conv_channels = c.conv_channels;
    w.mlp_hidden = c.mlp_hidden;
    w.layout = model::WeightLayout::make(c.mask_dim, c.decoder_hidden);
    return w;
}

uint64_t derive(uint64_t seed, uint64_t salt) {
    std::mt19937_64 rng(seed ^ (salt * 0x9e3779b97f4a7c15ull));
    return rng();
}

int meta_int(const std::map<std::string, std::string>& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw DataError("checkpoint meta missing key '" + key + "'");
    return std::stoi(it->second);
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_meta() const {
    return {{"classes", std::to_string(classes)},
            {"feat_dim", std::to_string(feat_dim)},
            {"mask_dim", std::to_string(mask_dim)},
            {"decoder_hidden", std::to_string(decoder_hidden)},
            {"grid", std::to_string(grid)},
            {"conv_channels", std::to_string(conv_channels)},
            {"mlp_hidden", std::to_string(mlp_hidden)},
            {"attn_cap", std::to_string(attn_cap)},
            {"input_dim", std::to_string(input_dim)}};
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
    ModelConfig c;
    c.classes = meta_int(meta, "classes");
    c.feat_dim = meta_int(meta, "feat_dim");
    c.mask_dim = meta_int(meta, "mask_dim");
    c.decoder_hidden = meta_int(meta, "decoder_hidden");
    c.grid = meta_int(meta, "grid");
    c.conv_channels = meta_int(meta, "conv_channels");
    c.mlp_hidden = meta_int(meta, "mlp_hidden");
    c.attn_cap = meta_int(meta, "attn_cap");
    c.input_dim = meta_int(meta, "input_dim");
    return c;
}

Model::Model(const ModelConfig& c, uint64_t seed)
    : cfg(c),
      encoder(encoder_config(c), derive(seed, 1)),
      heads(heads_config(c), derive(seed, 2)),
      wgen(wgen_config(c), derive(seed, 3)) {}

std::vector<ad::Parameter*> Model::params() {
    std::vector<ad::Parameter*> all;
    for (auto* p : encoder.params()) all.push_back(p);
    for (auto* p : heads.params()) all.push_back(p);
    for (auto* p : wgen.params()) all.push_back(p);
    return all;
}

void save_model(const std::string& path, Model& model,
                const std::map<std::string, std::string>& extra_meta) {
    Checkpoint ckpt;
    ckpt.meta = model.cfg.to_meta();
    for (const auto& [k, v] : extra_meta) ckpt.meta[k] = v;
    for (ad::Parameter* p : model.params()) ckpt.params.push_back(*p);
    save_checkpoint(path, ckpt);
}

std::pair<std::unique_ptr<Model>, std::map<std::string, std::string>> load_model(
    const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    auto model = std::make_unique<Model>(ModelConfig::from_meta(ckpt.meta), 0);
    std::map<std::string, const ad::Parameter*> by_name;
    for (const auto& p : ckpt.params) by_name[p.name] = &p;
    for (ad::Parameter* p : model->params()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw DataError("checkpoint " + path + " is missing parameter '" + p->name + "'");
        const ad::Parameter& src = *it->second;
        if (src.value.shape != p->value.shape)
            throw DataError("checkpoint parameter '" + p->name + "' has shape " +
                            ad::shape_str(src.value.shape) + ", expected " +
                            ad::shape_str(p->value.shape));
        *p->value.data = *src.value.data;
        p->m = src.m;
        p->v = src.v;
        p->step = src.step;
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw DataError("checkpoint " + path + " has unknown parameter '" +
                        by_name.begin()->first + "'");
    return {std::move(model), ckpt.meta};
}

// ---- config --------------------------------------------------------------

void TrainConfig::validate() const {
    if (warmup_iters < 0 || total_iters <= 0 || warmup_iters >= total_iters)
        throw ConfigError("train config: need 0 <= warmup_iters < total_iters");
    if (lr <= 0) throw ConfigError("train config: lr must be positive");
    if (batch <= 0) throw ConfigError("train config: batch must be positive");
    if (radius <= 0) throw ConfigError("train config: radius must be positive");
    if (min_cluster < 1) throw ConfigError("train config: min_cluster must be >= 1");
    if (checkpoint_every <= 0) throw ConfigError("train config: checkpoint_every must be positive");
}

void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "warmup_iters") cfg.warmup_iters = std::stoi(value);
        else if (key == "total_iters") cfg.total_iters = std::stoi(value);
        else if (key == "lr") cfg.lr = std::stod(value);
        else if (key == "clip_norm") cfg.clip_norm = std::stod(value);
        else if (key == "batch") cfg.batch = std::stoi(value);
        else if (key == "radius") cfg.radius = std::stod(value);
        else if (key == "min_cluster") cfg.min_cluster = std::stoi(value);
        else if (key == "w_seg") cfg.w_seg = std::stod(value);
        else if (key == "w_ctr") cfg.w_ctr = std::stod(value);
        else if (key == "w_mask") cfg.w_mask = std::stod(value);
        else if (key == "w_dice") cfg.w_dice = std::stod(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(value);
        else if (key == "augment") cfg.augment = std::stoi(value) != 0;
        else if (key == "classes") cfg.model.classes = std::stoi(value);
        else if (key == "feat_dim") cfg.model.feat_dim = std::stoi(value);
        else if (key == "mask_dim") cfg.model.mask_dim = std::stoi(value);
        else if (key == "decoder_hidden") cfg.model.decoder_hidden = std::stoi(value);
        else if (key == "grid") cfg.model.grid = std::stoi(value);
        else if (key == "conv_channels") cfg.model.conv_channels = std::stoi(value);
        else if (key == "mlp_hidden") cfg.model.mlp_hidden = std::stoi(value);
        else if (key == "attn_cap") cfg.model.attn_cap = std::stoi(value);
        else if (key == "input_dim") cfg.model.input_dim = std::stoi(value);
        else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("train config: bad value '" + value + "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("train config: value '" + value + "' out of range for key '" + key + "'");
    }
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("train config line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

// ---- loss assembly -------------------------------------------------------

LossTerms batch_loss(ad::Session& sess, Model& model, const std::vector<const data::Scene*>& batch,
                     const TrainConfig& cfg, bool phase2) {
    if (batch.empty()) throw DataError("batch loss: empty batch");
    const auto& layout = model.wgen.config().layout;
    std::set<int> ignore{model.cfg.background()};

    LossTerms terms;
    Tensor seg_sum, ctr_sum;
    std::vector<model::ClusterDecode> decodes;
    bool first = true;
    for (const data::Scene* scene : batch) {
        Tensor fb = model.encoder.encode(sess, *scene);
        auto outs = model.heads.forward(sess, fb);
        Tensor lseg = model::loss_seg(sess, outs.seg, *scene);
        Tensor lctr = model::loss_ctr(sess, outs.off, *scene, model.heads.config().offset_norm);
        seg_sum = first ? lseg : ad::add(seg_sum, lseg);
        ctr_sum = first ? lctr : ad::add(ctr_sum, lctr);
        first = false;

        if (!phase2) continue;
        auto labels = model::semantic_labels(outs.seg);
        auto shifted = group::shift_points(scene->coords, outs.off.values());
        auto clusters = group::group_points(shifted, labels, cfg.radius, cfg.min_cluster, ignore);
        terms.clusters += static_cast<int>(clusters.size());
        auto mix = [&](uint64_t v) {
            terms.branch_digest = (terms.branch_digest ^ v) * 0x100000001b3ull;
        };
        for (int l : labels) mix(static_cast<uint64_t>(l) + 2);
        for (const auto& cl : clusters) {
            mix(static_cast<uint64_t>(cl.label) + 2);
            for (int m : cl.members) mix(static_cast<uint64_t>(m) + 2);
        }
        for (const auto& cl : clusters) {
            auto [label, centroid] = group::cluster_stats(cl.members, scene->coords, labels);
            Tensor weights = model.wgen.generate(sess, cl, fb, scene->coords);

            std::vector<int> scope;
            for (int i = 0; i < scene->num_points(); ++i)
                if (labels[i] == label) scope.push_back(i);
            int gt = model::assign_gt(cl, scene->inst_labels);

            std::vector<double> scope_coords(scope.size() * 3);
            std::vector<double> targets(scope.size(), 0.0);
            for (size_t j = 0; j < scope.size(); ++j) {
                for (int c = 0; c < 3; ++c)
                    scope_coords[3 * j + c] = scene->coords[3 * scope[j] + c];
                if (gt != -1 && scene->inst_labels[scope[j]] == gt) targets[j] = 1.0;
            }
            model::ClusterDecode dec;
            dec.cluster_id = cl.id;
            dec.scope = scope;
            dec.targets = std::move(targets);
            dec.logits = model::dynamic_forward(
                weights, layout,
                model::assemble(ad::gather_rows(outs.mask, scope),
                                model::position_embed(scope_coords, centroid)));
            decodes.push_back(std::move(dec));
        }
    }
    double inv_b = 1.0 / static_cast<double>(batch.size());
    terms.seg = ad::scale(seg_sum, inv_b);
    terms.ctr = ad::scale(ctr_sum, inv_b);
    terms.total = ad::add(ad::scale(terms.seg, cfg.w_seg), ad::scale(terms.ctr, cfg.w_ctr));
    if (phase2) {
        auto ml = model::mask_losses(sess, decodes);
        terms.mask = ml.bce;
        terms.dice = ml.dice;
        if (ml.used_clusters > 0)
            terms.total = ad::add(terms.total, ad::add(ad::scale(terms.mask, cfg.w_mask),
                                                       ad::scale(terms.dice, cfg.w_dice)));
    } else {
        terms.mask = Tensor::zeros({1});
        terms.dice = Tensor::zeros({1});
    }
    return terms;
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(Model& model, const TrainConfig& cfg) : model_(model), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
}

StepStats Trainer::step(const std::vector<data::Scene>& scenes) {
    if (scenes.empty()) throw DataError("train step: empty dataset");
    std::uniform_int_distribution<size_t> pick(0, scenes.size() - 1);
    std::vector<data::Scene> staged;
    staged.reserve(cfg_.batch);
    for (int b = 0; b < cfg_.batch; ++b) {
        const data::Scene& base = scenes[pick(rng_)];
        staged.push_back(cfg_.augment ? data::augment(base, rng_()) : base);
    }
    std::vector<const data::Scene*> batch;
    for (const auto& s : staged) batch.push_back(&s);

    bool phase2 = iter_ >= cfg_.warmup_iters;
    ad::Session sess(true);
    LossTerms terms = batch_loss(sess, model_, batch, cfg_, phase2);

    StepStats st;
    st.iter = iter_;
    st.l_seg = terms.seg.scalar();
    st.l_ctr = terms.ctr.scalar();
    st.l_mask = terms.mask.scalar();
    st.l_dice = terms.dice.scalar();
    st.total = terms.total.scalar();
    st.clusters = terms.clusters;
    if (!std::isfinite(st.total)) {
        std::ostringstream os;
        os << "train step " << iter_ << ": non-finite loss (seg=" << st.l_seg
           << " ctr=" << st.l_ctr << " mask=" << st.l_mask << " dice=" << st.l_dice << ")";
        throw TrainError(os.str());
    }
    sess.backward(terms.total);
    ad::AdamConfig adam;
    adam.lr = cfg_.lr;
    sess.apply_adam(adam, cfg_.clip_norm);
    ++iter_;
    return st;
}

void Trainer::run(const std::vector<data::Scene>& scenes, const std::string& ckpt_path,
                  const std::function<void(const StepStats&)>& on_step) {
    while (iter_ < cfg_.total_iters) {
        StepStats st = step(scenes);
        if (on_step) on_step(st);
        if (!ckpt_path.empty() && (iter_ % cfg_.checkpoint_every == 0 || iter_ == cfg_.total_iters))
            save_model(ckpt_path, model_, state_meta());
    }
}

void Trainer::restore(int iter, const std::string& rng_state) {
    iter_ = iter;
    std::istringstream is(rng_state);
    is >> rng_;
    if (is.fail()) throw DataError("trainer restore: malformed RNG state");
}

std::map<std::string, std::string> Trainer::state_meta() const {
    std::ostringstream os;
    os << rng_;
    return {{"iteration", std::to_string(iter_)}, {"rng", os.str()}};
}

// ---- inference / evaluation ----------------------------------------------

std::vector<infer::FinalInstance> infer_scene(Model& model, const data::Scene& scene,
                                              const InferConfig& cfg) {
    ad::Session sess(false);
    Tensor fb = model.encoder.encode(sess, scene);
    auto outs = model.heads.forward(sess, fb);
    Tensor probs = ad::softmax_rows(outs.seg);
    auto labels = model::semantic_labels(outs.seg);
    auto shifted = group::shift_points(scene.coords, outs.off.values());
    std::set<int> ignore{model.cfg.background()};
    auto clusters = group::group_points(shifted, labels, cfg.radius, cfg.min_cluster, ignore);

    const auto& layout = model.wgen.config().layout;
    std::vector<infer::MaskPrediction> preds;
    for (const auto& cl : clusters) {
        auto [label, centroid] = group::cluster_stats(cl.members, scene.coords, labels);
        Tensor weights = model.wgen.generate(sess, cl, fb, scene.coords);
        std::vector<int> scope;
        for (int i = 0; i < scene.num_points(); ++i)
            if (labels[i] == label) scope.push_back(i);
        std::vector<double> scope_coords(scope.size() * 3);
        for (size_t j = 0; j < scope.size(); ++j)
            for (int c = 0; c < 3; ++c) scope_coords[3 * j + c] = scene.coords[3 * scope[j] + c];
        Tensor logits = model::dynamic_forward(
            weights, layout,
            model::assemble(ad::gather_rows(outs.mask, scope),
                            model::position_embed(scope_coords, centroid)));
        infer::MaskPrediction p;
        p.cluster_id = cl.id;
        p.label = label;
        for (size_t j = 0; j < scope.size(); ++j)
            if (logits[static_cast<int64_t>(j)] > 0) p.foreground.push_back(scope[j]);
        if (!p.foreground.empty()) preds.push_back(std::move(p));
    }
    return infer::finalize(scene, std::move(preds), probs.values(), model.cfg.num_classes(),
                           cfg.finalize);
}

std::vector<infer::InstanceRecord> predict_records(Model& model,
                                                   const std::vector<data::Scene>& scenes,
                                                   const InferConfig& cfg, int jobs) {
    std::vector<std::vector<infer::InstanceRecord>> per_scene(scenes.size());
    auto work = [&](size_t i) {
        for (const auto& fi : infer_scene(model, scenes[i], cfg)) {
            infer::InstanceRecord r;
            r.scene_id = scenes[i].id;
            r.category = fi.category;
            r.score = fi.score;
            r.mask = fi.mask;
            per_scene[i].push_back(std::move(r));
        }
    };
    if (jobs <= 1) {
        for (size_t i = 0; i < scenes.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back([&] {
                for (size_t i = next++; i < scenes.size(); i = next++) work(i);
            });
        for (auto& t : pool) t.join();
    }
    std::vector<infer::InstanceRecord> out;
    for (auto& v : per_scene)
        for (auto& r : v) out.push_back(std::move(r));
    return out;
}

std::vector<infer::InstanceRecord> gt_records(const std::vector<data::Scene>& scenes) {
    std::vector<infer::InstanceRecord> out;
    for (const auto& s : scenes)
        for (const auto& inst : data::instances_of(s)) {
            infer::InstanceRecord r;
            r.scene_id = s.id;
            r.category = inst.sem_label;
            r.score = 1.0;
            r.mask = inst.members;
            out.push_back(std::move(r));
        }
    return out;
}

eval::EvalReport evaluate_model(Model& model, const std::vector<data::Scene>& scenes,
                                const InferConfig& cfg, int jobs) {
    return eval::evaluate_records(predict_records(model, scenes, cfg, jobs), gt_records(scenes),
                                  scenes, model.cfg.num_classes());
}

}  // namespace dyco::train
