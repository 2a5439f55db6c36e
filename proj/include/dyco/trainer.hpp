#pragma once

// End-to-end optimization: model bundle, two-phase schedule, total loss,
// checkpointing with bit-exact resume, and the full inference/eval path.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dyco/checkpoint.hpp"
#include "dyco/decoder.hpp"
#include "dyco/encoder.hpp"
#include "dyco/heads.hpp"
#include "dyco/grouping.hpp"
#include "dyco/inference.hpp"
#include "dyco/metrics.hpp"
#include "dyco/scene.hpp"
#include "dyco/weight_generator.hpp"

namespace dyco::train {

struct ModelConfig {
    int classes = 3;        // instance classes; background is label `classes`
    int feat_dim = 16;      // backbone width D
    int mask_dim = 8;       // F_mask width
    int decoder_hidden = 8; // h of the dynamic decoder
    int grid = 14;          // voxel grid g
    int conv_channels = 8;
    int mlp_hidden = 64;
    int attn_cap = 256;     // attention subset size
    int input_dim = 3;      // per-point input features

    int num_classes() const { return classes + 1; }
    int background() const { return classes; }

    std::map<std::string, std::string> to_meta() const;
    static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
};

struct Model {
    ModelConfig cfg;
    model::Encoder encoder;
    model::Heads heads;
    model::WeightGenerator wgen;

    Model(const ModelConfig& c, uint64_t seed);
    std::vector<ad::Parameter*> params();
};

void save_model(const std::string& path, Model& model,
                const std::map<std::string, std::string>& extra_meta);
// Returns the model plus the checkpoint meta (for resume bookkeeping).
std::pair<std::unique_ptr<Model>, std::map<std::string, std::string>> load_model(
    const std::string& path);

// ---- training ------------------------------------------------------------

struct TrainConfig {
    int warmup_iters = 600;
    int total_iters = 3000;
    double lr = 0.003;
    double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
    int batch = 4;
    double radius = 0.03;
    int min_cluster = 50;
    double w_seg = 1.0, w_ctr = 1.0, w_mask = 1.0, w_dice = 1.0;
    uint64_t seed = 0;
    int checkpoint_every = 500;
    bool augment = true;
    ModelConfig model;

    void validate() const;
};

// key=value lines, '#' comments; unknown keys are a ConfigError.
TrainConfig parse_train_config(const std::string& text);
void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value);

struct StepStats {
    int iter = 0;
    double l_seg = 0, l_ctr = 0, l_mask = 0, l_dice = 0, total = 0;
    int clusters = 0;
};

class Trainer {
public:
    Trainer(Model& model, const TrainConfig& cfg);

    // One optimizer step over a batch drawn from `scenes` with this
    // trainer's RNG. Throws TrainError with a per-term dump on non-finite
    // loss.
    StepStats step(const std::vector<data::Scene>& scenes);

    // Runs to total_iters, checkpointing to ckpt_path every
    // checkpoint_every iterations and at the end. `on_step` may be null.
    void run(const std::vector<data::Scene>& scenes, const std::string& ckpt_path,
             const std::function<void(const StepStats&)>& on_step);

    int iteration() const { return iter_; }
    void restore(int iter, const std::string& rng_state);
    std::map<std::string, std::string> state_meta() const;

private:
    Model& model_;
    TrainConfig cfg_;
    std::mt19937_64 rng_;
    int iter_ = 0;
};

// Shared loss assembly; exposed for gradient tests. Returns the scalar
// total plus the individual (already weighted-for-phase) terms.
struct LossTerms {
    ad::Tensor total, seg, ctr, mask, dice;
    int clusters = 0;
    // Hash of the grouping decisions (cluster labels and memberships).
    // Finite-difference checks use it to reject probes whose +h/-h
    // evaluations fall on different clustering branches, where the loss is
    // genuinely non-differentiable.
    uint64_t branch_digest = 0;
};
LossTerms batch_loss(ad::Session& sess, Model& model, const std::vector<const data::Scene*>& batch,
                     const TrainConfig& cfg, bool phase2);

// ---- inference / evaluation ----------------------------------------------

struct InferConfig {
    double radius = 0.03;
    int min_cluster = 50;
    infer::FinalizeConfig finalize;
};

std::vector<infer::FinalInstance> infer_scene(Model& model, const data::Scene& scene,
                                              const InferConfig& cfg);

std::vector<infer::InstanceRecord> predict_records(Model& model,
                                                   const std::vector<data::Scene>& scenes,
                                                   const InferConfig& cfg, int jobs = 1);
std::vector<infer::InstanceRecord> gt_records(const std::vector<data::Scene>& scenes);

eval::EvalReport evaluate_model(Model& model, const std::vector<data::Scene>& scenes,
                                const InferConfig& cfg, int jobs = 1);

}  // namespace dyco::train
