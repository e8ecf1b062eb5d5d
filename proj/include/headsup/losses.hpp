#pragma once

#include <json.hpp>
#include <memory>
#include <optional>

#include "headsup/gaussians.hpp"
#include "headsup/nn/layers.hpp"

namespace headsup {

// Loss weights and schedules. Schedules are fractions of total steps so the
// paper-scale recipe (100K anneal and 240K adversarial start of a 900K run)
// maps proportionally onto shorter runs.
struct LossWeights {
    double lambda_l1 = 1.0;
    double lambda_lpips = 0.1;
    double lambda_adv = 0.25;
    double lambda_pos_start = 1.0, lambda_pos_end = 0.01;
    double lambda_mask_start = 2.0, lambda_mask_end = 0.1;
    double lambda_tv = 10.0;
    double anneal_frac = 100.0 / 900.0;
    double adv_start_frac = 240.0 / 900.0;
    int warmup_steps = 1000;

    void validate() const;

    double lambda_pos(int step, int total_steps) const;
    double lambda_mask(int step, int total_steps) const;
    bool adv_active(int step, int total_steps) const;
    bool in_warmup(int step) const { return step < warmup_steps; }

    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

struct LossTerm {
    std::string name;
    double raw = 0.0;
    double weight = 0.0;
    double weighted = 0.0;
};

struct LossReport {
    int step = 0;
    int total_steps = 0;
    int stage = 1;
    std::vector<LossTerm> terms;
    double total = 0.0;

    // total == sum of weighted terms, within 1e-6 relative
    void self_check() const;
    const LossTerm* find(const std::string& name) const;

    static std::string csv_header();
    std::string csv_row() const;
    std::string jsonl_row() const;
};

// raw per-term values; adv_g is the generator-side hinge term
struct LossParts {
    double l1 = 0, lpips = 0, adv_g = 0, pos = 0, mask = 0, tv = 0, region = 0;
    bool has_region = false;
};

LossReport total_loss(int step, int total_steps, const LossParts& parts, const LossWeights& w,
                      int stage = 1);

// streaming CSV + JSONL sink
class MetricLog {
public:
    MetricLog() = default;
    MetricLog(const std::string& csv_path, const std::string& jsonl_path);
    void write(const LossReport& report);

private:
    std::shared_ptr<std::ofstream> csv_, jsonl_;
    bool wrote_header_ = false;
};

// --- differentiable loss terms ------------------------------------------------

// mean |a - b|
nn::Id l1_loss_op(nn::Tape& t, nn::Id render, nn::Id target);

// pluggable perceptual feature stack
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<nn::Id> features(nn::Tape& t, nn::Id img) const = 0;
    virtual bool normalize_features() const { return true; }
};

// raw image as the single feature level (reduces the distance to plain L2)
class IdentityFeatures : public FeatureExtractor {
public:
    std::vector<nn::Id> features(nn::Tape& t, nn::Id img) const override { return {img}; }
    bool normalize_features() const override { return false; }
};

// fixed random-weight convolutional pyramid, 5 levels, channel-normalized
// differences; deterministic in the seed
class RandomConvPyramid : public FeatureExtractor {
public:
    explicit RandomConvPyramid(uint64_t seed);
    std::vector<nn::Id> features(nn::Tape& t, nn::Id img) const override;

private:
    mutable nn::ParamStore params_;
    std::vector<nn::Conv> convs_;
};

// LPIPS-style distance at one scale
nn::Id perceptual_distance_op(nn::Tape& t, nn::Id a, nn::Id b, const FeatureExtractor& net);

// sum over scales k=0..2 of the distance at 2^k bilinear downsampling
nn::Id multiscale_perceptual_op(nn::Tape& t, nn::Id render, nn::Id target,
                                const FeatureExtractor& net);

// mean Euclidean distance (mm) between decoded positions (N,3) and
// supervision targets (N,3)
nn::Id position_reg_op(nn::Tape& t, nn::Id positions, const nn::Tensor& targets);

// gathers the anchor positions of the map's valid texels as an (N,3) tensor
nn::Tensor anchor_targets(const AnchorMap& map);

// mean |alpha - mask|
nn::Id mask_loss_op(nn::Tape& t, nn::Id alpha, nn::Id gt_mask);

// total variation over the UV DC color channels; only neighbor pairs whose
// texels are both valid contribute. `uv` is the raw 23-channel map.
nn::Id tv_loss_op(nn::Tape& t, nn::Id uv, const AnchorMap& anchors);

// --- adversarial --------------------------------------------------------------

// strided convolutional patch discriminator with spectral normalization
class Discriminator {
public:
    explicit Discriminator(uint64_t seed, int base_channels = 32);
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // patch logits (1,h,w); update_power_iter advances the spectral-norm
    // power iteration (training only)
    nn::Id logits(nn::Tape& t, nn::Id img, bool update_power_iter) const;

private:
    mutable nn::ParamStore params_;
    struct Layer {
        nn::Param* w;
        nn::Param* b;
        nn::Param* u;
        int stride;
        int pad;
    };
    std::vector<Layer> layers_;
};

// uniform crop offset for a (cw x ch) crop of an (w x h) image; clamps to the
// full image when smaller than the crop
struct CropRect2D {
    int x0, y0, w, h;
};
CropRect2D sample_crop(int img_w, int img_h, int crop, Rng& rng);

nn::Id crop_op(nn::Tape& t, nn::Id img, const CropRect2D& rect);

// hinge GAN pair on aligned crops; fake is detached inside the d_loss
struct AdvPair {
    nn::Id g_loss;
    nn::Id d_loss;
};
AdvPair adversarial_pair(nn::Tape& t, nn::Id render_crop, nn::Id real_crop,
                         const Discriminator& disc, bool update_power_iter);

}  // namespace headsup
