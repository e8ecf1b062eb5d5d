#pragma once

#include <json.hpp>
#include <map>

#include "headsup/nn/layers.hpp"
#include "headsup/renderer.hpp"

namespace headsup {

struct ModelConfig {
    int patch_size = 7;
    int patch_dim = 256;  // d
    int fg_channels = 512;  // c
    int fg_enc_stage_blocks = 2;
    int fg_enc_bottleneck_blocks = 4;
    std::vector<int> bg_enc_channels = {128, 64};
    int bg_enc_blocks_per_stage = 2;
    int latent_dim = 512;  // d_z
    int latent_h = 64, latent_w = 64;
    int tf_blocks = 8;
    int tf_heads = 8;
    int tf_mlp = 1024;
    std::vector<int> fg_dec_channels = {512, 256};  // one entry per 2x upsampling stage
    int fg_dec_blocks_per_stage = 2;
    int fg_head_features = 32;
    int bg_latent_dim = 512;  // d_bg
    int bg_base_res = 4;
    std::vector<int> bg_dec_channels = {512, 256, 128, 64, 32, 32, 32, 32};  // base + stages
    float delta_max_fg = 200.0f;
    float delta_max_bg = 10.0f;

    int uv_res() const { return latent_h << fg_dec_channels.size(); }
    int bg_uv_res() const {
        return bg_base_res << (static_cast<int>(bg_dec_channels.size()) - 1);
    }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct LatentGrid {
    nn::Tensor z;     // (d_z, h_z, w_z)
    nn::Tensor z_bg;  // (d_bg)
};

struct FrameInputs {
    std::vector<Image> views;     // 3xHxW each, all the same size
    std::vector<Camera> cameras;  // matched 1:1 with views
};

// Tape-side handles of one forward pass.
struct ForwardIds {
    nn::Id uv_fg = -1, uv_bg = -1;     // raw UV features (23,H,W)
    nn::Id z = -1, z_bg = -1;          // latents
    // decoded flat arrays, foreground and background
    nn::Id fg_pos = -1, fg_scale = -1, fg_rot = -1, fg_opac = -1, fg_sh = -1;
    nn::Id bg_pos = -1, bg_scale = -1, bg_rot = -1, bg_opac = -1, bg_sh = -1;
    // merged scene arrays (fg first)
    nn::Id pos = -1, scale = -1, rot = -1, opac = -1, sh = -1;
};

class HeadsUpModel {
public:
    HeadsUpModel(ModelConfig cfg, AnchorMap fg_anchors, AnchorMap bg_anchors, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const AnchorMap& fg_anchors() const { return fg_anchors_; }
    const AnchorMap& bg_anchors() const { return bg_anchors_; }
    int fg_count() const { return static_cast<int>(fg_texels_.size()); }
    int bg_count() const { return static_cast<int>(bg_texels_.size()); }
    const std::vector<int>& fg_texels() const { return fg_texels_; }

    // per-view patch tokens (d+6, h, w); the image must already be
    // patch-compatible and the camera must match its size
    nn::Id patchify(nn::Tape& t, const Image& view, const Camera& cam) const;

    // latents from N views
    struct Latents {
        nn::Id z, z_bg;
    };
    Latents encode(nn::Tape& t, const FrameInputs& frame, bool training) const;

    nn::Id decode_fg(nn::Tape& t, nn::Id z) const;                   // (23, uv, uv)
    nn::Id decode_bg(nn::Tape& t, nn::Id z_bg, bool training) const; // (23, bg_uv, bg_uv)

    // full pipeline; detach_opacity_scale implements the warm-up rule
    ForwardIds forward(nn::Tape& t, const FrameInputs& frame, bool training,
                       bool detach_opacity_scale) const;

    // inference: run a throwaway tape and materialize the scene + latents
    GaussianScene infer_scene(const FrameInputs& frame, LatentGrid* latents = nullptr) const;

    // resizes views/cameras to the nearest patch-compatible size
    FrameInputs make_compatible(const FrameInputs& frame) const;

private:
    ModelConfig cfg_;
    AnchorMap fg_anchors_, bg_anchors_;
    std::vector<int> fg_texels_, bg_texels_;
    nn::ParamStore params_;

    // modules
    nn::Conv patch_embed_;
    nn::Conv enc_fg_down_;
    std::vector<nn::ResBlockGN> enc_fg_blocks_;
    std::vector<nn::Conv> enc_bg_downs_;
    std::vector<std::vector<nn::ResBlockGN>> enc_bg_blocks_;
    nn::Linear2 enc_bg_mlp1_, enc_bg_mlp2_;
    nn::Param* queries_ = nullptr;
    std::vector<nn::CrossAttnBlock> tf_blocks_;
    nn::LayerNormLayer tf_final_ln_;
    nn::Conv dec_fg_in_;
    std::vector<nn::Conv> dec_fg_stage_convs_;
    std::vector<std::vector<nn::ResBlockGN>> dec_fg_blocks_;
    nn::GroupNormLayer dec_fg_out_norm_;
    nn::Conv dec_fg_out_conv_;
    nn::Conv dec_fg_head_;
    nn::Linear2 dec_bg_in_;
    std::vector<nn::Conv> dec_bg_stage_convs_;
    std::vector<nn::ResBlockBN> dec_bg_blocks_;
    nn::BatchNormLayer dec_bg_out_norm_;
    nn::Conv dec_bg_out_conv_;
    nn::Conv dec_bg_head_;
};

// pixel sizes rounded to the nearest positive multiple of patch
std::pair<int, int> patch_compatible_size(int h, int w, int patch);

// --- tape bridges ------------------------------------------------------------

// decoded Gaussian arrays from raw UV features at the given valid texels;
// `texels` and `anchors` are captured by reference and must outlive the tape
nn::Id decode_positions_op(nn::Tape& t, nn::Id uv, const AnchorMap& anchors,
                           const std::vector<int>& texels, float delta_max);
nn::Id decode_scales_op(nn::Tape& t, nn::Id uv, const std::vector<int>& texels,
                        const DecodeLimits& limits, bool detach);
nn::Id decode_rotations_op(nn::Tape& t, nn::Id uv, const std::vector<int>& texels);
nn::Id decode_opacities_op(nn::Tape& t, nn::Id uv, const std::vector<int>& texels, bool detach);
nn::Id decode_sh_op(nn::Tape& t, nn::Id uv, const std::vector<int>& texels);

// differentiable rasterization; output (4,H,W) = rgb + alpha
nn::Id rasterize_op(nn::Tape& t, nn::Id pos, nn::Id scale, nn::Id rot, nn::Id opac, nn::Id sh,
                    const Camera& cam, const RasterConfig& cfg, const Eigen::Vector3f& clear);

GaussianSet set_from_ids(const nn::Tape& t, nn::Id pos, nn::Id scale, nn::Id rot, nn::Id opac,
                         nn::Id sh);

// --- checkpoints -------------------------------------------------------------

struct CheckpointMeta {
    nlohmann::json extra;  // step, rng, configs, schedules
};

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const nn::ParamStore*>>& sections);

struct LoadedCheckpoint {
    nlohmann::json meta;
    // section -> (name -> tensors)
    struct Entry {
        nn::Tensor w, m, v;
        bool has_optim = false;
    };
    std::map<std::string, std::map<std::string, Entry>> sections;

    // copies matching tensors into the store; throws on shape mismatch or
    // missing params
    void restore(const std::string& section, nn::ParamStore& store) const;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace headsup
