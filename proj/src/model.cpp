#include "headsup/model.hpp"

#include <cstring>
#include <fstream>

#include "headsup/geometry.hpp"
#include "headsup/raster_detail.hpp"

namespace headsup {

using nn::Id;
using nn::Tape;
using nn::Tensor;
using nlohmann::json;

void ModelConfig::validate() const {
    require(patch_size >= 1 && patch_dim >= 1 && fg_channels >= 1 && latent_dim >= 1, "BadConfig",
            "model dimensions must be positive");
    require(latent_dim % tf_heads == 0, "BadConfig", "latent_dim must divide by heads");
    require(!fg_dec_channels.empty(), "BadConfig", "foreground decoder needs >= 1 stage");
    require(bg_dec_channels.size() >= 2, "BadConfig", "background decoder needs >= 1 stage");
    require(latent_h >= 1 && latent_w >= 1 && bg_base_res >= 1, "BadConfig",
            "latent resolutions must be positive");
}

json ModelConfig::to_json() const {
    return json{{"patch_size", patch_size},
                {"patch_dim", patch_dim},
                {"fg_channels", fg_channels},
                {"fg_enc_stage_blocks", fg_enc_stage_blocks},
                {"fg_enc_bottleneck_blocks", fg_enc_bottleneck_blocks},
                {"bg_enc_channels", bg_enc_channels},
                {"bg_enc_blocks_per_stage", bg_enc_blocks_per_stage},
                {"latent_dim", latent_dim},
                {"latent_h", latent_h},
                {"latent_w", latent_w},
                {"tf_blocks", tf_blocks},
                {"tf_heads", tf_heads},
                {"tf_mlp", tf_mlp},
                {"fg_dec_channels", fg_dec_channels},
                {"fg_dec_blocks_per_stage", fg_dec_blocks_per_stage},
                {"fg_head_features", fg_head_features},
                {"bg_latent_dim", bg_latent_dim},
                {"bg_base_res", bg_base_res},
                {"bg_dec_channels", bg_dec_channels},
                {"delta_max_fg", delta_max_fg},
                {"delta_max_bg", delta_max_bg}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.patch_size = j.value("patch_size", c.patch_size);
    c.patch_dim = j.value("patch_dim", c.patch_dim);
    c.fg_channels = j.value("fg_channels", c.fg_channels);
    c.fg_enc_stage_blocks = j.value("fg_enc_stage_blocks", c.fg_enc_stage_blocks);
    c.fg_enc_bottleneck_blocks = j.value("fg_enc_bottleneck_blocks", c.fg_enc_bottleneck_blocks);
    c.bg_enc_channels = j.value("bg_enc_channels", c.bg_enc_channels);
    c.bg_enc_blocks_per_stage = j.value("bg_enc_blocks_per_stage", c.bg_enc_blocks_per_stage);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.latent_h = j.value("latent_h", c.latent_h);
    c.latent_w = j.value("latent_w", c.latent_w);
    c.tf_blocks = j.value("tf_blocks", c.tf_blocks);
    c.tf_heads = j.value("tf_heads", c.tf_heads);
    c.tf_mlp = j.value("tf_mlp", c.tf_mlp);
    c.fg_dec_channels = j.value("fg_dec_channels", c.fg_dec_channels);
    c.fg_dec_blocks_per_stage = j.value("fg_dec_blocks_per_stage", c.fg_dec_blocks_per_stage);
    c.fg_head_features = j.value("fg_head_features", c.fg_head_features);
    c.bg_latent_dim = j.value("bg_latent_dim", c.bg_latent_dim);
    c.bg_base_res = j.value("bg_base_res", c.bg_base_res);
    c.bg_dec_channels = j.value("bg_dec_channels", c.bg_dec_channels);
    c.delta_max_fg = j.value("delta_max_fg", c.delta_max_fg);
    c.delta_max_bg = j.value("delta_max_bg", c.delta_max_bg);
    c.validate();
    return c;
}

std::pair<int, int> patch_compatible_size(int h, int w, int patch) {
    auto round_to = [patch](int v) {
        int m = (v + patch / 2) / patch;
        return std::max(1, m) * patch;
    };
    return {round_to(h), round_to(w)};
}

HeadsUpModel::HeadsUpModel(ModelConfig cfg, AnchorMap fg_anchors, AnchorMap bg_anchors,
                           uint64_t init_seed)
    : cfg_(std::move(cfg)), fg_anchors_(std::move(fg_anchors)), bg_anchors_(std::move(bg_anchors)) {
    cfg_.validate();
    require(fg_anchors_.h == cfg_.uv_res() && fg_anchors_.w == cfg_.uv_res(), "ShapeMismatch",
            "foreground anchor map does not match the UV resolution");
    require(bg_anchors_.h == cfg_.bg_uv_res() && bg_anchors_.w == cfg_.bg_uv_res(),
            "ShapeMismatch", "background anchor map does not match the bg UV resolution");
    for (int i = 0; i < fg_anchors_.h * fg_anchors_.w; ++i)
        if (fg_anchors_.valid[i]) fg_texels_.push_back(i);
    for (int i = 0; i < bg_anchors_.h * bg_anchors_.w; ++i)
        if (bg_anchors_.valid[i]) bg_texels_.push_back(i);

    Rng rng = Rng(init_seed).substream("init");
    auto& ps = params_;
    int dtok = cfg_.patch_dim + 6;

    patch_embed_ = nn::Conv::create(ps, "patch_embed.conv", 3, cfg_.patch_dim, cfg_.patch_size,
                                    cfg_.patch_size, 0, rng);

    enc_fg_down_ = nn::Conv::create(ps, "enc_fg.down", dtok, cfg_.fg_channels, 3, 2, 1, rng);
    for (int i = 0; i < cfg_.fg_enc_stage_blocks + cfg_.fg_enc_bottleneck_blocks; ++i)
        enc_fg_blocks_.push_back(nn::ResBlockGN::create(
            ps, "enc_fg.block" + std::to_string(i), cfg_.fg_channels, rng, false));

    int prev = dtok;
    for (size_t s = 0; s < cfg_.bg_enc_channels.size(); ++s) {
        int ch = cfg_.bg_enc_channels[s];
        enc_bg_downs_.push_back(
            nn::Conv::create(ps, "enc_bg.down" + std::to_string(s), prev, ch, 3, 2, 1, rng));
        std::vector<nn::ResBlockGN> blocks;
        for (int i = 0; i < cfg_.bg_enc_blocks_per_stage; ++i)
            blocks.push_back(nn::ResBlockGN::create(
                ps, "enc_bg.stage" + std::to_string(s) + ".block" + std::to_string(i), ch, rng,
                false));
        enc_bg_blocks_.push_back(std::move(blocks));
        prev = ch;
    }
    enc_bg_mlp1_ = nn::Linear2::create(ps, "enc_bg.mlp1", prev, cfg_.bg_latent_dim, rng);
    enc_bg_mlp2_ =
        nn::Linear2::create(ps, "enc_bg.mlp2", cfg_.bg_latent_dim, cfg_.bg_latent_dim, rng);

    queries_ = &ps.add("transformer.queries",
                       Tensor::randn({cfg_.latent_h * cfg_.latent_w, cfg_.latent_dim}, rng, 0.02f));
    for (int i = 0; i < cfg_.tf_blocks; ++i)
        tf_blocks_.push_back(nn::CrossAttnBlock::create(ps, "transformer.block" + std::to_string(i),
                                                        cfg_.latent_dim, cfg_.fg_channels,
                                                        cfg_.tf_heads, cfg_.tf_mlp, rng));
    tf_final_ln_ = nn::LayerNormLayer::create(ps, "transformer.final_ln", cfg_.latent_dim);

    dec_fg_in_ =
        nn::Conv::create(ps, "dec_fg.in_conv", cfg_.latent_dim, cfg_.fg_dec_channels[0], 3, 1, 1, rng);
    prev = cfg_.fg_dec_channels[0];
    for (size_t s = 0; s < cfg_.fg_dec_channels.size(); ++s) {
        int ch = cfg_.fg_dec_channels[s];
        dec_fg_stage_convs_.push_back(nn::Conv::create(
            ps, "dec_fg.stage" + std::to_string(s) + ".conv", prev, ch, 3, 1, 1, rng));
        std::vector<nn::ResBlockGN> blocks;
        for (int i = 0; i < cfg_.fg_dec_blocks_per_stage; ++i)
            blocks.push_back(nn::ResBlockGN::create(
                ps, "dec_fg.stage" + std::to_string(s) + ".block" + std::to_string(i), ch, rng,
                true));
        dec_fg_blocks_.push_back(std::move(blocks));
        prev = ch;
    }
    dec_fg_out_norm_ = nn::GroupNormLayer::create(ps, "dec_fg.out_norm", prev);
    dec_fg_out_conv_ =
        nn::Conv::create(ps, "dec_fg.out_conv", prev, cfg_.fg_head_features, 3, 1, 1, rng);
    dec_fg_head_ =
        nn::Conv::create(ps, "dec_fg.head", cfg_.fg_head_features, kUVChannels, 1, 1, 0, rng, 0.0f);

    dec_bg_in_ = nn::Linear2::create(
        ps, "dec_bg.in", cfg_.bg_latent_dim,
        cfg_.bg_dec_channels[0] * cfg_.bg_base_res * cfg_.bg_base_res, rng);
    prev = cfg_.bg_dec_channels[0];
    for (size_t s = 1; s < cfg_.bg_dec_channels.size(); ++s) {
        int ch = cfg_.bg_dec_channels[s];
        dec_bg_stage_convs_.push_back(nn::Conv::create(
            ps, "dec_bg.stage" + std::to_string(s - 1) + ".conv", prev, ch, 3, 1, 1, rng));
        dec_bg_blocks_.push_back(nn::ResBlockBN::create(
            ps, "dec_bg.stage" + std::to_string(s - 1) + ".block", ch, rng, true));
        prev = ch;
    }
    dec_bg_out_norm_ = nn::BatchNormLayer::create(ps, "dec_bg.out_norm", prev);
    dec_bg_out_conv_ =
        nn::Conv::create(ps, "dec_bg.out_conv", prev, cfg_.fg_head_features, 3, 1, 1, rng);
    dec_bg_head_ =
        nn::Conv::create(ps, "dec_bg.head", cfg_.fg_head_features, kUVChannels, 1, 1, 0, rng, 0.0f);
}

FrameInputs HeadsUpModel::make_compatible(const FrameInputs& frame) const {
    FrameInputs out;
    out.views.reserve(frame.views.size());
    out.cameras.reserve(frame.cameras.size());
    for (size_t i = 0; i < frame.views.size(); ++i) {
        auto [h, w] = patch_compatible_size(frame.views[i].h, frame.views[i].w, cfg_.patch_size);
        if (h == frame.views[i].h && w == frame.views[i].w) {
            out.views.push_back(frame.views[i]);
            out.cameras.push_back(frame.cameras[i]);
        } else {
            out.views.push_back(resize_bilinear(frame.views[i], h, w));
            out.cameras.push_back(frame.cameras[i].resized(w, h));
        }
    }
    return out;
}

Id HeadsUpModel::patchify(Tape& t, const Image& view, const Camera& cam) const {
    require(view.c == 3, "ShapeMismatch", "views must be RGB");
    require(view.h % cfg_.patch_size == 0 && view.w % cfg_.patch_size == 0, "ShapeMismatch",
            "view size must be a multiple of the patch size");
    require(cam.width == view.w && cam.height == view.h, "ShapeMismatch",
            "camera does not match the view size");
    Id img = t.constant(Tensor({3, view.h, view.w}, view.data));
    Id emb = patch_embed_(t, img);
    int th = view.h / cfg_.patch_size, tw = view.w / cfg_.patch_size;
    Id rays = t.constant(Tensor({6, th, tw}, plucker_map(cam, th, tw)));
    return concat_ch(t, emb, rays);
}

HeadsUpModel::Latents HeadsUpModel::encode(Tape& t, const FrameInputs& frame, bool training) const {
    require(!frame.views.empty(), "NoViews", "encode needs at least one view");
    require(frame.views.size() == frame.cameras.size(), "ShapeMismatch",
            "views/cameras count mismatch");
    for (const auto& v : frame.views)
        require(v.h == frame.views[0].h && v.w == frame.views[0].w, "ShapeMismatch",
                "all views must share one image size");

    std::vector<Id> fg_tokens;
    Id bg_pooled = Tape::kNone;
    for (size_t i = 0; i < frame.views.size(); ++i) {
        Id tok = patchify(t, frame.views[i], frame.cameras[i]);
        // foreground feature path
        Id f = enc_fg_down_(t, tok);
        for (const auto& block : enc_fg_blocks_) f = block(t, f);
        fg_tokens.push_back(to_tokens(t, f));
        // background feature path
        Id b = tok;
        for (size_t s = 0; s < enc_bg_downs_.size(); ++s) {
            b = enc_bg_downs_[s](t, b);
            for (const auto& block : enc_bg_blocks_[s]) b = block(t, b);
        }
        Id pooled = global_avg_pool(t, b);
        bg_pooled = bg_pooled == Tape::kNone ? pooled : add(t, bg_pooled, pooled);
    }
    (void)training;

    Id kv = fg_tokens.size() == 1 ? fg_tokens[0] : concat_rows(t, fg_tokens);
    Id x = t.param(*queries_);
    for (const auto& block : tf_blocks_) x = block(t, x, kv);
    x = tf_final_ln_(t, x);
    Id z = from_tokens(t, x, cfg_.latent_h, cfg_.latent_w);

    Id pooled_mean = scale(t, bg_pooled, 1.0f / static_cast<float>(frame.views.size()));
    Id row = reshape_op(t, pooled_mean, {1, t.val(pooled_mean).dim(0)});
    Id zbg = enc_bg_mlp2_(t, gelu(t, enc_bg_mlp1_(t, row)));
    zbg = reshape_op(t, zbg, {cfg_.bg_latent_dim});
    return {z, zbg};
}

Id HeadsUpModel::decode_fg(Tape& t, Id z) const {
    require(t.val(z).shape == std::vector<int>({cfg_.latent_dim, cfg_.latent_h, cfg_.latent_w}),
            "ShapeMismatch", "latent shape does not match the model config");
    Id x = dec_fg_in_(t, z);
    for (size_t s = 0; s < dec_fg_stage_convs_.size(); ++s) {
        x = upsample_nearest2x(t, x);
        x = dec_fg_stage_convs_[s](t, x);
        for (const auto& block : dec_fg_blocks_[s]) x = block(t, x);
    }
    x = gelu(t, dec_fg_out_norm_(t, x));
    x = gelu(t, dec_fg_out_conv_(t, x));
    return dec_fg_head_(t, x);
}

Id HeadsUpModel::decode_bg(Tape& t, Id z_bg, bool training) const {
    Id row = reshape_op(t, z_bg, {1, cfg_.bg_latent_dim});
    Id x = dec_bg_in_(t, row);
    x = reshape_op(t, x, {cfg_.bg_dec_channels[0], cfg_.bg_base_res, cfg_.bg_base_res});
    for (size_t s = 0; s < dec_bg_stage_convs_.size(); ++s) {
        x = upsample_nearest2x(t, x);
        x = dec_bg_stage_convs_[s](t, x);
        x = dec_bg_blocks_[s](t, x, training);
    }
    x = leaky_relu(t, dec_bg_out_norm_(t, x, training));
    x = leaky_relu(t, dec_bg_out_conv_(t, x));
    return dec_bg_head_(t, x);
}

ForwardIds HeadsUpModel::forward(Tape& t, const FrameInputs& frame, bool training,
                                 bool detach_opacity_scale) const {
    ForwardIds out;
    auto lat = encode(t, frame, training);
    out.z = lat.z;
    out.z_bg = lat.z_bg;
    out.uv_fg = decode_fg(t, lat.z);
    out.uv_bg = decode_bg(t, lat.z_bg, training);

    DecodeLimits limits;
    out.fg_pos = decode_positions_op(t, out.uv_fg, fg_anchors_, fg_texels_, cfg_.delta_max_fg);
    out.fg_scale = decode_scales_op(t, out.uv_fg, fg_texels_, limits, detach_opacity_scale);
    out.fg_rot = decode_rotations_op(t, out.uv_fg, fg_texels_);
    out.fg_opac = decode_opacities_op(t, out.uv_fg, fg_texels_, detach_opacity_scale);
    out.fg_sh = decode_sh_op(t, out.uv_fg, fg_texels_);

    out.bg_pos = decode_positions_op(t, out.uv_bg, bg_anchors_, bg_texels_, cfg_.delta_max_bg);
    out.bg_scale = decode_scales_op(t, out.uv_bg, bg_texels_, limits, detach_opacity_scale);
    out.bg_rot = decode_rotations_op(t, out.uv_bg, bg_texels_);
    out.bg_opac = decode_opacities_op(t, out.uv_bg, bg_texels_, detach_opacity_scale);
    out.bg_sh = decode_sh_op(t, out.uv_bg, bg_texels_);

    out.pos = concat_rows(t, {out.fg_pos, out.bg_pos});
    out.scale = concat_rows(t, {out.fg_scale, out.bg_scale});
    out.rot = concat_rows(t, {out.fg_rot, out.bg_rot});
    out.opac = concat_rows(t, {out.fg_opac, out.bg_opac});
    out.sh = concat_rows(t, {out.fg_sh, out.bg_sh});
    return out;
}

GaussianScene HeadsUpModel::infer_scene(const FrameInputs& frame, LatentGrid* latents) const {
    Tape t(false);
    FrameInputs compat = make_compatible(frame);
    auto ids = forward(t, compat, false, false);
    GaussianScene scene;
    scene.foreground =
        set_from_ids(t, ids.fg_pos, ids.fg_scale, ids.fg_rot, ids.fg_opac, ids.fg_sh);
    scene.background =
        set_from_ids(t, ids.bg_pos, ids.bg_scale, ids.bg_rot, ids.bg_opac, ids.bg_sh);
    if (latents) {
        latents->z = t.val(ids.z);
        latents->z_bg = t.val(ids.z_bg);
    }
    return scene;
}

// --- decode bridges ----------------------------------------------------------

namespace {

inline size_t plane_of(const Tensor& uv) {
    return static_cast<size_t>(uv.dim(1)) * uv.dim(2);
}

}  // namespace

Id decode_positions_op(Tape& t, Id uv, const AnchorMap& anchors, const std::vector<int>& texels,
                       float delta_max) {
    const Tensor& raw = t.val(uv);
    size_t plane = plane_of(raw);
    int n = static_cast<int>(texels.size());
    Tensor out({n, 3});
    for (int i = 0; i < n; ++i) {
        size_t tx = texels[i];
        for (int k = 0; k < 3; ++k)
            out.v[3 * i + k] = anchors.positions[k * plane + tx] +
                               decode_offset(raw.v[(kChanOffset + k) * plane + tx], delta_max);
    }
    return t.apply(std::move(out), {uv}, [uv, &texels, delta_max, plane](Tape& tp, Id self) {
        if (!tp.needs_grad(uv)) return;
        const Tensor& raw = tp.val(uv);
        const Tensor& dy = tp.grad(self);
        Tensor& dr = tp.grad(uv);
        for (size_t i = 0; i < texels.size(); ++i) {
            size_t tx = texels[i];
            for (int k = 0; k < 3; ++k) {
                float th = std::tanh(raw.v[(kChanOffset + k) * plane + tx]);
                dr.v[(kChanOffset + k) * plane + tx] +=
                    dy.v[3 * i + k] * delta_max * (1.0f - th * th);
            }
        }
    });
}

Id decode_scales_op(Tape& t, Id uv, const std::vector<int>& texels, const DecodeLimits& limits,
                    bool detach) {
    const Tensor& raw = t.val(uv);
    size_t plane = plane_of(raw);
    int n = static_cast<int>(texels.size());
    Tensor out({n, 3});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k)
            out.v[3 * i + k] = decode_scale(raw.v[(kChanLogScale + k) * plane + texels[i]],
                                            limits.scale_min_mm, limits.scale_max_mm);
    if (detach) return t.constant(std::move(out));
    return t.apply(std::move(out), {uv}, [uv, &texels, limits, plane](Tape& tp, Id self) {
        if (!tp.needs_grad(uv)) return;
        const Tensor& raw = tp.val(uv);
        const Tensor& dy = tp.grad(self);
        Tensor& dr = tp.grad(uv);
        for (size_t i = 0; i < texels.size(); ++i)
            for (int k = 0; k < 3; ++k) {
                float r = raw.v[(kChanLogScale + k) * plane + texels[i]];
                float e = std::exp(r);
                if (e > limits.scale_min_mm && e < limits.scale_max_mm)  // clamp kills the grad
                    dr.v[(kChanLogScale + k) * plane + texels[i]] += dy.v[3 * i + k] * e;
            }
    });
}

Id decode_rotations_op(Tape& t, Id uv, const std::vector<int>& texels) {
    const Tensor& raw = t.val(uv);
    size_t plane = plane_of(raw);
    int n = static_cast<int>(texels.size());
    Tensor out({n, 4});
    for (int i = 0; i < n; ++i) {
        float q[4], qn[4];
        for (int k = 0; k < 4; ++k) q[k] = raw.v[(kChanQuat + k) * plane + texels[i]];
        decode_quat(q, qn);
        for (int k = 0; k < 4; ++k) out.v[4 * i + k] = qn[k];
    }
    return t.apply(std::move(out), {uv}, [uv, &texels, plane](Tape& tp, Id self) {
        if (!tp.needs_grad(uv)) return;
        const Tensor& raw = tp.val(uv);
        const Tensor& y = tp.val(self);
        const Tensor& dy = tp.grad(self);
        Tensor& dr = tp.grad(uv);
        for (size_t i = 0; i < texels.size(); ++i) {
            float norm2 = 0;
            for (int k = 0; k < 4; ++k) {
                float v = raw.v[(kChanQuat + k) * plane + texels[i]];
                norm2 += v * v;
            }
            float norm = std::sqrt(norm2);
            if (norm < 1e-8f) continue;  // constant branch
            float dot = 0;
            for (int k = 0; k < 4; ++k) dot += y.v[4 * i + k] * dy.v[4 * i + k];
            for (int k = 0; k < 4; ++k)
                dr.v[(kChanQuat + k) * plane + texels[i]] +=
                    (dy.v[4 * i + k] - y.v[4 * i + k] * dot) / norm;
        }
    });
}

Id decode_opacities_op(Tape& t, Id uv, const std::vector<int>& texels, bool detach) {
    const Tensor& raw = t.val(uv);
    size_t plane = plane_of(raw);
    int n = static_cast<int>(texels.size());
    Tensor out({n, 1});
    for (int i = 0; i < n; ++i)
        out.v[i] = decode_opacity(raw.v[kChanOpacity * plane + texels[i]]);
    if (detach) return t.constant(std::move(out));
    return t.apply(std::move(out), {uv}, [uv, &texels, plane](Tape& tp, Id self) {
        if (!tp.needs_grad(uv)) return;
        const Tensor& y = tp.val(self);
        const Tensor& dy = tp.grad(self);
        Tensor& dr = tp.grad(uv);
        for (size_t i = 0; i < texels.size(); ++i)
            dr.v[kChanOpacity * plane + texels[i]] += dy.v[i] * y.v[i] * (1.0f - y.v[i]);
    });
}

Id decode_sh_op(Tape& t, Id uv, const std::vector<int>& texels) {
    const Tensor& raw = t.val(uv);
    size_t plane = plane_of(raw);
    int n = static_cast<int>(texels.size());
    Tensor out({n, 12});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 12; ++k)
            out.v[12 * i + k] = raw.v[(kChanSH + k) * plane + texels[i]];
    return t.apply(std::move(out), {uv}, [uv, &texels, plane](Tape& tp, Id self) {
        if (!tp.needs_grad(uv)) return;
        const Tensor& dy = tp.grad(self);
        Tensor& dr = tp.grad(uv);
        for (size_t i = 0; i < texels.size(); ++i)
            for (int k = 0; k < 12; ++k)
                dr.v[(kChanSH + k) * plane + texels[i]] += dy.v[12 * i + k];
    });
}

Id rasterize_op(Tape& t, Id pos, Id scale, Id rot, Id opac, Id sh, const Camera& cam,
                const RasterConfig& cfg, const Eigen::Vector3f& clear) {
    cfg.validate();
    const Tensor& pv = t.val(pos);
    int n = pv.dim(0);
    require(t.val(scale).dim(0) == n && t.val(rot).dim(0) == n && t.val(opac).dim(0) == n &&
                t.val(sh).dim(0) == n,
            "ShapeMismatch", "gaussian array count mismatch");
    auto camt = raster::make_camera<float>(cam);
    raster::Config rc;
    rc.tile_size = cfg.tile_size;
    rc.alpha_cap = cfg.alpha_cap;
    rc.cutoff = cfg.cutoff;
    rc.near_clip = cfg.near_clip;
    rc.threads = cfg.threads > 0 ? cfg.threads : default_threads();
    float clr[3] = {clear.x(), clear.y(), clear.z()};

    size_t npix = static_cast<size_t>(cam.height) * cam.width;
    Tensor out({4, cam.height, cam.width});
    raster::forward(n, pv.data(), t.val(scale).data(), t.val(rot).data(), t.val(opac).data(),
                    t.val(sh).data(), camt, rc, clr, out.data(), out.data() + 3 * npix);
    return t.apply(std::move(out), {pos, scale, rot, opac, sh},
                   [pos, scale, rot, opac, sh, camt, rc, clr0 = clr[0], clr1 = clr[1],
                    clr2 = clr[2], n, npix](Tape& tp, Id self) {
                       const Tensor& dy = tp.grad(self);
                       float clr[3] = {clr0, clr1, clr2};
                       raster::backward(n, tp.val(pos).data(), tp.val(scale).data(),
                                        tp.val(rot).data(), tp.val(opac).data(), tp.val(sh).data(),
                                        camt, rc, clr, dy.data(), dy.data() + 3 * npix,
                                        tp.grad(pos).data(), tp.grad(scale).data(),
                                        tp.grad(rot).data(), tp.grad(opac).data(),
                                        tp.grad(sh).data());
                   });
}

GaussianSet set_from_ids(const Tape& t, Id pos, Id scale, Id rot, Id opac, Id sh) {
    GaussianSet s;
    s.resize(t.val(pos).dim(0));
    s.positions = t.val(pos).v;
    s.scales = t.val(scale).v;
    s.rotations = t.val(rot).v;
    s.opacities = t.val(opac).v;
    s.sh_coeffs = t.val(sh).v;
    return s;
}

// --- checkpoints -------------------------------------------------------------

namespace {
constexpr uint32_t kCkptVersion = 1;
}

void save_checkpoint(const std::string& path, const json& meta,
                     const std::vector<std::pair<std::string, const nn::ParamStore*>>& sections) {
    json index;
    index["meta"] = meta;
    index["sections"] = json::array();
    for (const auto& [name, store] : sections) {
        json sec;
        sec["name"] = name;
        sec["params"] = json::array();
        for (const auto& p : store->items) {
            bool optim = p.trainable && p.adam_m.numel() == p.w.numel();
            sec["params"].push_back(json{{"name", p.name},
                                         {"shape", p.w.shape},
                                         {"trainable", p.trainable},
                                         {"optim", optim}});
        }
        index["sections"].push_back(std::move(sec));
    }
    std::string js = index.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) fail("IOError", "cannot open for write: " + path);
    f.write("HSCP", 4);
    uint32_t ver = kCkptVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    uint64_t jlen = js.size();
    f.write(reinterpret_cast<const char*>(&jlen), 8);
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& [name, store] : sections) {
        for (const auto& p : store->items) {
            f.write(reinterpret_cast<const char*>(p.w.data()),
                    static_cast<std::streamsize>(p.w.numel() * sizeof(float)));
            if (p.trainable && p.adam_m.numel() == p.w.numel()) {
                f.write(reinterpret_cast<const char*>(p.adam_m.data()),
                        static_cast<std::streamsize>(p.adam_m.numel() * sizeof(float)));
                f.write(reinterpret_cast<const char*>(p.adam_v.data()),
                        static_cast<std::streamsize>(p.adam_v.numel() * sizeof(float)));
            }
        }
    }
    if (!f) fail("IOError", "checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "HSCP", 4) != 0) fail("BadMagic", "not a checkpoint: " + path);
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kCkptVersion)
        fail("VersionMismatch", "checkpoint version " + std::to_string(ver) + ": " + path);
    uint64_t jlen = 0;
    f.read(reinterpret_cast<char*>(&jlen), 8);
    if (!f) fail("TruncatedFile", "checkpoint header truncated: " + path);
    std::string js(jlen, '\0');
    f.read(js.data(), static_cast<std::streamsize>(jlen));
    if (!f) fail("TruncatedFile", "checkpoint index truncated: " + path);
    json index = json::parse(js, nullptr, false);
    if (index.is_discarded()) fail("BadAsset", "checkpoint index is not valid JSON: " + path);

    LoadedCheckpoint out;
    out.meta = index.at("meta");
    for (const auto& sec : index.at("sections")) {
        auto& m = out.sections[sec.at("name").get<std::string>()];
        for (const auto& pj : sec.at("params")) {
            LoadedCheckpoint::Entry e;
            std::vector<int> shape = pj.at("shape").get<std::vector<int>>();
            e.w = Tensor(shape);
            f.read(reinterpret_cast<char*>(e.w.data()),
                   static_cast<std::streamsize>(e.w.numel() * sizeof(float)));
            e.has_optim = pj.value("optim", false);
            if (e.has_optim) {
                e.m = Tensor(shape);
                e.v = Tensor(shape);
                f.read(reinterpret_cast<char*>(e.m.data()),
                       static_cast<std::streamsize>(e.m.numel() * sizeof(float)));
                f.read(reinterpret_cast<char*>(e.v.data()),
                       static_cast<std::streamsize>(e.v.numel() * sizeof(float)));
            }
            if (!f) fail("TruncatedFile", "checkpoint payload truncated: " + path);
            m.emplace(pj.at("name").get<std::string>(), std::move(e));
        }
    }
    return out;
}

void LoadedCheckpoint::restore(const std::string& section, nn::ParamStore& store) const {
    auto it = sections.find(section);
    require(it != sections.end(), "BadAsset", "checkpoint has no section '" + section + "'");
    require(it->second.size() == store.items.size(), "BadAsset",
            "checkpoint parameter count mismatch in section '" + section + "'");
    for (auto& p : store.items) {
        auto pit = it->second.find(p.name);
        require(pit != it->second.end(), "BadAsset", "checkpoint misses parameter " + p.name);
        require(pit->second.w.shape == p.w.shape, "BadAsset",
                "checkpoint shape mismatch for " + p.name);
        p.w = pit->second.w;
        if (pit->second.has_optim) {
            p.adam_m = pit->second.m;
            p.adam_v = pit->second.v;
        }
    }
}

}  // namespace headsup
