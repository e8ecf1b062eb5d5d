#include <doctest.h>

#include <filesystem>

#include "headsup/model.hpp"

using namespace headsup;
using nn::Id;
using nn::Tape;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

// two UV triangles covering the whole [0,1]^2 atlas on a flat quad
TemplateMesh full_quad_mesh(double extent, double z) {
    TemplateMesh m;
    m.vertices = {{-extent, -extent, z}, {extent, -extent, z}, {extent, extent, z},
                  {-extent, extent, z}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    m.uv_coords = {{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1)},
                   {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 1)}};
    return m;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.patch_size = 7;
    cfg.patch_dim = 16;
    cfg.fg_channels = 32;
    cfg.fg_enc_stage_blocks = 1;
    cfg.fg_enc_bottleneck_blocks = 1;
    cfg.bg_enc_channels = {16, 8};
    cfg.bg_enc_blocks_per_stage = 1;
    cfg.latent_dim = 32;
    cfg.latent_h = cfg.latent_w = 8;
    cfg.tf_blocks = 2;
    cfg.tf_heads = 4;
    cfg.tf_mlp = 64;
    cfg.fg_dec_channels = {32, 16};
    cfg.fg_dec_blocks_per_stage = 1;
    cfg.fg_head_features = 16;
    cfg.bg_latent_dim = 24;
    cfg.bg_base_res = 4;
    cfg.bg_dec_channels = {16, 8, 8};  // 4 -> 8 -> 16
    return cfg;
}

HeadsUpModel tiny_model(uint64_t seed = 5, ModelConfig cfg = tiny_config()) {
    auto fg_mesh = full_quad_mesh(100.0, 0.0);
    auto bg_mesh = full_quad_mesh(1500.0, 1200.0);
    auto fa = bake_anchor_map(fg_mesh, cfg.uv_res(), cfg.uv_res());
    auto ba = bake_anchor_map(bg_mesh, cfg.bg_uv_res(), cfg.bg_uv_res());
    return HeadsUpModel(cfg, std::move(fa), std::move(ba), seed);
}

FrameInputs random_frame(int n, int h, int w, uint64_t seed) {
    FrameInputs f;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Image img(3, h, w);
        for (auto& v : img.data) v = static_cast<float>(rng.uniform(0, 1));
        f.views.push_back(std::move(img));
        double ang = -0.5 + 1.0 * i / std::max(1, n - 1);
        Eigen::Vector3d eye(600 * std::sin(ang), 80.0 * i / n, -600 * std::cos(ang));
        f.cameras.push_back(look_at_camera(eye, {0, 0, 0}, {0, 1, 0}, 120, 120, w, h));
    }
    return f;
}

void randomize_store(nn::ParamStore& ps, uint64_t seed, float scale = 0.05f) {
    Rng rng(seed);
    for (auto& p : ps.items) {
        if (!p.trainable) continue;
        for (auto& v : p.w.v) v = rng.normalf() * scale;
    }
}

}  // namespace

TEST_CASE("patchify emits one token per patch with plucker channels") {
    auto model = tiny_model();
    // zero the patch embedding so tokens reduce to (bias, plucker)
    auto& w = model.params().at("patch_embed.conv.weight");
    std::fill(w.w.v.begin(), w.w.v.end(), 0.0f);
    auto& b = model.params().at("patch_embed.conv.bias");
    std::fill(b.w.v.begin(), b.w.v.end(), 0.25f);

    FrameInputs f = random_frame(1, 7, 7, 3);
    Tape t;
    Id tok = model.patchify(t, f.views[0], f.cameras[0]);
    const Tensor& tv = t.val(tok);
    REQUIRE(tv.shape == std::vector<int>({16 + 6, 1, 1}));
    for (int c = 0; c < 16; ++c) CHECK(tv.v[c] == doctest::Approx(0.25f));
    auto rays = plucker_map(f.cameras[0], 1, 1);
    for (int c = 0; c < 6; ++c) CHECK(tv.v[16 + c] == doctest::Approx(rays[c]));
}

TEST_CASE("Z shape is independent of view count and resolution") {
    auto model = tiny_model();
    for (int n : {1, 3}) {
        FrameInputs f = random_frame(n, 21, 28, 10 + n);
        Tape t(false);
        auto lat = model.encode(t, f, false);
        CHECK(t.val(lat.z).shape == std::vector<int>({32, 8, 8}));
        CHECK(t.val(lat.z_bg).shape == std::vector<int>({24}));
    }
    // doubled input resolution: same latent, same gaussian count
    FrameInputs f2 = random_frame(2, 42, 56, 77);
    auto scene = model.infer_scene(f2);
    CHECK(scene.foreground.count == model.fg_count());
    CHECK(scene.foreground.count == 32 * 32);  // fully valid quad atlas
    for (int n : {1, 2, 4}) {
        auto sc = model.infer_scene(random_frame(n, 21, 28, 100 + n));
        CHECK(sc.foreground.count == 32 * 32);
        CHECK(sc.background.count == 16 * 16);
    }
}

TEST_CASE("encode is invariant to view permutation") {
    auto model = tiny_model(9);
    FrameInputs f = random_frame(4, 21, 21, 42);
    FrameInputs perm;
    for (int i : {2, 0, 3, 1}) {
        perm.views.push_back(f.views[i]);
        perm.cameras.push_back(f.cameras[i]);
    }
    Tape t1(false), t2(false);
    auto l1 = model.encode(t1, f, false);
    auto l2 = model.encode(t2, perm, false);
    const Tensor &z1 = t1.val(l1.z), &z2 = t2.val(l2.z);
    double num = 0, den = 0;
    for (size_t i = 0; i < z1.numel(); ++i) {
        num += std::abs(z1.v[i] - z2.v[i]);
        den += std::abs(z1.v[i]);
    }
    CHECK(num / std::max(den, 1e-12) < 1e-5);

    // rendered pixels
    auto s1 = model.infer_scene(f);
    auto s2 = model.infer_scene(perm);
    Camera cam = f.cameras[0];
    auto r1 = render(s1, cam, {}, {0, 0, 0});
    auto r2 = render(s2, cam, {}, {0, 0, 0});
    float max_diff = 0;
    for (size_t i = 0; i < r1.color.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(r1.color.data[i] - r2.color.data[i]));
    CHECK(max_diff <= 1e-4f);
}

TEST_CASE("zero weights decode to neutral template gaussians") {
    auto model = tiny_model();
    for (auto& p : model.params().items) {
        if (!p.trainable) continue;
        std::fill(p.w.v.begin(), p.w.v.end(), 0.0f);
    }
    FrameInputs f = random_frame(2, 14, 14, 8);
    auto scene = model.infer_scene(f);
    const auto& anchors = model.fg_anchors();
    auto texels = model.fg_texels();
    for (int i = 0; i < scene.foreground.count; ++i) {
        int t = texels[i];
        int y = t / anchors.w, x = t % anchors.w;
        for (int k = 0; k < 3; ++k) {
            CHECK(scene.foreground.positions[3 * i + k] == doctest::Approx(anchors.pos(k, y, x)));
            CHECK(scene.foreground.scales[3 * i + k] == doctest::Approx(1.0f));
        }
        CHECK(scene.foreground.opacities[i] == doctest::Approx(0.5f));
        CHECK(scene.foreground.rotations[4 * i] == doctest::Approx(1.0f));
    }
}

TEST_CASE("background gaussians stay within delta_max of the sphere anchors") {
    auto model = tiny_model(21);
    randomize_store(model.params(), 77, 0.3f);  // exercise a non-trivial decoder
    FrameInputs f = random_frame(2, 21, 21, 5);
    auto scene = model.infer_scene(f);
    const auto& ba = model.bg_anchors();
    int i = 0;
    for (int t = 0; t < ba.h * ba.w; ++t) {
        if (!ba.valid[t]) continue;
        int y = t / ba.w, x = t % ba.w;
        for (int k = 0; k < 3; ++k)
            CHECK(std::abs(scene.background.positions[3 * i + k] - ba.pos(k, y, x)) <=
                  model.config().delta_max_bg * (1.0f + 1e-6f));
        ++i;
    }

    // sensitivity: different z_bg must change the decoded background
    Tape t1(false), t2(false);
    Rng rng(31);
    Tensor zb = Tensor::randn({model.config().bg_latent_dim}, rng);
    Tensor zb2 = zb;
    zb2.v[0] += 1.0f;
    Id d1 = model.decode_bg(t1, t1.input(zb, false), false);
    Id d2 = model.decode_bg(t2, t2.input(zb2, false), false);
    double diff = 0;
    for (size_t k = 0; k < t1.val(d1).numel(); ++k)
        diff += std::abs(t1.val(d1).v[k] - t2.val(d2).v[k]);
    CHECK(diff > 1e-4);
}

TEST_CASE("transformer parameter count matches the closed form") {
    // default (paper-scale) configuration
    ModelConfig cfg;
    auto fg_mesh = full_quad_mesh(100.0, 0.0);
    auto bg_mesh = full_quad_mesh(1500.0, 1200.0);
    auto fa = bake_anchor_map(fg_mesh, cfg.uv_res(), cfg.uv_res());
    auto ba = bake_anchor_map(bg_mesh, cfg.bg_uv_res(), cfg.bg_uv_res());
    HeadsUpModel model(cfg, std::move(fa), std::move(ba), 7);

    size_t d = cfg.latent_dim, c = cfg.fg_channels, m = cfg.tf_mlp;
    size_t per_block = (2 * d + 2 * c + 2 * d)            // layer norms
                       + (d * d + d) + (d * c + d) + (d * c + d) + (d * d + d)  // q,k,v,o
                       + (d * m + m) + (m * d + d);       // mlp
    size_t expected = cfg.tf_blocks * per_block + 2 * d   // final LN
                      + static_cast<size_t>(cfg.latent_h) * cfg.latent_w * d;  // queries
    size_t actual = 0;
    for (const auto& p : model.params().items)
        if (p.name.rfind("transformer.", 0) == 0) actual += p.w.numel();
    CHECK(actual == expected);
    CHECK(model.fg_count() == 65536);  // 256x256 fully-valid atlas
}

TEST_CASE("gradients reach every trainable weight; warm-up detaches opacity/scale") {
    auto model = tiny_model(13);
    randomize_store(model.params(), 99, 0.05f);  // includes heads and gates
    // large enough that no encoder stage collapses to a single texel (a 1x1
    // per-channel norm is constant and legitimately kills its upstream grads)
    FrameInputs f = random_frame(2, 56, 56, 55);

    auto run = [&](bool detach) {
        model.params().zero_grads();
        Tape t;
        auto ids = model.forward(t, f, true, detach);
        RasterConfig rcfg;
        rcfg.threads = 1;
        Id img = rasterize_op(t, ids.pos, ids.scale, ids.rot, ids.opac, ids.sh, f.cameras[0],
                              rcfg, {0.1f, 0.1f, 0.1f});
        Id loss = nn::mean_all(t, nn::square(t, img));
        t.backward(loss);
        t.flush_param_grads();
    };

    run(false);
    int zero_params = 0;
    for (auto& p : model.params().items) {
        if (!p.trainable) continue;
        double norm = 0;
        p.ensure_grad();
        for (float g : p.g.v) norm += std::abs(g);
        if (norm == 0.0) ++zero_params;
    }
    CHECK(zero_params == 0);

    run(true);
    auto& head = model.params().at("dec_fg.head.weight");  // (23, feat, 1, 1)
    int feat = head.w.dim(1);
    auto row_norm = [&](int ch) {
        double n = 0;
        for (int k = 0; k < feat; ++k) n += std::abs(head.g.v[ch * feat + k]);
        return n;
    };
    for (int ch = kChanLogScale; ch < kChanQuat; ++ch) CHECK(row_norm(ch) == 0.0);
    CHECK(row_norm(kChanOpacity) == 0.0);
    CHECK(row_norm(kChanOffset) > 0.0);
    CHECK(row_norm(kChanSH) > 0.0);
    auto& bias = model.params().at("dec_fg.head.bias");
    CHECK(bias.g.v[kChanOpacity] == 0.0f);
    CHECK(bias.g.v[kChanLogScale] == 0.0f);
}

TEST_CASE("checkpoint round-trips weights and optimizer state") {
    auto model = tiny_model(3);
    randomize_store(model.params(), 123, 0.2f);
    // fake some optimizer state
    for (auto& p : model.params().items) {
        if (!p.trainable) continue;
        p.ensure_adam();
        for (auto& v : p.adam_m.v) v = 0.5f;
    }
    fs::path tmp = fs::temp_directory_path() / "headsup_ckpt.hscp";
    nlohmann::json meta{{"step", 42}, {"note", "test"}};
    save_checkpoint(tmp.string(), meta, {{"model", &model.params()}});

    auto model2 = tiny_model(3);
    auto loaded = load_checkpoint(tmp.string());
    CHECK(loaded.meta.at("step").get<int>() == 42);
    loaded.restore("model", model2.params());
    for (size_t i = 0; i < model.params().items.size(); ++i) {
        CHECK(model.params().items[i].w.v == model2.params().items[i].w.v);
        if (model.params().items[i].trainable)
            CHECK(model.params().items[i].adam_m.v == model2.params().items[i].adam_m.v);
    }

    // determinism of inference after restore
    FrameInputs f = random_frame(2, 14, 14, 9);
    auto s1 = model.infer_scene(f);
    auto s2 = model2.infer_scene(f);
    CHECK(s1.foreground.positions == s2.foreground.positions);
    CHECK(s1.background.sh_coeffs == s2.background.sh_coeffs);
    fs::remove(tmp);
}
