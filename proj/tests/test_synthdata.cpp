#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "headsup/synthdata.hpp"

using namespace headsup;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_cfg(uint64_t seed = 42) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.num_subjects = 2;
    cfg.frames_per_subject = 2;
    cfg.val_subjects = 1;
    cfg.num_cameras = 4;
    cfg.image_w = 70;
    cfg.image_h = 56;
    cfg.fg_uv_res = 24;
    cfg.bg_uv_res = 12;
    cfg.mesh_lon = 24;
    cfg.mesh_lat = 16;
    cfg.render_threads = 1;
    return cfg;
}

std::vector<uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("generated identities are deterministic and realizable") {
    SynthConfig cfg = tiny_cfg();
    auto tmpl = make_head_template(cfg);
    auto bg = make_background_sphere(cfg);
    IdentitySpec spec = make_identity_spec(cfg, 0);

    auto a = generate_identity(spec, tmpl, bg, cfg);
    auto b = generate_identity(spec, tmpl, bg, cfg);
    REQUIRE(a.frame_scenes.size() == 2);
    CHECK(a.frame_scenes[0].foreground.positions == b.frame_scenes[0].foreground.positions);
    CHECK(a.frame_scenes[1].foreground.sh_coeffs == b.frame_scenes[1].foreground.sh_coeffs);

    // realizability: the stored raw maps decode to exactly the stored scenes
    for (size_t f = 0; f < a.frame_scenes.size(); ++f) {
        auto decoded = decode_uv(a.frame_fg_maps[f]);
        CHECK(decoded.positions == a.frame_scenes[f].foreground.positions);
        CHECK(decoded.opacities == a.frame_scenes[f].foreground.opacities);
        CHECK(decoded.scales == a.frame_scenes[f].foreground.scales);
    }

    // every scene satisfies the set invariants
    for (const auto& scene : a.frame_scenes) {
        scene.foreground.validate();
        scene.background.validate();
    }
}

TEST_CASE("zero coefficients reproduce the neutral template anchors") {
    SynthConfig cfg = tiny_cfg();
    auto tmpl = make_head_template(cfg);
    auto bg = make_background_sphere(cfg);
    IdentitySpec spec;
    spec.seed = 1;
    spec.texture_seed = 2;
    spec.shape_coeffs.assign(kShapeBasis, 0.0f);
    spec.expressions = {std::vector<float>(kExpressionBasis, 0.0f)};
    spec.accessories = false;

    auto ident = generate_identity(spec, tmpl, bg, cfg);
    auto neutral = bake_anchor_map(tmpl, cfg.fg_uv_res, cfg.fg_uv_res);
    REQUIRE(ident.frame_anchors.size() == 1);
    for (int y = 0; y < neutral.h; ++y)
        for (int x = 0; x < neutral.w; ++x) {
            if (!neutral.is_valid(y, x)) continue;
            for (int c = 0; c < 3; ++c)
                CHECK(ident.frame_anchors[0].pos(c, y, x) ==
                      doctest::Approx(neutral.pos(c, y, x)).epsilon(1e-6));
        }

    // foreground gaussians stay within delta_max of the frame anchors
    size_t plane = static_cast<size_t>(neutral.h) * neutral.w;
    int gi = 0;
    for (size_t i = 0; i < plane; ++i) {
        if (!neutral.valid[i]) continue;
        int y = static_cast<int>(i) / neutral.w, x = static_cast<int>(i) % neutral.w;
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(ident.frame_scenes[0].foreground.positions[3 * gi + c] -
                           ident.frame_anchors[0].pos(c, y, x)) <= 200.0f);
        ++gi;
    }
}

TEST_CASE("dataset generation writes a loadable, bitwise-deterministic tree") {
    SynthConfig cfg = tiny_cfg(77);
    fs::path root1 = fs::temp_directory_path() / "headsup_ds_a";
    fs::path root2 = fs::temp_directory_path() / "headsup_ds_b";
    fs::remove_all(root1);
    fs::remove_all(root2);

    auto m1 = generate_dataset(cfg, root1.string());
    auto m2 = generate_dataset(cfg, root2.string());

    // counting: subjects x frames x cameras
    CHECK(m1.subjects.size() == 2);
    int n_images = 0, n_masks = 0;
    for (auto& s : m1.subjects)
        for (auto& f : s.frames) {
            n_images += static_cast<int>(f.images.size());
            n_masks += static_cast<int>(f.masks.size());
            for (auto& rel : f.images) CHECK(fs::exists(root1 / rel));
            for (auto& rel : f.masks) CHECK(fs::exists(root1 / rel));
        }
    CHECK(n_images == 2 * 2 * 4);
    CHECK(n_masks == 2 * 2 * 4);

    // bitwise determinism across regenerations
    for (auto& s : m1.subjects)
        for (auto& f : s.frames)
            for (auto& rel : f.images) CHECK(file_bytes(root1 / rel) == file_bytes(root2 / rel));
    CHECK(file_bytes(root1 / "rig.json") == file_bytes(root2 / "rig.json"));

    // load round trip
    auto ds = Dataset::open((root1 / "manifest.json").string());
    CHECK(ds.rig().cameras.size() == 4);
    CHECK(ds.subject_indices("train") == std::vector<int>{0});
    CHECK(ds.subject_indices("val") == std::vector<int>{1});
    CHECK(ds.subject_indices("") == std::vector<int>{0, 1});

    auto frame = ds.load_frame(0, 1);
    CHECK(frame.images.size() == 4);
    CHECK(frame.images[0].w == 70);
    CHECK(frame.masks[0].c == 1);
    CHECK(frame.anchors.h == cfg.fg_uv_res);

    // loaded image equals the written bytes decoded back
    auto img = read_png((root1 / m1.subjects[0].frames[1].images[0]).string());
    CHECK(img.data == frame.images[0].data);

    // masks equal the fg-only alpha thresholded at 0.5, recomputed here
    auto gt = load_scene((root1 / m1.subjects[0].frames[1].gt_scene).string());
    GaussianScene fg_only;
    fg_only.foreground = gt.foreground;
    RasterConfig rcfg;
    rcfg.threads = 1;
    auto fg = render(fg_only, ds.rig().cameras[0], rcfg, {0, 0, 0});
    for (size_t i = 0; i < fg.alpha.data.size(); ++i) {
        float expect = fg.alpha.data[i] > 0.5f ? 1.0f : 0.0f;
        CHECK(frame.masks[0].data[i] == expect);
    }

    // corrupting a referenced file surfaces MissingFile
    fs::remove(root1 / m1.subjects[0].frames[0].images[0]);
    try {
        ds.load_frame(0, 0);
        FAIL("expected MissingFile");
    } catch (const Error& e) {
        CHECK(e.code() == "MissingFile");
    }

    fs::remove_all(root1);
    fs::remove_all(root2);
}

TEST_CASE("head rig faces the template and covers the frontal cap") {
    SynthConfig cfg = tiny_cfg();
    cfg.num_cameras = 16;
    auto rig = make_head_rig(cfg);
    rig.validate();
    CHECK(rig.cameras.size() == 16);
    for (const auto& cam : rig.cameras) {
        CHECK(cam.center().norm() == doctest::Approx(cfg.rig_radius));
        CHECK(cam.center().z() > 0);  // frontal hemisphere
        // template origin projects near the principal point
        auto pr = project_point(cam, {0, 0, 0});
        CHECK(std::abs(pr.pixel.x() - cam.cx()) < 1.0);
        CHECK(std::abs(pr.pixel.y() - cam.cy()) < 1.0);
    }
}
