#include "headsup/renderer.hpp"

#include <atomic>
#include <cstdlib>

#include "headsup/raster_detail.hpp"

namespace headsup {

namespace {

std::atomic<int> g_default_threads{0};

raster::Config to_raster_config(const RasterConfig& cfg) {
    cfg.validate();
    raster::Config rc;
    rc.tile_size = cfg.tile_size;
    rc.alpha_cap = cfg.alpha_cap;
    rc.cutoff = cfg.cutoff;
    rc.near_clip = cfg.near_clip;
    rc.threads = cfg.threads > 0 ? cfg.threads : default_threads();
    return rc;
}

}  // namespace

void RasterConfig::validate() const {
    require(tile_size == 8 || tile_size == 16 || tile_size == 32, "BadConfig",
            "tile_size must be 8, 16 or 32");
    require(alpha_cap > 0.0f && alpha_cap < 1.0f, "BadConfig", "alpha_cap must be in (0,1)");
    require(cutoff > 0.0f, "BadConfig", "cutoff must be positive");
}

int default_threads() {
    int v = g_default_threads.load();
    if (v > 0) return v;
    if (const char* env = std::getenv("HEADSUP_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

void set_default_threads(int n) { g_default_threads.store(n); }

ProjectedGaussian project_gaussian(const Eigen::Vector3d& pos, const Eigen::Vector3d& scale,
                                   const Eigen::Vector4d& rot_wxyz, const Camera& cam,
                                   const RasterConfig& cfg) {
    auto camt = raster::make_camera<double>(cam);
    raster::Config rc = to_raster_config(cfg);
    double tcam[3], mean2d[2], cov2d[3], conic[3], radius;
    double p[3] = {pos.x(), pos.y(), pos.z()};
    double s[3] = {scale.x(), scale.y(), scale.z()};
    double q[4] = {rot_wxyz[0], rot_wxyz[1], rot_wxyz[2], rot_wxyz[3]};
    if (!raster::project_one(p, s, q, camt, rc, tcam, mean2d, cov2d, conic, &radius))
        fail("Clipped", "Gaussian center at depth <= near_clip");
    ProjectedGaussian out;
    out.mean2d = {mean2d[0], mean2d[1]};
    out.cov2d << cov2d[0], cov2d[1], cov2d[1], cov2d[2];
    out.depth = tcam[2];
    return out;
}

RenderOutput render_set(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg,
                        const Eigen::Vector3f& clear_color) {
    RenderOutput out;
    out.color = Image(3, cam.height, cam.width);
    out.alpha = Image(1, cam.height, cam.width);
    float clear[3] = {clear_color.x(), clear_color.y(), clear_color.z()};
    auto camt = raster::make_camera<float>(cam);
    raster::forward(set.count, set.positions.data(), set.scales.data(), set.rotations.data(),
                    set.opacities.data(), set.sh_coeffs.data(), camt, to_raster_config(cfg), clear,
                    out.color.data.data(), out.alpha.data.data());
    return out;
}

RenderOutput render(const GaussianScene& scene, const Camera& cam, const RasterConfig& cfg,
                    const Eigen::Vector3f& clear_color) {
    return render_set(scene.flatten(), cam, cfg, clear_color);
}

void SetGrads::resize_like(const GaussianSet& set) {
    positions.assign(set.positions.size(), 0.0f);
    scales.assign(set.scales.size(), 0.0f);
    rotations.assign(set.rotations.size(), 0.0f);
    opacities.assign(set.opacities.size(), 0.0f);
    sh_coeffs.assign(set.sh_coeffs.size(), 0.0f);
}

SetGrads render_backward_set(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg,
                             const Eigen::Vector3f& clear_color, const Image& upstream_color_grad,
                             const Image& upstream_alpha_grad) {
    require(upstream_color_grad.c == 3 && upstream_color_grad.h == cam.height &&
                upstream_color_grad.w == cam.width,
            "ShapeMismatch", "upstream color gradient shape");
    require(upstream_alpha_grad.c == 1 && upstream_alpha_grad.h == cam.height &&
                upstream_alpha_grad.w == cam.width,
            "ShapeMismatch", "upstream alpha gradient shape");
    SetGrads g;
    g.resize_like(set);
    float clear[3] = {clear_color.x(), clear_color.y(), clear_color.z()};
    auto camt = raster::make_camera<float>(cam);
    raster::backward(set.count, set.positions.data(), set.scales.data(), set.rotations.data(),
                     set.opacities.data(), set.sh_coeffs.data(), camt, to_raster_config(cfg), clear,
                     upstream_color_grad.data.data(), upstream_alpha_grad.data.data(),
                     g.positions.data(), g.scales.data(), g.rotations.data(), g.opacities.data(),
                     g.sh_coeffs.data());
    return g;
}

SceneGrads render_backward(const GaussianScene& scene, const Camera& cam, const RasterConfig& cfg,
                           const Eigen::Vector3f& clear_color, const Image& upstream_color_grad,
                           const Image& upstream_alpha_grad) {
    GaussianSet flat = scene.flatten();
    SetGrads g = render_backward_set(flat, cam, cfg, clear_color, upstream_color_grad,
                                     upstream_alpha_grad);
    SceneGrads out;
    out.foreground.resize_like(scene.foreground);
    out.background.resize_like(scene.background);
    int nf = scene.foreground.count;
    auto split = [&](std::vector<float> SetGrads::*field, int stride) {
        auto& src = g.*field;
        auto& fg = out.foreground.*field;
        auto& bg = out.background.*field;
        std::copy(src.begin(), src.begin() + static_cast<long>(stride) * nf, fg.begin());
        std::copy(src.begin() + static_cast<long>(stride) * nf, src.end(), bg.begin());
    };
    split(&SetGrads::positions, 3);
    split(&SetGrads::scales, 3);
    split(&SetGrads::rotations, 4);
    split(&SetGrads::opacities, 1);
    split(&SetGrads::sh_coeffs, 12);

    if (!scene.bg_to_canonical.isIdentity(1e-12)) {
        // positions/rotations were rigidly mapped in flatten(); pull gradients back
        Eigen::Matrix3d r = scene.bg_to_canonical.block<3, 3>(0, 0);
        Eigen::Quaterniond qr(r);
        Eigen::Matrix4d lmat;  // left multiplication q' = qr * q as matrix on (w,x,y,z)
        lmat << qr.w(), -qr.x(), -qr.y(), -qr.z(),
                qr.x(),  qr.w(), -qr.z(),  qr.y(),
                qr.y(),  qr.z(),  qr.w(), -qr.x(),
                qr.z(), -qr.y(),  qr.x(),  qr.w();
        for (int i = 0; i < scene.background.count; ++i) {
            Eigen::Vector3d gp(out.background.positions[3 * i], out.background.positions[3 * i + 1],
                               out.background.positions[3 * i + 2]);
            gp = r.transpose() * gp;
            for (int k = 0; k < 3; ++k)
                out.background.positions[3 * i + k] = static_cast<float>(gp[k]);
            Eigen::Vector4d gq(out.background.rotations[4 * i], out.background.rotations[4 * i + 1],
                               out.background.rotations[4 * i + 2],
                               out.background.rotations[4 * i + 3]);
            gq = lmat.transpose() * gq;
            for (int k = 0; k < 4; ++k)
                out.background.rotations[4 * i + k] = static_cast<float>(gq[k]);
        }
    }
    return out;
}

}  // namespace headsup
