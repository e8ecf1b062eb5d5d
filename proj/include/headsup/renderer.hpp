#pragma once

#include "headsup/camera.hpp"
#include "headsup/gaussians.hpp"
#include "headsup/image.hpp"

namespace headsup {

struct RasterConfig {
    int tile_size = 16;      // in {8, 16, 32}
    float alpha_cap = 0.999f;
    float cutoff = 3.0f;     // Mahalanobis radius
    float near_clip = 1.0f;  // mm
    int threads = 0;         // 0 = default_threads()

    void validate() const;
};

// Global default worker count (HEADSUP_THREADS or --threads; else 1).
int default_threads();
void set_default_threads(int n);

struct RenderOutput {
    Image color;  // 3xHxW, [0,1]
    Image alpha;  // 1xHxW, [0,1]
};

// EWA projection of a single Gaussian (means in mm). Throws Clipped when the
// center depth is <= cfg.near_clip.
struct ProjectedGaussian {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;
    double depth;
};
ProjectedGaussian project_gaussian(const Eigen::Vector3d& pos, const Eigen::Vector3d& scale,
                                   const Eigen::Vector4d& rot_wxyz, const Camera& cam,
                                   const RasterConfig& cfg = {});

RenderOutput render(const GaussianScene& scene, const Camera& cam, const RasterConfig& cfg = {},
                    const Eigen::Vector3f& clear_color = {0, 0, 0});
RenderOutput render_set(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg = {},
                        const Eigen::Vector3f& clear_color = {0, 0, 0});

// Analytic gradients with respect to every Gaussian parameter. Sorting and
// tile assignment are treated as constants of the forward pass.
struct SetGrads {
    std::vector<float> positions, scales, rotations, opacities, sh_coeffs;
    void resize_like(const GaussianSet& set);
};
struct SceneGrads {
    SetGrads foreground, background;
};

SetGrads render_backward_set(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg,
                             const Eigen::Vector3f& clear_color, const Image& upstream_color_grad,
                             const Image& upstream_alpha_grad);
SceneGrads render_backward(const GaussianScene& scene, const Camera& cam, const RasterConfig& cfg,
                           const Eigen::Vector3f& clear_color, const Image& upstream_color_grad,
                           const Image& upstream_alpha_grad);

}  // namespace headsup
