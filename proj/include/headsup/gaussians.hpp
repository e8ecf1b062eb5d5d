#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "headsup/geometry.hpp"

namespace headsup {

// Raw UV feature channel layout (23 channels):
//   [0..3)   position offset raw (tanh * delta_max)
//   [3..6)   log-scale raw (exp, clamped)
//   [6..10)  quaternion raw (w,x,y,z; L2-normalized)
//   [10..11) opacity logit (sigmoid)
//   [11..23) SH coefficients, basis-major: 4 basis x 3 color channels
inline constexpr int kUVChannels = 23;
inline constexpr int kChanOffset = 0;
inline constexpr int kChanLogScale = 3;
inline constexpr int kChanQuat = 6;
inline constexpr int kChanOpacity = 10;
inline constexpr int kChanSH = 11;
inline constexpr int kSHBasis = 4;  // degree L=1

// Real SH basis, degree <= 1, order: Y00, Y1-1, Y10, Y11.
inline constexpr double kSH0 = 0.28209479177387814;
inline constexpr double kSH1 = 0.4886025119029199;

struct DecodeLimits {
    float scale_min_mm = 1e-3f;
    float scale_max_mm = 500.0f;
};

// Raw (pre-activation) UV feature grid plus its anchor map.
struct UVGaussianMap {
    int h = 0, w = 0;
    std::vector<float> features;  // kUVChannels planes of h*w
    AnchorMap anchors;
    float delta_max = 200.0f;  // mm

    UVGaussianMap() = default;
    UVGaussianMap(int h_, int w_, float delta_max_)
        : h(h_), w(w_), features(static_cast<size_t>(kUVChannels) * h_ * w_, 0.0f),
          anchors(h_, w_), delta_max(delta_max_) {}

    float& feat(int ch, int y, int x) { return features[(static_cast<size_t>(ch) * h + y) * w + x]; }
    float feat(int ch, int y, int x) const {
        return features[(static_cast<size_t>(ch) * h + y) * w + x];
    }
};

// Flat per-Gaussian parameter arrays, render-ready. Quaternions are unit
// (w,x,y,z), opacities in [0,1], scales positive (mm).
struct GaussianSet {
    int count = 0;
    std::vector<float> positions;  // count*3, interleaved xyz
    std::vector<float> scales;     // count*3
    std::vector<float> rotations;  // count*4, wxyz
    std::vector<float> opacities;  // count
    std::vector<float> sh_coeffs;  // count*4*3, basis-major

    void resize(int n);
    void validate() const;

    Eigen::Vector3f position(int i) const {
        return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
    }
};

struct GaussianScene {
    GaussianSet foreground;
    GaussianSet background;
    Eigen::Matrix4d bg_to_canonical = Eigen::Matrix4d::Identity();

    // Merged set with the background transformed into the canonical frame.
    // Foreground Gaussians come first.
    GaussianSet flatten() const;
};

// --- decode building blocks, shared with the training graph -----------------

template <typename T>
inline T decode_offset(T raw, T delta_max) {
    return delta_max * std::tanh(raw);
}

template <typename T>
inline T decode_scale(T raw, T smin, T smax) {
    return std::min(std::max(std::exp(raw), smin), smax);
}

template <typename T>
inline void decode_quat(const T raw[4], T out[4]) {
    T n2 = raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3];
    T n = std::sqrt(n2);
    if (n < T(1e-8)) {
        out[0] = T(1);
        out[1] = out[2] = out[3] = T(0);
    } else {
        for (int k = 0; k < 4; ++k) out[k] = raw[k] / n;
    }
}

template <typename T>
inline T decode_opacity(T raw) {
    return T(1) / (T(1) + std::exp(-raw));
}

// One Gaussian per valid texel, scanned row-major. Total over finite inputs.
GaussianSet decode_uv(const UVGaussianMap& map, const DecodeLimits& limits = {});

// Row-major (y*w + x) texel index of each decoded Gaussian.
std::vector<int> decode_texel_indices(const UVGaussianMap& map);

// rgb = clamp(0.5 + sum c Y(dir), 0, 1); coeffs basis-major 4x3, dir unit.
template <typename T>
inline void sh_to_rgb_t(const T* coeffs, const T dir[3], T rgb[3]) {
    T basis[4] = {T(kSH0), T(-kSH1) * dir[1], T(kSH1) * dir[2], T(-kSH1) * dir[0]};
    for (int ch = 0; ch < 3; ++ch) {
        T v = T(0.5);
        for (int b = 0; b < kSHBasis; ++b) v += coeffs[3 * b + ch] * basis[b];
        rgb[ch] = std::min(std::max(v, T(0)), T(1));
    }
}

Eigen::Vector3f sh_to_rgb(const float* coeffs, const Eigen::Vector3f& view_dir);

}  // namespace headsup
