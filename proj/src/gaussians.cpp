#include "headsup/gaussians.hpp"

namespace headsup {

void GaussianSet::resize(int n) {
    count = n;
    positions.assign(static_cast<size_t>(n) * 3, 0.0f);
    scales.assign(static_cast<size_t>(n) * 3, 1.0f);
    rotations.assign(static_cast<size_t>(n) * 4, 0.0f);
    for (int i = 0; i < n; ++i) rotations[4 * i] = 1.0f;
    opacities.assign(n, 1.0f);
    sh_coeffs.assign(static_cast<size_t>(n) * 12, 0.0f);
}

void GaussianSet::validate() const {
    auto n = static_cast<size_t>(count);
    require(positions.size() == 3 * n && scales.size() == 3 * n && rotations.size() == 4 * n &&
                opacities.size() == n && sh_coeffs.size() == 12 * n,
            "BadGaussianSet", "array sizes inconsistent with count");
    for (int i = 0; i < count; ++i) {
        for (int k = 0; k < 3; ++k) {
            require(std::isfinite(positions[3 * i + k]), "BadGaussianSet", "non-finite position");
            require(scales[3 * i + k] > 0.0f, "BadGaussianSet", "non-positive scale");
        }
        float q2 = 0.0f;
        for (int k = 0; k < 4; ++k) q2 += rotations[4 * i + k] * rotations[4 * i + k];
        require(std::abs(std::sqrt(q2) - 1.0f) < 1e-6f, "BadGaussianSet", "non-unit quaternion");
        require(opacities[i] >= 0.0f && opacities[i] <= 1.0f, "BadGaussianSet",
                "opacity outside [0,1]");
    }
}

GaussianSet GaussianScene::flatten() const {
    GaussianSet out;
    out.resize(foreground.count + background.count);
    auto copy_in = [&](const GaussianSet& s, int base) {
        std::copy(s.positions.begin(), s.positions.end(), out.positions.begin() + 3 * base);
        std::copy(s.scales.begin(), s.scales.end(), out.scales.begin() + 3 * base);
        std::copy(s.rotations.begin(), s.rotations.end(), out.rotations.begin() + 4 * base);
        std::copy(s.opacities.begin(), s.opacities.end(), out.opacities.begin() + base);
        std::copy(s.sh_coeffs.begin(), s.sh_coeffs.end(), out.sh_coeffs.begin() + 12 * base);
    };
    copy_in(foreground, 0);
    copy_in(background, foreground.count);

    if (!bg_to_canonical.isIdentity(1e-12)) {
        Eigen::Matrix3d r = bg_to_canonical.block<3, 3>(0, 0);
        Eigen::Vector3d t = bg_to_canonical.block<3, 1>(0, 3);
        Eigen::Quaterniond qr(r);
        for (int i = foreground.count; i < out.count; ++i) {
            Eigen::Vector3d p = r * out.position(i).cast<double>() + t;
            for (int k = 0; k < 3; ++k) out.positions[3 * i + k] = static_cast<float>(p[k]);
            Eigen::Quaterniond q(out.rotations[4 * i], out.rotations[4 * i + 1],
                                 out.rotations[4 * i + 2], out.rotations[4 * i + 3]);
            Eigen::Quaterniond qq = qr * q;
            out.rotations[4 * i] = static_cast<float>(qq.w());
            out.rotations[4 * i + 1] = static_cast<float>(qq.x());
            out.rotations[4 * i + 2] = static_cast<float>(qq.y());
            out.rotations[4 * i + 3] = static_cast<float>(qq.z());
        }
    }
    return out;
}

GaussianSet decode_uv(const UVGaussianMap& map, const DecodeLimits& limits) {
    GaussianSet set;
    set.resize(static_cast<int>(map.anchors.valid_count()));
    size_t plane = static_cast<size_t>(map.h) * map.w;
    int gi = 0;
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            if (!map.anchors.is_valid(y, x)) continue;
            size_t t = static_cast<size_t>(y) * map.w + x;
            const float* f = map.features.data();
            for (int k = 0; k < 3; ++k) {
                set.positions[3 * gi + k] =
                    map.anchors.pos(k, y, x) +
                    decode_offset(f[(kChanOffset + k) * plane + t], map.delta_max);
                set.scales[3 * gi + k] = decode_scale(f[(kChanLogScale + k) * plane + t],
                                                      limits.scale_min_mm, limits.scale_max_mm);
            }
            float raw_q[4], q[4];
            for (int k = 0; k < 4; ++k) raw_q[k] = f[(kChanQuat + k) * plane + t];
            decode_quat(raw_q, q);
            for (int k = 0; k < 4; ++k) set.rotations[4 * gi + k] = q[k];
            set.opacities[gi] = decode_opacity(f[kChanOpacity * plane + t]);
            for (int k = 0; k < 12; ++k)
                set.sh_coeffs[12 * gi + k] = f[(kChanSH + k) * plane + t];
            ++gi;
        }
    }
    return set;
}

std::vector<int> decode_texel_indices(const UVGaussianMap& map) {
    std::vector<int> idx;
    idx.reserve(map.anchors.valid_count());
    for (int y = 0; y < map.h; ++y)
        for (int x = 0; x < map.w; ++x)
            if (map.anchors.is_valid(y, x)) idx.push_back(y * map.w + x);
    return idx;
}

Eigen::Vector3f sh_to_rgb(const float* coeffs, const Eigen::Vector3f& view_dir) {
    float dir[3] = {view_dir.x(), view_dir.y(), view_dir.z()};
    float rgb[3];
    sh_to_rgb_t(coeffs, dir, rgb);
    return {rgb[0], rgb[1], rgb[2]};
}

}  // namespace headsup
