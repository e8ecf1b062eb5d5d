#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "headsup/common.hpp"

namespace headsup {

// Planar CHW float image, values nominally in [0,1].
struct Image {
    int c = 0, h = 0, w = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c_, int h_, int w_, float fill = 0.0f)
        : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

    float& at(int ch, int y, int x) {
        return data[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    float at(int ch, int y, int x) const {
        return data[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const { return c == o.c && h == o.h && w == o.w; }

    float* plane(int ch) { return data.data() + static_cast<size_t>(ch) * h * w; }
    const float* plane(int ch) const { return data.data() + static_cast<size_t>(ch) * h * w; }
};

// Bilinear sample with edge clamping; (x, y) in pixel coordinates where
// (0.5, 0.5) is the center of the top-left pixel.
inline float bilinear_sample(const Image& img, int ch, double x, double y) {
    double fx = x - 0.5, fy = y - 0.5;
    int x0 = static_cast<int>(std::floor(fx));
    int y0 = static_cast<int>(std::floor(fy));
    double ax = fx - x0, ay = fy - y0;
    auto cl = [](int v, int n) { return std::clamp(v, 0, n - 1); };
    float v00 = img.at(ch, cl(y0, img.h), cl(x0, img.w));
    float v01 = img.at(ch, cl(y0, img.h), cl(x0 + 1, img.w));
    float v10 = img.at(ch, cl(y0 + 1, img.h), cl(x0, img.w));
    float v11 = img.at(ch, cl(y0 + 1, img.h), cl(x0 + 1, img.w));
    return static_cast<float>((1 - ay) * ((1 - ax) * v00 + ax * v01) +
                              ay * ((1 - ax) * v10 + ax * v11));
}

// Bilinear resize to (oh, ow).
inline Image resize_bilinear(const Image& img, int oh, int ow) {
    require(oh >= 1 && ow >= 1, "BadSize", "resize target must be >= 1");
    Image out(img.c, oh, ow);
    double sx = static_cast<double>(img.w) / ow;
    double sy = static_cast<double>(img.h) / oh;
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                out.at(ch, y, x) = bilinear_sample(img, ch, (x + 0.5) * sx, (y + 0.5) * sy);
    return out;
}

// 2x box downsample (averages 2x2 blocks; odd trailing row/col edge-clamped).
inline Image downsample2x(const Image& img) {
    int oh = (img.h + 1) / 2, ow = (img.w + 1) / 2;
    Image out(img.c, oh, ow);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                int y0 = 2 * y, x0 = 2 * x;
                int y1 = std::min(y0 + 1, img.h - 1), x1 = std::min(x0 + 1, img.w - 1);
                out.at(ch, y, x) = 0.25f * (img.at(ch, y0, x0) + img.at(ch, y0, x1) +
                                            img.at(ch, y1, x0) + img.at(ch, y1, x1));
            }
    return out;
}

}  // namespace headsup
