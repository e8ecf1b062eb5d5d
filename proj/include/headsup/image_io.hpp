#pragma once

#include <string>

#include "headsup/image.hpp"

namespace headsup {

// 8-bit PNG. 1 channel -> gray, 3 -> RGB, 4 -> RGBA. Values are clamped to
// [0,1] and quantized with round-to-nearest. With gamma22=true the values are
// sRGB-encoded by v^(1/2.2) before quantization.
void write_png(const std::string& path, const Image& img, bool gamma22 = false);

// Reads 8/16-bit gray/RGB/RGBA PNG into float [0,1] (16-bit scaled by 65535).
Image read_png(const std::string& path);

// Raw float image container: 16-byte header (magic "IMGF", u32 C, H, W,
// little endian), then C*H*W little-endian f32.
void write_imgf(const std::string& path, const Image& img);
Image read_imgf(const std::string& path);

}  // namespace headsup
