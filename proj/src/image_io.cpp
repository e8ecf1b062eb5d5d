#include "headsup/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace headsup {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t quantize8(float v, bool gamma22) {
    v = std::clamp(v, 0.0f, 1.0f);
    if (gamma22) v = std::pow(v, 1.0f / 2.2f);
    return static_cast<uint8_t>(std::lround(v * 255.0f));
}

}  // namespace

void write_png(const std::string& path, const Image& img, bool gamma22) {
    require(img.c == 1 || img.c == 3 || img.c == 4, "IOError",
            "PNG supports 1/3/4 channels, got " + std::to_string(img.c));
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("IOError", "cannot open for write: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) fail("IOError", "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("IOError", "libpng write failed: " + path);
    }
    png_init_io(png, fp.get());
    int color = img.c == 1 ? PNG_COLOR_TYPE_GRAY
                           : (img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA);
    png_set_IHDR(png, info, img.w, img.h, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // fixed settings keep byte-identical output for identical pixels
    png_set_compression_level(png, 6);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.w) * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch)
                row[static_cast<size_t>(x) * img.c + ch] = quantize8(img.at(ch, y, x), gamma22);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail("MissingFile", "cannot open: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) fail("IOError", "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("IOError", "libpng read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    int channels = png_get_channels(png, info);
    Image img(channels, static_cast<int>(h), static_cast<int>(w));

    size_t stride = png_get_rowbytes(png, info);
    std::vector<uint8_t> row(stride);
    float scale = depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch) {
                uint32_t v;
                if (depth == 16) {
                    size_t i = (static_cast<size_t>(x) * channels + ch) * 2;
                    v = (static_cast<uint32_t>(row[i]) << 8) | row[i + 1];
                } else {
                    v = row[static_cast<size_t>(x) * channels + ch];
                }
                img.at(ch, static_cast<int>(y), static_cast<int>(x)) = v * scale;
            }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_imgf(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("IOError", "cannot open for write: " + path);
    uint32_t hdr[3] = {static_cast<uint32_t>(img.c), static_cast<uint32_t>(img.h),
                       static_cast<uint32_t>(img.w)};
    f.write("IMGF", 4);
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    f.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!f) fail("IOError", "write failed: " + path);
}

Image read_imgf(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open: " + path);
    char magic[4];
    uint32_t hdr[3];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!f || std::memcmp(magic, "IMGF", 4) != 0) fail("BadMagic", "not an IMGF file: " + path);
    Image img(static_cast<int>(hdr[0]), static_cast<int>(hdr[1]), static_cast<int>(hdr[2]));
    f.read(reinterpret_cast<char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!f) fail("TruncatedFile", "IMGF payload truncated: " + path);
    return img;
}

}  // namespace headsup
