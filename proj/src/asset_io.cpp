#include "headsup/asset_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace headsup {

namespace {

constexpr uint32_t kUvgsVersion = 1;
constexpr uint32_t kSceneVersion = 1;

void write_f32(std::ostream& f, const float* data, size_t n) {
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_f32(std::istream& f, float* data, size_t n, const std::string& path) {
    f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!f) fail("TruncatedFile", "unexpected end of file: " + path);
}

void write_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& f, const std::string& path) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) fail("TruncatedFile", "unexpected end of file: " + path);
    return v;
}

void check_magic(std::istream& f, const char* magic, const std::string& path) {
    char buf[4];
    f.read(buf, 4);
    if (!f || std::memcmp(buf, magic, 4) != 0)
        fail("BadMagic", std::string("expected magic '") + magic + "': " + path);
}

void write_set(std::ostream& f, const GaussianSet& s) {
    write_u32(f, static_cast<uint32_t>(s.count));
    write_f32(f, s.positions.data(), s.positions.size());
    write_f32(f, s.scales.data(), s.scales.size());
    write_f32(f, s.rotations.data(), s.rotations.size());
    write_f32(f, s.opacities.data(), s.opacities.size());
    write_f32(f, s.sh_coeffs.data(), s.sh_coeffs.size());
}

GaussianSet read_set(std::istream& f, const std::string& path) {
    GaussianSet s;
    s.resize(static_cast<int>(read_u32(f, path)));
    read_f32(f, s.positions.data(), s.positions.size(), path);
    read_f32(f, s.scales.data(), s.scales.size(), path);
    read_f32(f, s.rotations.data(), s.rotations.size(), path);
    read_f32(f, s.opacities.data(), s.opacities.size(), path);
    read_f32(f, s.sh_coeffs.data(), s.sh_coeffs.size(), path);
    return s;
}

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& flags) {
    std::vector<uint8_t> bytes((flags.size() + 7) / 8, 0);
    for (size_t i = 0; i < flags.size(); ++i)
        if (flags[i]) bytes[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    return bytes;
}

void unpack_bits(const std::vector<uint8_t>& bytes, std::vector<uint8_t>& flags) {
    for (size_t i = 0; i < flags.size(); ++i)
        flags[i] = (bytes[i / 8] >> (i % 8)) & 1u;
}

void save_uvgs(const std::string& path, const float* features, uint32_t channels, uint32_t h,
               uint32_t w, const float* anchor_pos, const std::vector<uint8_t>& valid,
               float delta_max) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("IOError", "cannot open for write: " + path);
    f.write("UVGS", 4);
    write_u32(f, kUvgsVersion);
    write_u32(f, h);
    write_u32(f, w);
    write_u32(f, channels);
    write_f32(f, features, static_cast<size_t>(channels) * h * w);
    write_f32(f, anchor_pos, static_cast<size_t>(3) * h * w);
    auto bytes = pack_bits(valid);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    write_f32(f, &delta_max, 1);
    if (!f) fail("IOError", "write failed: " + path);
}

}  // namespace

void save_uv_map(const std::string& path, const UVGaussianMap& map) {
    save_uvgs(path, map.features.data(), kUVChannels, static_cast<uint32_t>(map.h),
              static_cast<uint32_t>(map.w), map.anchors.positions.data(), map.anchors.valid,
              map.delta_max);
}

UVGaussianMap load_uv_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open: " + path);
    check_magic(f, "UVGS", path);
    uint32_t version = read_u32(f, path);
    if (version != kUvgsVersion)
        fail("VersionMismatch", "UVGS version " + std::to_string(version) + " unsupported: " + path);
    uint32_t h = read_u32(f, path), w = read_u32(f, path), channels = read_u32(f, path);
    require(channels == kUVChannels, "BadAsset",
            "expected " + std::to_string(kUVChannels) + " channels, got " + std::to_string(channels));
    UVGaussianMap map(static_cast<int>(h), static_cast<int>(w), 0.0f);
    read_f32(f, map.features.data(), map.features.size(), path);
    read_f32(f, map.anchors.positions.data(), map.anchors.positions.size(), path);
    std::vector<uint8_t> bytes((static_cast<size_t>(h) * w + 7) / 8);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail("TruncatedFile", "unexpected end of file: " + path);
    unpack_bits(bytes, map.anchors.valid);
    read_f32(f, &map.delta_max, 1, path);
    return map;
}

void save_channel_grid(const std::string& path, const std::vector<float>& data, int channels,
                       int h, int w) {
    require(data.size() == static_cast<size_t>(channels) * h * w, "BadSize",
            "channel grid size mismatch");
    std::vector<float> zero_anchor(static_cast<size_t>(3) * h * w, 0.0f);
    std::vector<uint8_t> all_valid(static_cast<size_t>(h) * w, 1);
    save_uvgs(path, data.data(), static_cast<uint32_t>(channels), static_cast<uint32_t>(h),
              static_cast<uint32_t>(w), zero_anchor.data(), all_valid, 0.0f);
}

std::vector<float> load_channel_grid(const std::string& path, int* channels, int* h, int* w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open: " + path);
    check_magic(f, "UVGS", path);
    uint32_t version = read_u32(f, path);
    if (version != kUvgsVersion)
        fail("VersionMismatch", "UVGS version " + std::to_string(version) + " unsupported: " + path);
    uint32_t hh = read_u32(f, path), ww = read_u32(f, path), cc = read_u32(f, path);
    std::vector<float> data(static_cast<size_t>(cc) * hh * ww);
    read_f32(f, data.data(), data.size(), path);
    *channels = static_cast<int>(cc);
    *h = static_cast<int>(hh);
    *w = static_cast<int>(ww);
    return data;
}

void save_scene(const std::string& path, const GaussianScene& scene) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("IOError", "cannot open for write: " + path);
    f.write("GSSC", 4);
    write_u32(f, kSceneVersion);
    write_set(f, scene.foreground);
    write_set(f, scene.background);
    float t[16];
    for (int i = 0; i < 16; ++i) t[i] = static_cast<float>(scene.bg_to_canonical(i / 4, i % 4));
    write_f32(f, t, 16);
    if (!f) fail("IOError", "write failed: " + path);
}

GaussianScene load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open: " + path);
    check_magic(f, "GSSC", path);
    uint32_t version = read_u32(f, path);
    if (version != kSceneVersion)
        fail("VersionMismatch", "scene version " + std::to_string(version) + " unsupported: " + path);
    GaussianScene scene;
    scene.foreground = read_set(f, path);
    scene.background = read_set(f, path);
    float t[16];
    read_f32(f, t, 16, path);
    for (int i = 0; i < 16; ++i) scene.bg_to_canonical(i / 4, i % 4) = t[i];
    return scene;
}

void export_ply(const GaussianSet& set, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("IOError", "cannot open for write: " + path);
    std::ostringstream hdr;
    hdr << "ply\nformat binary_little_endian 1.0\nelement vertex " << set.count << "\n";
    const char* props[] = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2",
                           "f_rest_0", "f_rest_1", "f_rest_2", "f_rest_3", "f_rest_4",
                           "f_rest_5", "f_rest_6", "f_rest_7", "f_rest_8",
                           "opacity", "scale_0", "scale_1", "scale_2",
                           "rot_0", "rot_1", "rot_2", "rot_3"};
    for (const char* p : props) hdr << "property float " << p << "\n";
    hdr << "end_header\n";
    f << hdr.str();

    std::vector<float> row(23);
    for (int i = 0; i < set.count; ++i) {
        for (int k = 0; k < 3; ++k) row[k] = set.positions[3 * i + k];
        for (int ch = 0; ch < 3; ++ch) row[3 + ch] = set.sh_coeffs[12 * i + ch];
        // f_rest channel-major: all R rest coefficients, then G, then B
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 1; b < kSHBasis; ++b)
                row[6 + 3 * ch + (b - 1)] = set.sh_coeffs[12 * i + 3 * b + ch];
        float a = std::clamp(set.opacities[i], 1e-7f, 1.0f - 1e-7f);
        row[15] = logitf(a);
        for (int k = 0; k < 3; ++k) row[16 + k] = std::log(set.scales[3 * i + k]);
        for (int k = 0; k < 4; ++k) row[19 + k] = set.rotations[4 * i + k];
        write_f32(f, row.data(), row.size());
    }
    if (!f) fail("IOError", "write failed: " + path);
}

GaussianSet import_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open: " + path);
    std::string line;
    std::getline(f, line);
    if (line != "ply") fail("BadMagic", "not a PLY file: " + path);
    int count = -1, nprops = 0;
    bool binary_le = false;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = (fmt == "binary_little_endian");
        } else if (tag == "element") {
            std::string name;
            ss >> name >> count;
            require(name == "vertex", "BadAsset", "expected vertex element: " + path);
        } else if (tag == "property") {
            ++nprops;
        } else if (tag == "end_header") {
            break;
        }
    }
    require(binary_le, "BadAsset", "expected binary_little_endian PLY: " + path);
    require(count >= 0 && nprops == 23, "BadAsset",
            "expected 23 float properties, got " + std::to_string(nprops));

    GaussianSet set;
    set.resize(count);
    std::vector<float> row(23);
    for (int i = 0; i < count; ++i) {
        read_f32(f, row.data(), row.size(), path);
        for (int k = 0; k < 3; ++k) set.positions[3 * i + k] = row[k];
        for (int ch = 0; ch < 3; ++ch) set.sh_coeffs[12 * i + ch] = row[3 + ch];
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 1; b < kSHBasis; ++b)
                set.sh_coeffs[12 * i + 3 * b + ch] = row[6 + 3 * ch + (b - 1)];
        set.opacities[i] = sigmoidf(row[15]);
        for (int k = 0; k < 3; ++k) set.scales[3 * i + k] = std::exp(row[16 + k]);
        float q[4] = {row[19], row[20], row[21], row[22]};
        float qn[4];
        decode_quat(q, qn);
        for (int k = 0; k < 4; ++k) set.rotations[4 * i + k] = qn[k];
    }
    return set;
}

}  // namespace headsup
