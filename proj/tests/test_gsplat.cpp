#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "headsup/asset_io.hpp"
#include "headsup/common.hpp"
#include "headsup/gaussians.hpp"

using namespace headsup;
namespace fs = std::filesystem;

namespace {

UVGaussianMap random_map(int h, int w, uint64_t seed, float delta_max = 200.0f,
                         float raw_range = 3.0f) {
    UVGaussianMap map(h, w, delta_max);
    Rng rng(seed);
    for (auto& f : map.features) f = static_cast<float>(rng.uniform(-raw_range, raw_range));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            map.anchors.valid[static_cast<size_t>(y) * w + x] = 1;
            for (int ch = 0; ch < 3; ++ch)
                map.anchors.pos(ch, y, x) = static_cast<float>(rng.uniform(-100, 100));
        }
    return map;
}

GaussianSet random_set(int n, uint64_t seed) {
    GaussianSet s;
    s.resize(n);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            s.positions[3 * i + k] = static_cast<float>(rng.uniform(-100, 100));
            s.scales[3 * i + k] = static_cast<float>(rng.uniform(0.5, 20));
        }
        float q[4], qn[4];
        for (int k = 0; k < 4; ++k) q[k] = static_cast<float>(rng.normal());
        decode_quat(q, qn);
        for (int k = 0; k < 4; ++k) s.rotations[4 * i + k] = qn[k];
        s.opacities[i] = static_cast<float>(rng.uniform(0.05, 0.95));
        for (int k = 0; k < 12; ++k)
            s.sh_coeffs[12 * i + k] = static_cast<float>(rng.uniform(-0.4, 0.4));
    }
    return s;
}

}  // namespace

TEST_CASE("decode_uv neutral texel") {
    UVGaussianMap map(1, 1, 200.0f);
    map.anchors.valid[0] = 1;
    map.anchors.pos(0, 0, 0) = 1.0f;
    map.anchors.pos(1, 0, 0) = -2.0f;
    map.anchors.pos(2, 0, 0) = 3.0f;
    auto set = decode_uv(map);
    REQUIRE(set.count == 1);
    CHECK(set.positions[0] == doctest::Approx(1.0f));
    CHECK(set.positions[1] == doctest::Approx(-2.0f));
    CHECK(set.positions[2] == doctest::Approx(3.0f));
    for (int k = 0; k < 3; ++k) CHECK(set.scales[k] == doctest::Approx(1.0f));
    CHECK(set.rotations[0] == doctest::Approx(1.0f));
    for (int k = 1; k < 4; ++k) CHECK(set.rotations[k] == doctest::Approx(0.0f));
    CHECK(set.opacities[0] == doctest::Approx(0.5f));
    for (int k = 0; k < 12; ++k) CHECK(set.sh_coeffs[k] == 0.0f);
}

TEST_CASE("decode_uv offsets saturate at delta_max") {
    UVGaussianMap map(1, 1, 200.0f);
    map.anchors.valid[0] = 1;
    for (int ch = 0; ch < 3; ++ch) map.anchors.pos(ch, 0, 0) = 0.0f;
    map.feat(kChanOffset, 0, 0) = 50.0f;
    auto set = decode_uv(map);
    CHECK(set.positions[0] == doctest::Approx(200.0f * std::tanh(50.0f)));
    CHECK(set.positions[0] <= 200.0f);
    CHECK(set.positions[1] == 0.0f);
    CHECK(set.positions[2] == 0.0f);
}

TEST_CASE("decode_uv emits one Gaussian per valid texel (65536 at 256x256)") {
    UVGaussianMap map(256, 256, 200.0f);
    std::fill(map.anchors.valid.begin(), map.anchors.valid.end(), uint8_t{1});
    std::fill(map.anchors.positions.begin(), map.anchors.positions.end(), 0.0f);
    auto set = decode_uv(map);
    CHECK(set.count == 65536);
}

TEST_CASE("decode_uv invariants hold under fuzzing") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        UVGaussianMap map = random_map(8, 8, 1000 + trial, 200.0f,
                                       static_cast<float>(rng.uniform(0.1, 1000.0)));
        auto set = decode_uv(map);
        set.validate();
        // infinity-norm offset bound is exact
        // the decoded offset itself obeys the bound exactly
        for (float raw : map.features) {
            float off = decode_offset(raw, map.delta_max);
            CHECK(std::abs(off) <= map.delta_max);
        }
        auto idx = decode_texel_indices(map);
        for (int i = 0; i < set.count; ++i) {
            int t = idx[i];
            int y = t / map.w, x = t % map.w;
            for (int ch = 0; ch < 3; ++ch)  // reconstructed difference, float rounding slack
                CHECK(std::abs(set.positions[3 * i + ch] - map.anchors.pos(ch, y, x)) <=
                      map.delta_max * (1.0f + 1e-6f));
        }
    }
}

TEST_CASE("decode_uv is texel-local") {
    UVGaussianMap map = random_map(6, 6, 5);
    auto base = decode_uv(map);
    UVGaussianMap map2 = map;
    map2.feat(kChanOpacity, 2, 3) += 1.5f;
    map2.feat(kChanOffset + 1, 2, 3) -= 0.5f;
    auto changed = decode_uv(map2);
    auto idx = decode_texel_indices(map);
    int n_diff = 0;
    for (int i = 0; i < base.count; ++i) {
        bool diff = base.opacities[i] != changed.opacities[i] ||
                    base.positions[3 * i + 1] != changed.positions[3 * i + 1];
        if (diff) {
            ++n_diff;
            CHECK(idx[i] == 2 * map.w + 3);
        }
    }
    CHECK(n_diff == 1);
}

TEST_CASE("sh_to_rgb basics") {
    float zero[12] = {};
    auto grey = sh_to_rgb(zero, {0, 0, 1});
    CHECK(grey.x() == doctest::Approx(0.5f));
    CHECK(grey.y() == doctest::Approx(0.5f));
    CHECK(grey.z() == doctest::Approx(0.5f));

    float dc[12] = {};
    for (int ch = 0; ch < 3; ++ch) dc[ch] = static_cast<float>(0.5 / kSH0);
    auto white = sh_to_rgb(dc, {0, 1, 0});
    CHECK(white.x() == doctest::Approx(1.0f));
    CHECK(white.y() == doctest::Approx(1.0f));
    CHECK(white.z() == doctest::Approx(1.0f));
}

TEST_CASE("sh_to_rgb degree-1 odd symmetry") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        float coeffs[12] = {};
        for (int k = 3; k < 12; ++k) coeffs[k] = static_cast<float>(rng.uniform(-0.2, 0.2));
        Eigen::Vector3f d(rng.normalf(), rng.normalf(), rng.normalf());
        d.normalize();
        Eigen::Vector3f d_neg(d.x(), d.y(), -d.z());
        auto a = sh_to_rgb(coeffs, d);
        auto b = sh_to_rgb(coeffs, d_neg);
        for (int ch = 0; ch < 3; ++ch) {
            // z-term cancels; the sum equals twice the z-free evaluation
            double expect = 2.0 * (0.5 - kSH1 * d.y() * coeffs[3 + ch] - kSH1 * d.x() * coeffs[9 + ch]);
            CHECK(a[ch] + b[ch] == doctest::Approx(expect).epsilon(1e-5));
        }
    }
}

TEST_CASE("sh_to_rgb with zero degree-1 coefficients is view-independent") {
    float coeffs[12] = {};
    coeffs[0] = 0.3f;
    coeffs[1] = -0.2f;
    coeffs[2] = 0.9f;
    Rng rng(23);
    auto ref = sh_to_rgb(coeffs, {1, 0, 0});
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::Vector3f d(rng.normalf(), rng.normalf(), rng.normalf());
        d.normalize();
        auto v = sh_to_rgb(coeffs, d);
        CHECK((v - ref).norm() == 0.0f);
    }
}

TEST_CASE("UVGS container round-trips bit-exactly") {
    auto map = random_map(12, 9, 42);
    // punch some invalid texels
    map.anchors.valid[5] = 0;
    map.anchors.valid[17] = 0;
    fs::path tmp = fs::temp_directory_path() / "headsup_test.uvgs";
    save_uv_map(tmp.string(), map);
    auto back = load_uv_map(tmp.string());
    CHECK(back.h == map.h);
    CHECK(back.w == map.w);
    CHECK(back.delta_max == map.delta_max);
    CHECK(std::memcmp(back.features.data(), map.features.data(),
                      map.features.size() * sizeof(float)) == 0);
    CHECK(back.anchors.valid == map.anchors.valid);
    for (size_t i = 0; i < map.anchors.positions.size(); ++i) {
        bool both_nan =
            std::isnan(map.anchors.positions[i]) && std::isnan(back.anchors.positions[i]);
        CHECK((both_nan || map.anchors.positions[i] == back.anchors.positions[i]));
    }
    fs::remove(tmp);
}

TEST_CASE("UVGS container detects corruption") {
    auto map = random_map(4, 4, 1);
    fs::path tmp = fs::temp_directory_path() / "headsup_corrupt.uvgs";
    save_uv_map(tmp.string(), map);

    SUBCASE("bad magic") {
        std::fstream f(tmp, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        try {
            load_uv_map(tmp.string());
            FAIL("expected BadMagic");
        } catch (const Error& e) {
            CHECK(e.code() == "BadMagic");
        }
    }
    SUBCASE("bad version") {
        std::fstream f(tmp, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        uint32_t v = 999;
        f.write(reinterpret_cast<const char*>(&v), 4);
        f.close();
        try {
            load_uv_map(tmp.string());
            FAIL("expected VersionMismatch");
        } catch (const Error& e) {
            CHECK(e.code() == "VersionMismatch");
        }
    }
    SUBCASE("truncated") {
        auto size = fs::file_size(tmp);
        fs::resize_file(tmp, size / 2);
        try {
            load_uv_map(tmp.string());
            FAIL("expected TruncatedFile");
        } catch (const Error& e) {
            CHECK(e.code() == "TruncatedFile");
        }
    }
    fs::remove(tmp);
}

TEST_CASE("scene container round-trips") {
    GaussianScene scene;
    scene.foreground = random_set(20, 3);
    scene.background = random_set(15, 4);
    fs::path tmp = fs::temp_directory_path() / "headsup_scene.gssc";
    save_scene(tmp.string(), scene);
    auto back = load_scene(tmp.string());
    CHECK(back.foreground.count == 20);
    CHECK(back.background.count == 15);
    CHECK(back.foreground.positions == scene.foreground.positions);
    CHECK(back.background.sh_coeffs == scene.background.sh_coeffs);
    fs::remove(tmp);
}

TEST_CASE("PLY header carries 23 float properties") {
    auto set = random_set(1, 7);
    fs::path tmp = fs::temp_directory_path() / "headsup_one.ply";
    export_ply(set, tmp.string());
    std::ifstream f(tmp);
    std::string line;
    int props = 0;
    bool vertex1 = false;
    while (std::getline(f, line) && line != "end_header") {
        if (line == "element vertex 1") vertex1 = true;
        if (line.rfind("property float", 0) == 0) ++props;
    }
    CHECK(vertex1);
    CHECK(props == 23);
    fs::remove(tmp);
}

TEST_CASE("PLY round-trip recovers parameters after activation inversion") {
    auto set = random_set(64, 11);
    fs::path tmp = fs::temp_directory_path() / "headsup_rt.ply";
    export_ply(set, tmp.string());
    auto back = import_ply(tmp.string());
    REQUIRE(back.count == set.count);
    for (int i = 0; i < set.count; ++i) {
        CHECK(std::abs(back.opacities[i] - set.opacities[i]) < 1e-6f);
        for (int k = 0; k < 3; ++k) {
            CHECK(std::abs(back.positions[3 * i + k] - set.positions[3 * i + k]) < 1e-6f);
            CHECK(std::abs(back.scales[3 * i + k] - set.scales[3 * i + k]) <
                  1e-6f * std::max(1.0f, set.scales[3 * i + k]));
        }
        for (int k = 0; k < 4; ++k)
            CHECK(std::abs(back.rotations[4 * i + k] - set.rotations[4 * i + k]) < 1e-6f);
        for (int k = 0; k < 12; ++k)
            CHECK(back.sh_coeffs[12 * i + k] == set.sh_coeffs[12 * i + k]);
    }
    fs::remove(tmp);
}

TEST_CASE("empty PLY is valid") {
    GaussianSet set;
    fs::path tmp = fs::temp_directory_path() / "headsup_empty.ply";
    export_ply(set, tmp.string());
    auto back = import_ply(tmp.string());
    CHECK(back.count == 0);
    fs::remove(tmp);
}
