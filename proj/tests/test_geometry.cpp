#include <doctest.h>

#include <filesystem>

#include "headsup/common.hpp"
#include "headsup/geometry.hpp"

using namespace headsup;
namespace fs = std::filesystem;

namespace {

Camera simple_camera(double fx = 100, double fy = 100, double cx = 50, double cy = 50,
                     int w = 100, int h = 100) {
    Camera c;
    c.intrinsics << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    c.width = w;
    c.height = h;
    return c;
}

CameraRig sphere_rig(int n, double radius = 1000.0, uint64_t seed = 7) {
    CameraRig rig;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        // deterministic spiral over the sphere
        double z = 1.0 - 2.0 * (i + 0.5) / n;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = i * 2.399963229728653;  // golden angle
        Eigen::Vector3d eye(radius * r * std::cos(phi), radius * r * std::sin(phi), radius * z);
        rig.cameras.push_back(look_at_camera(eye, {0, 0, 0}, {0, 1, 0}, 400, 400, 200, 150));
        (void)rng;
    }
    return rig;
}

TemplateMesh corner_triangle_mesh() {
    TemplateMesh m;
    m.vertices = {{0, 0, 0}, {10, 0, 0}, {0, 10, 0}};
    m.faces = {{0, 1, 2}};
    m.uv_coords = {{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)}};
    return m;
}

}  // namespace

TEST_CASE("project_point hits the principal point on the optical axis") {
    Camera c = simple_camera();
    auto pr = project_point(c, {0, 0, 2});
    CHECK(pr.pixel.x() == doctest::Approx(50.0));
    CHECK(pr.pixel.y() == doctest::Approx(50.0));
    CHECK(pr.depth == doctest::Approx(2.0));

    auto pr2 = project_point(c, {1, 0, 2});
    CHECK(pr2.pixel.x() == doctest::Approx(100.0));
    CHECK(pr2.pixel.y() == doctest::Approx(50.0));
    CHECK(pr2.depth == doctest::Approx(2.0));
}

TEST_CASE("project_point rejects non-positive depth") {
    Camera c = simple_camera();
    CHECK_THROWS_WITH_AS(project_point(c, {0, 0, -1}), doctest::Contains("depth"), Error);
    try {
        project_point(c, {0, 0, 0});
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.code() == "NonPositiveDepth");
    }
}

TEST_CASE("project/unproject round-trip recovers random points") {
    auto rig = sphere_rig(6);
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Camera& cam = rig.cameras[trial % rig.cameras.size()];
        Eigen::Vector3d p(rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(-200, 200));
        Projection pr;
        try {
            pr = project_point(cam, p);
        } catch (const Error&) {
            continue;
        }
        Eigen::Vector3d back = unproject_pixel(cam, pr.pixel, pr.depth);
        CHECK((back - p).norm() < 1e-6);
    }
}

TEST_CASE("plucker_map trivial rays") {
    // camera at the origin: zero moment
    Camera c0 = simple_camera();
    auto p0 = plucker_map(c0, 1, 1);
    CHECK(p0[0] == doctest::Approx(0.0));
    CHECK(p0[1] == doctest::Approx(0.0));
    CHECK(p0[2] == doctest::Approx(1.0));
    CHECK(p0[3] == doctest::Approx(0.0));
    CHECK(p0[4] == doctest::Approx(0.0));
    CHECK(p0[5] == doctest::Approx(0.0));

    // camera center (1,0,0) looking down +z: m = (1,0,0) x (0,0,1) = (0,-1,0)
    Camera c1 = simple_camera();
    c1.extrinsics.block<3, 1>(0, 3) = Eigen::Vector3d(-1, 0, 0);
    auto p1 = plucker_map(c1, 1, 1);
    CHECK(p1[2] == doctest::Approx(1.0));
    CHECK(p1[3] == doctest::Approx(0.0));
    CHECK(p1[4] == doctest::Approx(-1.0));
    CHECK(p1[5] == doctest::Approx(0.0));

    // camera center (0,2,0) looking down +x: m = (0,0,-2)
    Camera c2 = look_at_camera({0, 2, 0}, {10, 2, 0}, {0, 1, 0}, 100, 100, 100, 100);
    auto p2 = plucker_map(c2, 1, 1);
    CHECK(p2[0] == doctest::Approx(1.0));
    CHECK(p2[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(p2[2] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(p2[3] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(p2[4] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(p2[5] == doctest::Approx(-2.0));
}

TEST_CASE("plucker rays are unit with zero incidence and rigid-equivariant") {
    auto rig = sphere_rig(4);
    int gh = 6, gw = 8;
    size_t plane = static_cast<size_t>(gh) * gw;

    // a rigid world motion
    Eigen::Matrix3d rot =
        Eigen::AngleAxisd(0.7, Eigen::Vector3d(0.3, -0.5, 0.8).normalized()).toRotationMatrix();
    Eigen::Vector3d shift(12.0, -40.0, 9.0);

    for (const Camera& cam : rig.cameras) {
        auto pm = plucker_map(cam, gh, gw);
        for (size_t i = 0; i < plane; ++i) {
            Eigen::Vector3d d(pm[i], pm[plane + i], pm[2 * plane + i]);
            Eigen::Vector3d m(pm[3 * plane + i], pm[4 * plane + i], pm[5 * plane + i]);
            CHECK(std::abs(d.norm() - 1.0) < 1e-6);
            CHECK(std::abs(d.dot(m)) < 1e-4);  // mm-scale moments, float storage
        }

        // transform the camera by the world motion and compare against the
        // transformed lines
        Camera moved = cam;
        Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
        t.block<3, 3>(0, 0) = rot;
        t.block<3, 1>(0, 3) = shift;
        moved.extrinsics = cam.extrinsics * t.inverse();
        auto pm2 = plucker_map(moved, gh, gw);
        for (size_t i = 0; i < plane; ++i) {
            Eigen::Vector3d d(pm[i], pm[plane + i], pm[2 * plane + i]);
            Eigen::Vector3d m(pm[3 * plane + i], pm[4 * plane + i], pm[5 * plane + i]);
            Eigen::Vector3d d_exp = rot * d;
            Eigen::Vector3d m_exp = rot * m + shift.cross(d_exp);
            Eigen::Vector3d d2(pm2[i], pm2[plane + i], pm2[2 * plane + i]);
            Eigen::Vector3d m2(pm2[3 * plane + i], pm2[4 * plane + i], pm2[5 * plane + i]);
            CHECK((d2 - d_exp).norm() < 1e-5);
            CHECK((m2 - m_exp).norm() < 1e-3);
        }
    }
}

TEST_CASE("bake_anchor_map interpolates barycentrically") {
    TemplateMesh m = corner_triangle_mesh();
    int res = 512;
    auto map = bake_anchor_map(m, res, res);

    // texel containing the UV centroid carries the barycentric value at its
    // own center; position = (10u, 10v, 0) on this triangle
    int tx = static_cast<int>(res / 3.0 - 0.5 + 0.5), ty = tx;
    REQUIRE(map.is_valid(ty, tx));
    double u = (tx + 0.5) / res, v = (ty + 0.5) / res;
    CHECK(map.pos(0, ty, tx) == doctest::Approx(10 * u).epsilon(1e-6));
    CHECK(map.pos(1, ty, tx) == doctest::Approx(10 * v).epsilon(1e-6));
    CHECK(map.pos(2, ty, tx) == doctest::Approx(0.0));
    CHECK(std::abs(map.pos(0, ty, tx) - 10.0 / 3) < 10.0 * 0.5 / res + 1e-9);
    CHECK(std::abs(map.pos(1, ty, tx) - 10.0 / 3) < 10.0 * 0.5 / res + 1e-9);

    // texel far outside the triangle (u+v > 1) is invalid
    CHECK_FALSE(map.is_valid(res - 1, res - 1));

    // all valid anchors inside the mesh bounding box
    auto box = m.bounding_box();
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
            if (map.is_valid(y, x)) {
                Eigen::Vector3d p(map.pos(0, y, x), map.pos(1, y, x), map.pos(2, y, x));
                CHECK(box.squaredExteriorDistance(p) < 1e-9);
            }
}

TEST_CASE("bake_anchor_map is resolution-consistent for planar triangles") {
    TemplateMesh m = corner_triangle_mesh();
    int res = 32;
    auto lo = bake_anchor_map(m, res, res);
    auto hi = bake_anchor_map(m, 2 * res, 2 * res);
    // the mean of the 2x2 fine block equals the coarse texel for linear maps
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            if (!lo.is_valid(y, x)) continue;
            bool all4 = hi.is_valid(2 * y, 2 * x) && hi.is_valid(2 * y, 2 * x + 1) &&
                        hi.is_valid(2 * y + 1, 2 * x) && hi.is_valid(2 * y + 1, 2 * x + 1);
            if (!all4) continue;
            for (int ch = 0; ch < 3; ++ch) {
                double mean = 0.25 * (hi.pos(ch, 2 * y, 2 * x) + hi.pos(ch, 2 * y, 2 * x + 1) +
                                      hi.pos(ch, 2 * y + 1, 2 * x) + hi.pos(ch, 2 * y + 1, 2 * x + 1));
                CHECK(std::abs(mean - lo.pos(ch, y, x)) < 1e-5);
            }
        }
}

TEST_CASE("bake_anchor_map reports an empty atlas") {
    TemplateMesh m = corner_triangle_mesh();
    // shrink the UV triangle to a point-like sliver between texel centers
    m.uv_coords = {{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1e-6, 0.0),
                    Eigen::Vector2d(0.0, 1e-6)}};
    try {
        bake_anchor_map(m, 8, 8);
        FAIL("expected EmptyAtlas");
    } catch (const Error& e) {
        CHECK(e.code() == "EmptyAtlas");
    }
}

TEST_CASE("farthest_point_views picks extremes on a line") {
    CameraRig rig;
    for (int i = 0; i < 3; ++i)
        rig.cameras.push_back(
            look_at_camera({static_cast<double>(i), 0, -10}, {1, 0, 0}, {0, 1, 0}, 100, 100, 64, 64));
    auto sel = farthest_point_views(rig, 2);
    CHECK(sel == std::vector<int>{0, 2});
    auto all = farthest_point_views(rig, 3);
    CHECK(all == std::vector<int>{0, 2, 1});
    CHECK_THROWS_AS(farthest_point_views(rig, 0), Error);
    CHECK_THROWS_AS(farthest_point_views(rig, 4), Error);
}

TEST_CASE("farthest_point_views beats random subsets and is deterministic") {
    // capture-style rig: 16 cameras on a partial sphere facing the subject
    CameraRig rig;
    for (int el = 0; el < 4; ++el)
        for (int az = 0; az < 4; ++az) {
            double elev = (-30.0 + 25.0 * el) * M_PI / 180.0;
            double azim = (-75.0 + 50.0 * az) * M_PI / 180.0;
            Eigen::Vector3d eye(1000 * std::cos(elev) * std::sin(azim), 1000 * std::sin(elev),
                                1000 * std::cos(elev) * std::cos(azim));
            rig.cameras.push_back(look_at_camera(eye, {0, 0, 0}, {0, 1, 0}, 400, 400, 200, 150));
        }
    auto sel = farthest_point_views(rig, 4);
    CHECK(farthest_point_views(rig, 4) == sel);

    auto min_pairwise = [&](const std::vector<int>& idx) {
        double best = 1e30;
        for (size_t i = 0; i < idx.size(); ++i)
            for (size_t j = i + 1; j < idx.size(); ++j)
                best = std::min(best, (rig.cameras[idx[i]].center() - rig.cameras[idx[j]].center()).norm());
        return best;
    };
    double fps_d = min_pairwise(sel);
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> pick;
        while (pick.size() < 4) {
            int c = static_cast<int>(rng.uniform_int(16));
            if (std::find(pick.begin(), pick.end(), c) == pick.end()) pick.push_back(c);
        }
        CHECK(fps_d >= min_pairwise(pick) - 1e-12);
    }
}

TEST_CASE("region_crop centers on the principal point for a symmetric box") {
    Camera cam = simple_camera(200, 200, 64, 64, 128, 128);
    CropRegion region;
    region.name = "mouth";
    region.box3d = Eigen::AlignedBox3d(Eigen::Vector3d(-10, -10, 90), Eigen::Vector3d(10, 10, 110));
    region.output_size = 16;
    auto rect = project_crop_rect(cam, region);
    CHECK((rect.x0 + rect.x1) / 2 == doctest::Approx(64.0));
    CHECK((rect.y0 + rect.y1) / 2 == doctest::Approx(64.0));

    Image img(3, 128, 128, 0.25f);
    Image crop = region_crop(cam, region, img);
    CHECK(crop.h == 16);
    CHECK(crop.w == 16);
    for (float v : crop.data) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("region_crop rejects boxes behind the camera") {
    Camera cam = simple_camera();
    CropRegion region;
    region.name = "eye_left";
    region.box3d = Eigen::AlignedBox3d(Eigen::Vector3d(-5, -5, -50), Eigen::Vector3d(5, 5, -20));
    Image img(3, 100, 100, 0.0f);
    try {
        region_crop(cam, region, img);
        FAIL("expected DegenerateCrop");
    } catch (const Error& e) {
        CHECK(e.code() == "DegenerateCrop");
    }
}

TEST_CASE("rig JSON round-trips") {
    auto rig = sphere_rig(5);
    fs::path tmp = fs::temp_directory_path() / "headsup_test_rig.json";
    save_rig_json(tmp.string(), rig);
    auto back = load_rig_json(tmp.string());
    REQUIRE(back.cameras.size() == rig.cameras.size());
    for (size_t i = 0; i < rig.cameras.size(); ++i) {
        CHECK((back.cameras[i].intrinsics - rig.cameras[i].intrinsics).norm() < 1e-12);
        CHECK((back.cameras[i].extrinsics - rig.cameras[i].extrinsics).norm() < 1e-12);
    }
    fs::remove(tmp);
}

TEST_CASE("anchor map file round-trips") {
    TemplateMesh m = corner_triangle_mesh();
    auto map = bake_anchor_map(m, 16, 16);
    fs::path tmp = fs::temp_directory_path() / "headsup_test_anchor.bin";
    save_anchor_map(tmp.string(), map);
    auto back = load_anchor_map(tmp.string());
    CHECK(back.valid == map.valid);
    for (size_t i = 0; i < map.positions.size(); ++i) {
        bool both_nan = std::isnan(map.positions[i]) && std::isnan(back.positions[i]);
        CHECK((both_nan || map.positions[i] == back.positions[i]));
    }
    fs::remove(tmp);
}
