#include "headsup/camera.hpp"

#include <fstream>
#include <json.hpp>

namespace headsup {

using nlohmann::json;

void Camera::validate() const {
    require(fx() > 0 && fy() > 0, "BadCamera", "focal lengths must be positive");
    require(width > 0 && height > 0, "BadCamera", "image size must be positive");
    require(cx() > 0 && cx() < width && cy() > 0 && cy() < height, "BadCamera",
            "principal point must lie inside the image");
    Eigen::Matrix3d r = rotation();
    double ortho = (r * r.transpose() - Eigen::Matrix3d::Identity()).norm();
    require(ortho < 1e-6, "BadCamera", "extrinsic rotation is not orthonormal");
    require(std::abs(r.determinant() - 1.0) < 1e-6, "BadCamera",
            "extrinsic rotation must have determinant +1");
    Eigen::RowVector4d bottom = extrinsics.row(3);
    require((bottom - Eigen::RowVector4d(0, 0, 0, 1)).norm() < 1e-9, "BadCamera",
            "extrinsics bottom row must be (0,0,0,1)");
}

Camera Camera::resized(int new_w, int new_h) const {
    Camera c = *this;
    double sx = static_cast<double>(new_w) / width;
    double sy = static_cast<double>(new_h) / height;
    c.intrinsics(0, 0) *= sx;
    c.intrinsics(0, 2) *= sx;
    c.intrinsics(1, 1) *= sy;
    c.intrinsics(1, 2) *= sy;
    c.width = new_w;
    c.height = new_h;
    return c;
}

void CameraRig::validate() const {
    require(!cameras.empty(), "BadRig", "camera list is empty");
    for (const auto& c : cameras) c.validate();
}

Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double fx, double fy, int width, int height) {
    Eigen::Vector3d fwd = (target - eye).normalized();  // camera +z
    Eigen::Vector3d right = fwd.cross(up).normalized(); // camera +x
    Eigen::Vector3d down = fwd.cross(right);            // camera +y (image down)
    Eigen::Matrix3d r_wc;
    r_wc.row(0) = right.transpose();
    r_wc.row(1) = down.transpose();
    r_wc.row(2) = fwd.transpose();

    Camera cam;
    cam.intrinsics << fx, 0, width * 0.5, 0, fy, height * 0.5, 0, 0, 1;
    cam.extrinsics.setIdentity();
    cam.extrinsics.block<3, 3>(0, 0) = r_wc;
    cam.extrinsics.block<3, 1>(0, 3) = -r_wc * eye;
    cam.width = width;
    cam.height = height;
    cam.validate();
    return cam;
}

namespace {

Camera camera_from_json(const json& j) {
    Camera c;
    auto k = j.at("intrinsics");
    auto e = j.at("extrinsics");
    require(k.size() == 9, "BadRig", "intrinsics must have 9 numbers");
    require(e.size() == 16, "BadRig", "extrinsics must have 16 numbers");
    for (int i = 0; i < 9; ++i) c.intrinsics(i / 3, i % 3) = k[i].get<double>();
    for (int i = 0; i < 16; ++i) c.extrinsics(i / 4, i % 4) = e[i].get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    return c;
}

json camera_to_json(const Camera& c) {
    json k = json::array(), e = json::array();
    for (int i = 0; i < 9; ++i) k.push_back(c.intrinsics(i / 3, i % 3));
    for (int i = 0; i < 16; ++i) e.push_back(c.extrinsics(i / 4, i % 4));
    return json{{"intrinsics", k}, {"extrinsics", e}, {"width", c.width}, {"height", c.height}};
}

}  // namespace

CameraRig load_rig_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail("MissingFile", "cannot open rig: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail("BadRig", std::string("rig JSON parse error: ") + e.what());
    }
    CameraRig rig;
    const json* cams = &j;
    if (j.is_object()) {
        cams = &j.at("cameras");
        if (j.contains("canonical_transform")) {
            auto t = j.at("canonical_transform");
            require(t.size() == 16, "BadRig", "canonical_transform must have 16 numbers");
            for (int i = 0; i < 16; ++i) rig.canonical_transform(i / 4, i % 4) = t[i].get<double>();
        }
    }
    require(cams->is_array(), "BadRig", "rig must be a list of cameras");
    for (const auto& cj : *cams) rig.cameras.push_back(camera_from_json(cj));
    rig.validate();
    return rig;
}

void save_rig_json(const std::string& path, const CameraRig& rig) {
    json arr = json::array();
    for (const auto& c : rig.cameras) arr.push_back(camera_to_json(c));
    std::ofstream f(path);
    if (!f) fail("IOError", "cannot open for write: " + path);
    f << arr.dump(1) << "\n";
}

Projection project_point(const Camera& cam, const Eigen::Vector3d& point) {
    Eigen::Vector3d pc = cam.rotation() * point + cam.translation();
    if (pc.z() <= 1e-6)
        fail("NonPositiveDepth", "point projects to depth " + std::to_string(pc.z()) + " mm");
    return {Eigen::Vector2d(cam.fx() * pc.x() / pc.z() + cam.cx(),
                            cam.fy() * pc.y() / pc.z() + cam.cy()),
            pc.z()};
}

Eigen::Vector3d unproject_pixel(const Camera& cam, const Eigen::Vector2d& pixel, double depth) {
    Eigen::Vector3d pc((pixel.x() - cam.cx()) / cam.fx() * depth,
                       (pixel.y() - cam.cy()) / cam.fy() * depth, depth);
    return cam.rotation().transpose() * (pc - cam.translation());
}

}  // namespace headsup
