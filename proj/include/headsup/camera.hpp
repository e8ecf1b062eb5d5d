#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "headsup/common.hpp"

namespace headsup {

// Pinhole camera. Intrinsics in pixels (zero skew), extrinsics a rigid
// world-to-camera transform in millimeters; the camera looks down +z in its
// own frame.
struct Camera {
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();
    int width = 0, height = 0;

    double fx() const { return intrinsics(0, 0); }
    double fy() const { return intrinsics(1, 1); }
    double cx() const { return intrinsics(0, 2); }
    double cy() const { return intrinsics(1, 2); }

    Eigen::Matrix3d rotation() const { return extrinsics.block<3, 3>(0, 0); }
    Eigen::Vector3d translation() const { return extrinsics.block<3, 1>(0, 3); }
    // camera center in world coordinates
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

    void validate() const;

    // Pixel-preserving rescale to (new_w, new_h).
    Camera resized(int new_w, int new_h) const;
};

struct CameraRig {
    std::vector<Camera> cameras;
    Eigen::Matrix4d canonical_transform = Eigen::Matrix4d::Identity();

    void validate() const;
};

Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double fx, double fy, int width, int height);

// Rig JSON: a list of {intrinsics: 9 row-major, extrinsics: 16 row-major,
// width, height}. An object form {"cameras": [...], "canonical_transform":
// [16]} is also accepted on read.
CameraRig load_rig_json(const std::string& path);
void save_rig_json(const std::string& path, const CameraRig& rig);

// Projects a canonical/world-space point. Throws NonPositiveDepth when the
// camera-frame depth is <= 1e-6 mm.
struct Projection {
    Eigen::Vector2d pixel;
    double depth;
};
Projection project_point(const Camera& cam, const Eigen::Vector3d& point);

// Inverse of project_point at a given depth.
Eigen::Vector3d unproject_pixel(const Camera& cam, const Eigen::Vector2d& pixel, double depth);

}  // namespace headsup
