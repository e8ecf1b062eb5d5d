#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "headsup/common.hpp"

namespace headsup {

// Triangle mesh with a per-face-corner UV atlas, canonical frame, mm.
struct TemplateMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 3>> faces;              // vertex indices
    std::vector<std::array<Eigen::Vector2d, 3>> uv_coords;  // per face corner, in [0,1]^2

    void validate() const;
    Eigen::AlignedBox3d bounding_box() const;
};

// OBJ with v / vt / f v/vt entries. Faces with more than 3 corners are
// fan-triangulated.
TemplateMesh load_obj(const std::string& path);
void save_obj(const std::string& path, const TemplateMesh& mesh);

}  // namespace headsup
