#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "headsup/camera.hpp"
#include "headsup/image.hpp"
#include "headsup/mesh.hpp"

namespace headsup {

// Per-texel template anchor positions V(u,v). Texels not covered by the UV
// atlas are invalid and carry a NaN sentinel.
struct AnchorMap {
    int h = 0, w = 0;
    std::vector<float> positions;  // 3 planes of h*w, channel-major
    std::vector<uint8_t> valid;    // h*w, 0/1

    AnchorMap() = default;
    AnchorMap(int h_, int w_)
        : h(h_), w(w_), positions(static_cast<size_t>(3) * h_ * w_,
                                  std::numeric_limits<float>::quiet_NaN()),
          valid(static_cast<size_t>(h_) * w_, 0) {}

    float& pos(int ch, int y, int x) { return positions[(static_cast<size_t>(ch) * h + y) * w + x]; }
    float pos(int ch, int y, int x) const {
        return positions[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    bool is_valid(int y, int x) const { return valid[static_cast<size_t>(y) * w + x] != 0; }
    size_t valid_count() const;
};

void save_anchor_map(const std::string& path, const AnchorMap& map);
AnchorMap load_anchor_map(const std::string& path);

// 6-channel Plucker ray map (d, m = o x d) for grid cell centers covering the
// camera image; d is the unit world-space ray direction, the moment is taken
// about the world origin. Layout: 6 planes of grid_h*grid_w.
std::vector<float> plucker_map(const Camera& cam, int grid_h, int grid_w);

// Rasterizes the UV atlas at texel centers (u+0.5)/W. Throws EmptyAtlas if no
// texel is covered.
AnchorMap bake_anchor_map(const TemplateMesh& mesh, int h_uv, int w_uv);

// Greedy farthest-point selection on camera centers, seeded at index 0, ties
// broken by lowest index.
std::vector<int> farthest_point_views(const CameraRig& rig, int n);

// Frontal-priority ordering: cameras sorted by angle between their viewing
// direction and the rig's frontal axis (the mean camera->origin direction),
// ties by index. Returns the first n indices.
std::vector<int> frontal_priority_views(const CameraRig& rig, int n);

struct CropRegion {
    std::string name;          // eye_left / eye_right / mouth
    Eigen::AlignedBox3d box3d; // canonical frame, mm
    int output_size = 64;      // square, pixels
};

// Projected 2D bounding rectangle of the region's box corners, clipped to the
// image. Throws DegenerateCrop when the clipped rectangle has zero area or the
// box lies behind the camera.
struct CropRect {
    double x0, y0, x1, y1;
};
CropRect project_crop_rect(const Camera& cam, const CropRegion& region);

// Crop + bilinear resample to region.output_size x region.output_size.
Image region_crop(const Camera& cam, const CropRegion& region, const Image& image);

}  // namespace headsup
