#pragma once

#include <string>

#include "headsup/gaussians.hpp"

namespace headsup {

// UVGS container: magic "UVGS", u32 version, u32 H, u32 W, u32 channel count,
// channel-major little-endian f32 arrays, anchor positions (3 planes f32),
// validity bitmask (row-major, LSB-first bytes), trailing f32 delta_max.
// Round-trips bit-exactly.
void save_uv_map(const std::string& path, const UVGaussianMap& map);
UVGaussianMap load_uv_map(const std::string& path);

// The same container for bare channel grids (latent export): anchors are
// written as zeros with an all-valid mask and delta_max 0.
void save_channel_grid(const std::string& path, const std::vector<float>& data, int channels,
                       int h, int w);
std::vector<float> load_channel_grid(const std::string& path, int* channels, int* h, int* w);

// Scene container: magic "GSSC", u32 version, fg set, bg set, 16 f32
// bg_to_canonical (row-major). Each set: u32 count then positions, scales,
// rotations, opacities, sh_coeffs as f32 arrays.
void save_scene(const std::string& path, const GaussianScene& scene);
GaussianScene load_scene(const std::string& path);

// Binary little-endian PLY in the de-facto splat-viewer layout: per vertex
// x,y,z, f_dc_0..2, f_rest_0..8 (channel-major), opacity (logit),
// scale_0..2 (log), rot_0..3.
void export_ply(const GaussianSet& set, const std::string& path);
GaussianSet import_ply(const std::string& path);

}  // namespace headsup
