#pragma once

#include <json.hpp>

#include "headsup/asset_io.hpp"
#include "headsup/camera.hpp"
#include "headsup/image_io.hpp"
#include "headsup/renderer.hpp"

namespace headsup {

// Procedural identity: smooth radial shape deformation of the shared
// template, a procedural SH texture, optional off-surface protrusions, and
// per-frame expression displacements from a fixed low-frequency basis.
struct IdentitySpec {
    uint64_t seed = 0;
    std::vector<float> shape_coeffs;                 // kShapeBasis entries
    uint64_t texture_seed = 0;
    bool accessories = false;
    std::vector<std::vector<float>> expressions;     // frames x kExpressionBasis
};

inline constexpr int kShapeBasis = 6;
inline constexpr int kExpressionBasis = 8;

struct SynthConfig {
    uint64_t seed = 0;
    int num_subjects = 2;
    int frames_per_subject = 3;
    int val_subjects = 0;  // trailing subjects tagged "val"
    int num_cameras = 16;
    int image_w = 250, image_h = 188;
    double rig_radius = 1000.0;  // mm
    double bg_radius = 1800.0;
    int fg_uv_res = 64;
    int bg_uv_res = 32;
    int mesh_lon = 48, mesh_lat = 32;
    int render_threads = 0;  // 0 = default_threads()

    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

// neutral head template: ellipsoid with a full longitude/latitude UV atlas,
// canonical frame (centroid at the origin, face toward +z), mm
TemplateMesh make_head_template(const SynthConfig& cfg);
TemplateMesh make_background_sphere(const SynthConfig& cfg);

// capture-style rig on a partial sphere facing the template
CameraRig make_head_rig(const SynthConfig& cfg);

struct GeneratedIdentity {
    std::vector<UVGaussianMap> frame_fg_maps;  // raw features per frame
    UVGaussianMap bg_map;
    std::vector<AnchorMap> frame_anchors;      // expression-displaced targets
    std::vector<GaussianScene> frame_scenes;   // decode_uv of the maps
};

IdentitySpec make_identity_spec(const SynthConfig& cfg, int subject_index);

GeneratedIdentity generate_identity(const IdentitySpec& spec, const TemplateMesh& tmpl,
                                    const TemplateMesh& bg_tmpl, const SynthConfig& cfg);

// dataset on disk:
//   root/template.obj, root/bg_template.obj, root/rig.json, root/manifest.json
//   root/subject_XXXX/anchors_YYYY.bin
//   root/subject_XXXX/gt_YYYY.gssc
//   root/subject_XXXX/frame_YYYY/{cam_ZZ.png, mask_ZZ.png}
struct DatasetManifest {
    struct Frame {
        std::vector<std::string> images;
        std::vector<std::string> masks;
        std::string anchors;
        std::string gt_scene;
    };
    struct Subject {
        std::string id;
        std::string split;  // train / val
        std::vector<Frame> frames;
    };
    std::string root;
    std::string rig_path, template_path, bg_template_path;
    int fg_uv_res = 0, bg_uv_res = 0;
    int image_w = 0, image_h = 0;
    std::vector<Subject> subjects;
    nlohmann::json config;

    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

// renders one identity frame into a frame directory (atomic writes) and
// returns the relative file paths
DatasetManifest::Frame render_frame(const GaussianScene& scene, const CameraRig& rig,
                                    const std::string& root, const std::string& subject_id,
                                    int frame_index, const RasterConfig& rcfg);

// full procedural dataset; deterministic in (cfg.seed, cfg)
DatasetManifest generate_dataset(const SynthConfig& cfg, const std::string& out_root);

// loaded view of the dataset
struct MultiViewFrame {
    std::string subject_id;
    int frame_index = 0;
    std::vector<Image> images;
    std::vector<Image> masks;
    CameraRig rig;
    AnchorMap anchors;
    std::string gt_scene_path;
};

class Dataset {
public:
    static Dataset open(const std::string& manifest_path);

    const DatasetManifest& manifest() const { return manifest_; }
    const CameraRig& rig() const { return rig_; }
    const TemplateMesh& head_template() const { return template_; }
    const TemplateMesh& bg_template() const { return bg_template_; }

    // subjects filtered by split ("" = all)
    std::vector<int> subject_indices(const std::string& split) const;
    int frame_count(int subject) const;
    MultiViewFrame load_frame(int subject, int frame) const;

private:
    DatasetManifest manifest_;
    CameraRig rig_;
    TemplateMesh template_, bg_template_;
    std::string root_;
};

}  // namespace headsup
