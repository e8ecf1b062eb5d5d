#include "headsup/synthdata.hpp"

#include <filesystem>
#include <fstream>

namespace headsup {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json SynthConfig::to_json() const {
    return json{{"seed", seed},
                {"num_subjects", num_subjects},
                {"frames_per_subject", frames_per_subject},
                {"val_subjects", val_subjects},
                {"num_cameras", num_cameras},
                {"image_w", image_w},
                {"image_h", image_h},
                {"rig_radius", rig_radius},
                {"bg_radius", bg_radius},
                {"fg_uv_res", fg_uv_res},
                {"bg_uv_res", bg_uv_res},
                {"mesh_lon", mesh_lon},
                {"mesh_lat", mesh_lat}};
}

SynthConfig SynthConfig::from_json(const json& j) {
    SynthConfig c;
    c.seed = j.value("seed", c.seed);
    c.num_subjects = j.value("num_subjects", c.num_subjects);
    c.frames_per_subject = j.value("frames_per_subject", c.frames_per_subject);
    c.val_subjects = j.value("val_subjects", c.val_subjects);
    c.num_cameras = j.value("num_cameras", c.num_cameras);
    c.image_w = j.value("image_w", c.image_w);
    c.image_h = j.value("image_h", c.image_h);
    c.rig_radius = j.value("rig_radius", c.rig_radius);
    c.bg_radius = j.value("bg_radius", c.bg_radius);
    c.fg_uv_res = j.value("fg_uv_res", c.fg_uv_res);
    c.bg_uv_res = j.value("bg_uv_res", c.bg_uv_res);
    c.mesh_lon = j.value("mesh_lon", c.mesh_lon);
    c.mesh_lat = j.value("mesh_lat", c.mesh_lat);
    return c;
}

namespace {

// ellipsoid point for spherical parameters; face direction is +z
Eigen::Vector3d ellipsoid_point(double u, double v, double rx, double ry, double rz) {
    double theta = v * M_PI;           // polar, 0..pi
    double phi = (u - 0.5) * 2 * M_PI; // azimuth, -pi..pi, u=0.5 faces +z
    double sx = std::sin(theta) * std::sin(phi);
    double sy = std::cos(theta);
    double sz = std::sin(theta) * std::cos(phi);
    return {rx * sx, ry * sy, rz * sz};
}

TemplateMesh lonlat_mesh(double rx, double ry, double rz, int n_lon, int n_lat) {
    TemplateMesh m;
    // (n_lon+1) x (n_lat+1) vertex grid; u seam duplicated so UVs stay in [0,1]
    for (int j = 0; j <= n_lat; ++j)
        for (int i = 0; i <= n_lon; ++i) {
            double u = static_cast<double>(i) / n_lon;
            double v = static_cast<double>(j) / n_lat;
            // collapse the poles slightly to avoid degenerate triangles
            double vv = 0.002 + 0.996 * v;
            m.vertices.push_back(ellipsoid_point(u, vv, rx, ry, rz));
        }
    auto vid = [&](int i, int j) { return j * (n_lon + 1) + i; };
    for (int j = 0; j < n_lat; ++j)
        for (int i = 0; i < n_lon; ++i) {
            double u0 = static_cast<double>(i) / n_lon, u1 = static_cast<double>(i + 1) / n_lon;
            double v0 = static_cast<double>(j) / n_lat, v1 = static_cast<double>(j + 1) / n_lat;
            m.faces.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            m.uv_coords.push_back(
                {Eigen::Vector2d(u0, v0), Eigen::Vector2d(u1, v0), Eigen::Vector2d(u1, v1)});
            m.faces.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
            m.uv_coords.push_back(
                {Eigen::Vector2d(u0, v0), Eigen::Vector2d(u1, v1), Eigen::Vector2d(u0, v1)});
        }
    m.validate();
    return m;
}

// smooth scalar fields over UV used by the shape basis
double shape_field(int k, double u, double v) {
    double pu = 2 * M_PI * u, pv = M_PI * v;
    switch (k % kShapeBasis) {
        case 0: return std::sin(pv);
        case 1: return std::cos(pu) * std::sin(pv);
        case 2: return std::sin(pu) * std::sin(pv);
        case 3: return std::cos(2 * pv);
        case 4: return std::cos(2 * pu) * std::sin(pv) * std::sin(pv);
        default: return std::sin(pu + 2 * pv);
    }
}

// expression displacement basis (mm per unit coefficient), localized fields
Eigen::Vector3d expression_field(int k, double u, double v) {
    auto bump = [](double x, double c, double s) {
        double d = (x - c) / s;
        return std::exp(-0.5 * d * d);
    };
    double pu = 2 * M_PI * u;
    switch (k % kExpressionBasis) {
        case 0: return {0, bump(v, 0.75, 0.08) * std::cos(pu), 0};           // jaw
        case 1: return {bump(u, 0.40, 0.05) * bump(v, 0.45, 0.06), 0, 0};    // left cheek
        case 2: return {-bump(u, 0.60, 0.05) * bump(v, 0.45, 0.06), 0, 0};   // right cheek
        case 3: return {0, -bump(v, 0.30, 0.06), 0};                          // brow
        case 4: return {0, 0, bump(u, 0.5, 0.07) * bump(v, 0.62, 0.05)};      // lips forward
        case 5: return {0, bump(v, 0.5, 0.2) * std::sin(2 * pu), 0};
        case 6: return {std::sin(pu) * bump(v, 0.5, 0.15), 0, 0};
        default: return {0, 0, std::cos(pu) * bump(v, 0.4, 0.1)};
    }
}

float smooth_noise(double u, double v, uint64_t seed, int octaves = 3) {
    // tiny fixed sinusoid mixture; cheap, smooth and deterministic
    double acc = 0;
    Rng rng(seed);
    for (int o = 0; o < octaves; ++o) {
        double fu = 1.0 + 2.0 * o + rng.uniform(0, 1.5);
        double fv = 1.0 + 2.0 * o + rng.uniform(0, 1.5);
        double pu = rng.uniform(0, 2 * M_PI), pv = rng.uniform(0, 2 * M_PI);
        double amp = 1.0 / (1 << o);
        acc += amp * std::sin(2 * M_PI * fu * u + pu) * std::sin(2 * M_PI * fv * v + pv);
    }
    return static_cast<float>(acc / 1.75);
}

void atomic_write_png(const std::string& path, const Image& img) {
    std::string tmp = path + ".tmp";
    write_png(tmp, img);
    fs::rename(tmp, path);
}

}  // namespace

TemplateMesh make_head_template(const SynthConfig& cfg) {
    return lonlat_mesh(80.0, 105.0, 90.0, cfg.mesh_lon, cfg.mesh_lat);
}

TemplateMesh make_background_sphere(const SynthConfig& cfg) {
    return lonlat_mesh(cfg.bg_radius, cfg.bg_radius, cfg.bg_radius, std::max(12, cfg.mesh_lon / 2),
                       std::max(8, cfg.mesh_lat / 2));
}

CameraRig make_head_rig(const SynthConfig& cfg) {
    CameraRig rig;
    require(cfg.num_cameras >= 1, "BadConfig", "rig needs at least one camera");
    double fy = 0.85 * cfg.image_h * cfg.rig_radius / 320.0;
    // deterministic spiral over a partial cap facing +z
    for (int i = 0; i < cfg.num_cameras; ++i) {
        double t = cfg.num_cameras == 1 ? 0.5 : static_cast<double>(i) / (cfg.num_cameras - 1);
        double elev = (-25.0 + 65.0 * t) * M_PI / 180.0;
        double azim = 80.0 * std::sin(2.4 * M_PI * t + 0.7) * M_PI / 180.0;
        Eigen::Vector3d eye(cfg.rig_radius * std::cos(elev) * std::sin(azim),
                            cfg.rig_radius * std::sin(elev),
                            cfg.rig_radius * std::cos(elev) * std::cos(azim));
        rig.cameras.push_back(
            look_at_camera(eye, {0, 0, 0}, {0, 1, 0}, fy, fy, cfg.image_w, cfg.image_h));
    }
    return rig;
}

IdentitySpec make_identity_spec(const SynthConfig& cfg, int subject_index) {
    IdentitySpec spec;
    Rng rng = Rng(cfg.seed).substream("identity_" + std::to_string(subject_index));
    spec.seed = rng.next_u64();
    spec.texture_seed = rng.next_u64();
    spec.shape_coeffs.resize(kShapeBasis);
    for (auto& c : spec.shape_coeffs) c = static_cast<float>(rng.uniform(-0.08, 0.08));
    spec.accessories = rng.uniform() < 0.5;
    spec.expressions.resize(cfg.frames_per_subject);
    for (int f = 0; f < cfg.frames_per_subject; ++f) {
        spec.expressions[f].assign(kExpressionBasis, 0.0f);
        if (f == 0) continue;  // frame 0 is the neutral expression
        for (auto& e : spec.expressions[f]) e = static_cast<float>(rng.uniform(-4.0, 4.0));
    }
    return spec;
}

GeneratedIdentity generate_identity(const IdentitySpec& spec, const TemplateMesh& tmpl,
                                    const TemplateMesh& bg_tmpl, const SynthConfig& cfg) {
    GeneratedIdentity out;
    int res = cfg.fg_uv_res;
    AnchorMap neutral = bake_anchor_map(tmpl, res, res);
    size_t plane = static_cast<size_t>(res) * res;

    Rng rng(spec.seed);
    Rng local = rng.substream("local_offsets");
    Rng scale_rng = rng.substream("scales");
    Rng rot_rng = rng.substream("rotations");

    // mean anchor spacing drives the Gaussian scale so the surface closes
    double spacing = 2 * M_PI * 90.0 / res;

    int frames = static_cast<int>(spec.expressions.size());
    require(frames >= 1, "BadConfig", "identity needs at least one frame");

    // per-texel static fields (shared across frames)
    std::vector<float> tex_dc[3], tex_d1[9], local_off[3], log_scale[3], quat_raw[4], opac_raw;
    for (auto& v : tex_dc) v.resize(plane);
    for (auto& v : tex_d1) v.resize(plane);
    for (auto& v : local_off) v.resize(plane);
    for (auto& v : log_scale) v.resize(plane);
    for (auto& v : quat_raw) v.resize(plane);
    opac_raw.resize(plane);

    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            size_t i = static_cast<size_t>(y) * res + x;
            double u = (x + 0.5) / res, v = (y + 0.5) / res;
            for (int c = 0; c < 3; ++c)
                tex_dc[c][i] = 1.1f * smooth_noise(u, v, spec.texture_seed + 11 * c + 1);
            for (int k = 0; k < 9; ++k)
                tex_d1[k][i] = 0.12f * smooth_noise(u, v, spec.texture_seed + 101 + k);
            for (int c = 0; c < 3; ++c)
                local_off[c][i] = 2.5f * smooth_noise(u, v, spec.seed + 201 + c);
            for (int c = 0; c < 3; ++c)
                log_scale[c][i] = static_cast<float>(std::log(spacing * 0.65) +
                                                     0.25 * smooth_noise(u, v, spec.seed + 301 + c));
            quat_raw[0][i] = 1.0f;
            for (int k = 1; k < 4; ++k)
                quat_raw[k][i] = 0.3f * smooth_noise(u, v, spec.seed + 401 + k);
            opac_raw[i] = 2.5f + 1.5f * smooth_noise(u, v, spec.seed + 501);
        }
    (void)local;
    (void)scale_rng;
    (void)rot_rng;

    // accessories: a protruding band near the top of the head
    std::vector<float> accessory_out(plane, 0.0f);
    if (spec.accessories) {
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                size_t i = static_cast<size_t>(y) * res + x;
                double v = (y + 0.5) / res;
                double band = std::exp(-0.5 * std::pow((v - 0.12) / 0.05, 2.0));
                accessory_out[i] = static_cast<float>(25.0 * band);
            }
    }

    for (int f = 0; f < frames; ++f) {
        UVGaussianMap map(res, res, 200.0f);
        map.anchors = neutral;
        AnchorMap frame_anchor(res, res);
        frame_anchor.valid = neutral.valid;

        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                size_t i = static_cast<size_t>(y) * res + x;
                if (!neutral.valid[i]) continue;
                double u = (x + 0.5) / res, v = (y + 0.5) / res;

                Eigen::Vector3d anchor(neutral.positions[i], neutral.positions[plane + i],
                                       neutral.positions[2 * plane + i]);
                // subject shape: radial scaling of the neutral anchor
                double radial = 0.0;
                for (int k = 0; k < kShapeBasis; ++k)
                    radial += spec.shape_coeffs.size() > static_cast<size_t>(k)
                                  ? spec.shape_coeffs[k] * shape_field(k, u, v)
                                  : 0.0;
                Eigen::Vector3d shaped = anchor * (1.0 + radial);

                // expression displacement
                Eigen::Vector3d expr = Eigen::Vector3d::Zero();
                for (int k = 0; k < kExpressionBasis; ++k)
                    if (spec.expressions[f].size() > static_cast<size_t>(k))
                        expr += static_cast<double>(spec.expressions[f][k]) *
                                expression_field(k, u, v);

                Eigen::Vector3d target = shaped + expr;
                for (int c = 0; c < 3; ++c)
                    frame_anchor.pos(c, y, x) = static_cast<float>(target[c]);

                // radial accessory protrusion (outward along the anchor normal)
                Eigen::Vector3d outward = anchor.normalized();
                Eigen::Vector3d gt_pos = target + outward * accessory_out[i];
                gt_pos += Eigen::Vector3d(local_off[0][i], local_off[1][i], local_off[2][i]);

                // raw features that decode to the target exactly
                for (int c = 0; c < 3; ++c) {
                    double off = (gt_pos[c] - anchor[c]) / map.delta_max;
                    off = std::clamp(off, -0.999999, 0.999999);
                    map.feat(kChanOffset + c, y, x) = static_cast<float>(std::atanh(off));
                    map.feat(kChanLogScale + c, y, x) = log_scale[c][i];
                }
                for (int k = 0; k < 4; ++k) map.feat(kChanQuat + k, y, x) = quat_raw[k][i];
                map.feat(kChanOpacity, y, x) = opac_raw[i];
                for (int c = 0; c < 3; ++c) map.feat(kChanSH + c, y, x) = tex_dc[c][i];
                for (int k = 0; k < 9; ++k) map.feat(kChanSH + 3 + k, y, x) = tex_d1[k][i];
                if (spec.accessories && accessory_out[i] > 5.0f) {
                    // accessory texels read as a dark glossy band
                    map.feat(kChanSH + 0, y, x) = -1.2f;
                    map.feat(kChanSH + 1, y, x) = -1.0f;
                    map.feat(kChanSH + 2, y, x) = -0.6f;
                }
            }

        out.frame_fg_maps.push_back(map);
        out.frame_anchors.push_back(std::move(frame_anchor));
    }

    // background sphere: deterministic in the dataset seed via spec.seed
    int bres = cfg.bg_uv_res;
    UVGaussianMap bg(bres, bres, 10.0f);
    bg.anchors = bake_anchor_map(bg_tmpl, bres, bres);
    size_t bplane = static_cast<size_t>(bres) * bres;
    double bg_spacing = 2 * M_PI * cfg.bg_radius / bres;
    for (int y = 0; y < bres; ++y)
        for (int x = 0; x < bres; ++x) {
            size_t i = static_cast<size_t>(y) * bres + x;
            if (!bg.anchors.valid[i]) continue;
            double u = (x + 0.5) / bres, v = (y + 0.5) / bres;
            for (int c = 0; c < 3; ++c) {
                bg.feat(kChanSH + c, y, x) =
                    -0.5f + 0.8f * smooth_noise(u, v, cfg.seed + 601 + c) +
                    static_cast<float>(0.4 * v);
                bg.feat(kChanLogScale + c, y, x) = static_cast<float>(std::log(bg_spacing * 0.7));
            }
            bg.feat(kChanQuat, y, x) = 1.0f;
            bg.feat(kChanOpacity, y, x) = 4.0f;  // nearly opaque backdrop
        }
    out.bg_map = bg;

    for (int f = 0; f < frames; ++f) {
        GaussianScene scene;
        scene.foreground = decode_uv(out.frame_fg_maps[f]);
        scene.background = decode_uv(out.bg_map);
        out.frame_scenes.push_back(std::move(scene));
    }
    return out;
}

void DatasetManifest::save(const std::string& path) const {
    json j;
    j["rig"] = rig_path;
    j["template"] = template_path;
    j["bg_template"] = bg_template_path;
    j["fg_uv_res"] = fg_uv_res;
    j["bg_uv_res"] = bg_uv_res;
    j["image_w"] = image_w;
    j["image_h"] = image_h;
    j["config"] = config;
    j["subjects"] = json::array();
    for (const auto& s : subjects) {
        json sj{{"id", s.id}, {"split", s.split}, {"frames", json::array()}};
        for (const auto& f : s.frames)
            sj["frames"].push_back(json{{"images", f.images},
                                        {"masks", f.masks},
                                        {"anchors", f.anchors},
                                        {"gt_scene", f.gt_scene}});
        j["subjects"].push_back(std::move(sj));
    }
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) fail("IOError", "cannot write manifest: " + path);
        f << j.dump(1) << "\n";
    }
    fs::rename(tmp, path);
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail("MissingFile", "cannot open manifest: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail("BadManifest", std::string("manifest parse error: ") + e.what());
    }
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    m.rig_path = j.at("rig").get<std::string>();
    m.template_path = j.at("template").get<std::string>();
    m.bg_template_path = j.at("bg_template").get<std::string>();
    m.fg_uv_res = j.at("fg_uv_res").get<int>();
    m.bg_uv_res = j.at("bg_uv_res").get<int>();
    m.image_w = j.at("image_w").get<int>();
    m.image_h = j.at("image_h").get<int>();
    m.config = j.value("config", json::object());
    for (const auto& sj : j.at("subjects")) {
        Subject s;
        s.id = sj.at("id").get<std::string>();
        s.split = sj.value("split", "train");
        for (const auto& fj : sj.at("frames")) {
            Frame fr;
            fr.images = fj.at("images").get<std::vector<std::string>>();
            fr.masks = fj.at("masks").get<std::vector<std::string>>();
            fr.anchors = fj.at("anchors").get<std::string>();
            fr.gt_scene = fj.value("gt_scene", "");
            require(fr.images.size() == fr.masks.size(), "CountMismatch",
                    "images/masks count mismatch in " + s.id);
            s.frames.push_back(std::move(fr));
        }
        m.subjects.push_back(std::move(s));
    }
    return m;
}

DatasetManifest::Frame render_frame(const GaussianScene& scene, const CameraRig& rig,
                                    const std::string& root, const std::string& subject_id,
                                    int frame_index, const RasterConfig& rcfg) {
    DatasetManifest::Frame out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "frame_%04d", frame_index);
    std::string rel_dir = subject_id + "/" + buf;
    fs::create_directories(fs::path(root) / rel_dir);

    Eigen::Vector3f clear(0.03f, 0.03f, 0.05f);
    for (size_t c = 0; c < rig.cameras.size(); ++c) {
        auto composite = render(scene, rig.cameras[c], rcfg, clear);
        GaussianScene fg_only;
        fg_only.foreground = scene.foreground;
        auto fg = render(fg_only, rig.cameras[c], rcfg, {0, 0, 0});

        Image mask(1, fg.alpha.h, fg.alpha.w);
        for (size_t i = 0; i < mask.data.size(); ++i)
            mask.data[i] = fg.alpha.data[i] > 0.5f ? 1.0f : 0.0f;

        std::snprintf(buf, sizeof buf, "cam_%02zu.png", c);
        std::string img_rel = rel_dir + "/" + buf;
        atomic_write_png((fs::path(root) / img_rel).string(), composite.color);
        out.images.push_back(img_rel);

        std::snprintf(buf, sizeof buf, "mask_%02zu.png", c);
        std::string mask_rel = rel_dir + "/" + buf;
        atomic_write_png((fs::path(root) / mask_rel).string(), mask);
        out.masks.push_back(mask_rel);
    }
    return out;
}

DatasetManifest generate_dataset(const SynthConfig& cfg, const std::string& out_root) {
    fs::create_directories(out_root);
    TemplateMesh tmpl = make_head_template(cfg);
    TemplateMesh bg_tmpl = make_background_sphere(cfg);
    CameraRig rig = make_head_rig(cfg);

    DatasetManifest manifest;
    manifest.root = out_root;
    manifest.rig_path = "rig.json";
    manifest.template_path = "template.obj";
    manifest.bg_template_path = "bg_template.obj";
    manifest.fg_uv_res = cfg.fg_uv_res;
    manifest.bg_uv_res = cfg.bg_uv_res;
    manifest.image_w = cfg.image_w;
    manifest.image_h = cfg.image_h;
    manifest.config = cfg.to_json();

    save_obj((fs::path(out_root) / manifest.template_path).string(), tmpl);
    save_obj((fs::path(out_root) / manifest.bg_template_path).string(), bg_tmpl);
    save_rig_json((fs::path(out_root) / manifest.rig_path).string(), rig);

    RasterConfig rcfg;
    rcfg.threads = cfg.render_threads;

    for (int s = 0; s < cfg.num_subjects; ++s) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "subject_%04d", s);
        DatasetManifest::Subject subject;
        subject.id = buf;
        subject.split = s >= cfg.num_subjects - cfg.val_subjects ? "val" : "train";
        fs::create_directories(fs::path(out_root) / subject.id);

        IdentitySpec spec = make_identity_spec(cfg, s);
        GeneratedIdentity ident = generate_identity(spec, tmpl, bg_tmpl, cfg);

        for (int f = 0; f < cfg.frames_per_subject; ++f) {
            auto frame = render_frame(ident.frame_scenes[f], rig, out_root, subject.id, f, rcfg);
            std::snprintf(buf, sizeof buf, "anchors_%04d.bin", f);
            frame.anchors = subject.id + "/" + buf;
            save_anchor_map((fs::path(out_root) / frame.anchors).string(),
                            ident.frame_anchors[f]);
            std::snprintf(buf, sizeof buf, "gt_%04d.gssc", f);
            frame.gt_scene = subject.id + "/" + buf;
            save_scene((fs::path(out_root) / frame.gt_scene).string(), ident.frame_scenes[f]);
            subject.frames.push_back(std::move(frame));
        }
        manifest.subjects.push_back(std::move(subject));
    }
    manifest.save((fs::path(out_root) / "manifest.json").string());
    return manifest;
}

Dataset Dataset::open(const std::string& manifest_path) {
    Dataset d;
    d.manifest_ = DatasetManifest::load(manifest_path);
    d.root_ = d.manifest_.root;
    d.rig_ = load_rig_json((fs::path(d.root_) / d.manifest_.rig_path).string());
    d.template_ = load_obj((fs::path(d.root_) / d.manifest_.template_path).string());
    d.bg_template_ = load_obj((fs::path(d.root_) / d.manifest_.bg_template_path).string());
    require(!d.manifest_.subjects.empty(), "BadManifest", "dataset has no subjects");
    return d;
}

std::vector<int> Dataset::subject_indices(const std::string& split) const {
    std::vector<int> out;
    for (size_t i = 0; i < manifest_.subjects.size(); ++i)
        if (split.empty() || manifest_.subjects[i].split == split) out.push_back(static_cast<int>(i));
    return out;
}

int Dataset::frame_count(int subject) const {
    return static_cast<int>(manifest_.subjects.at(subject).frames.size());
}

MultiViewFrame Dataset::load_frame(int subject, int frame) const {
    const auto& s = manifest_.subjects.at(subject);
    const auto& f = s.frames.at(frame);
    require(f.images.size() == rig_.cameras.size(), "CountMismatch",
            "frame image count does not match the rig");
    MultiViewFrame out;
    out.subject_id = s.id;
    out.frame_index = frame;
    out.rig = rig_;
    for (const auto& rel : f.images) out.images.push_back(read_png((fs::path(root_) / rel).string()));
    for (const auto& rel : f.masks) out.masks.push_back(read_png((fs::path(root_) / rel).string()));
    out.anchors = load_anchor_map((fs::path(root_) / f.anchors).string());
    out.gt_scene_path = f.gt_scene.empty() ? "" : (fs::path(root_) / f.gt_scene).string();
    return out;
}

}  // namespace headsup
