#include "headsup/geometry.hpp"

#include <cstring>
#include <fstream>

namespace headsup {

size_t AnchorMap::valid_count() const {
    size_t n = 0;
    for (uint8_t v : valid) n += v;
    return n;
}

void save_anchor_map(const std::string& path, const AnchorMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("IOError", "cannot open for write: " + path);
    uint32_t hw[2] = {static_cast<uint32_t>(map.h), static_cast<uint32_t>(map.w)};
    f.write("ANCH", 4);
    f.write(reinterpret_cast<const char*>(hw), sizeof(hw));
    f.write(reinterpret_cast<const char*>(map.positions.data()),
            static_cast<std::streamsize>(map.positions.size() * sizeof(float)));
    f.write(reinterpret_cast<const char*>(map.valid.data()),
            static_cast<std::streamsize>(map.valid.size()));
    if (!f) fail("IOError", "write failed: " + path);
}

AnchorMap load_anchor_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("MissingFile", "cannot open: " + path);
    char magic[4];
    uint32_t hw[2];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(hw), sizeof(hw));
    if (!f || std::memcmp(magic, "ANCH", 4) != 0) fail("BadMagic", "not an anchor map: " + path);
    AnchorMap map(static_cast<int>(hw[0]), static_cast<int>(hw[1]));
    f.read(reinterpret_cast<char*>(map.positions.data()),
           static_cast<std::streamsize>(map.positions.size() * sizeof(float)));
    f.read(reinterpret_cast<char*>(map.valid.data()), static_cast<std::streamsize>(map.valid.size()));
    if (!f) fail("TruncatedFile", "anchor map truncated: " + path);
    return map;
}

std::vector<float> plucker_map(const Camera& cam, int grid_h, int grid_w) {
    require(grid_h >= 1 && grid_w >= 1, "BadSize", "plucker grid must be >= 1");
    std::vector<float> out(static_cast<size_t>(6) * grid_h * grid_w);
    Eigen::Matrix3d r_t = cam.rotation().transpose();
    Eigen::Vector3d origin = cam.center();
    double sx = static_cast<double>(cam.width) / grid_w;
    double sy = static_cast<double>(cam.height) / grid_h;
    size_t plane = static_cast<size_t>(grid_h) * grid_w;
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            double px = (x + 0.5) * sx, py = (y + 0.5) * sy;
            Eigen::Vector3d dir_cam((px - cam.cx()) / cam.fx(), (py - cam.cy()) / cam.fy(), 1.0);
            Eigen::Vector3d d = (r_t * dir_cam).normalized();
            Eigen::Vector3d m = origin.cross(d);
            size_t i = static_cast<size_t>(y) * grid_w + x;
            for (int k = 0; k < 3; ++k) {
                out[k * plane + i] = static_cast<float>(d[k]);
                out[(k + 3) * plane + i] = static_cast<float>(m[k]);
            }
        }
    }
    return out;
}

AnchorMap bake_anchor_map(const TemplateMesh& mesh, int h_uv, int w_uv) {
    mesh.validate();
    require(h_uv >= 1 && w_uv >= 1, "BadSize", "UV resolution must be >= 1");
    AnchorMap map(h_uv, w_uv);

    // UV (u,v) -> texel (x = u*W - 0.5, y = v*H - 0.5); texel centers sample
    // at ((x+0.5)/W, (y+0.5)/H)
    for (size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto& uvf = mesh.uv_coords[fi];
        const auto& face = mesh.faces[fi];
        double umin = std::min({uvf[0].x(), uvf[1].x(), uvf[2].x()});
        double umax = std::max({uvf[0].x(), uvf[1].x(), uvf[2].x()});
        double vmin = std::min({uvf[0].y(), uvf[1].y(), uvf[2].y()});
        double vmax = std::max({uvf[0].y(), uvf[1].y(), uvf[2].y()});
        int x0 = std::max(0, static_cast<int>(std::floor(umin * w_uv - 0.5)));
        int x1 = std::min(w_uv - 1, static_cast<int>(std::ceil(umax * w_uv - 0.5)));
        int y0 = std::max(0, static_cast<int>(std::floor(vmin * h_uv - 0.5)));
        int y1 = std::min(h_uv - 1, static_cast<int>(std::ceil(vmax * h_uv - 0.5)));

        Eigen::Vector2d a = uvf[0], b = uvf[1], c = uvf[2];
        double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
        if (std::abs(det) < 1e-14) continue;  // degenerate UV triangle

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (map.is_valid(y, x)) continue;  // first face wins
                double u = (x + 0.5) / w_uv, v = (y + 0.5) / h_uv;
                double w1 = ((u - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (v - a.y())) / det;
                double w2 = ((b.x() - a.x()) * (v - a.y()) - (u - a.x()) * (b.y() - a.y())) / det;
                double w0 = 1.0 - w1 - w2;
                const double eps = -1e-9;
                if (w0 < eps || w1 < eps || w2 < eps) continue;
                Eigen::Vector3d p = w0 * mesh.vertices[face[0]] + w1 * mesh.vertices[face[1]] +
                                    w2 * mesh.vertices[face[2]];
                map.pos(0, y, x) = static_cast<float>(p.x());
                map.pos(1, y, x) = static_cast<float>(p.y());
                map.pos(2, y, x) = static_cast<float>(p.z());
                map.valid[static_cast<size_t>(y) * w_uv + x] = 1;
            }
        }
    }
    require(map.valid_count() > 0, "EmptyAtlas", "no UV texel is covered by the atlas");
    return map;
}

std::vector<int> farthest_point_views(const CameraRig& rig, int n) {
    int count = static_cast<int>(rig.cameras.size());
    require(n >= 1 && n <= count, "BadCount",
            "n must be in [1, " + std::to_string(count) + "], got " + std::to_string(n));
    std::vector<Eigen::Vector3d> centers(count);
    for (int i = 0; i < count; ++i) centers[i] = rig.cameras[i].center();

    std::vector<int> picked{0};
    std::vector<double> dist(count);
    for (int i = 0; i < count; ++i) dist[i] = (centers[i] - centers[0]).norm();
    while (static_cast<int>(picked.size()) < n) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < count; ++i) {
            if (dist[i] > best_d) {  // strict: ties keep the lowest index
                best_d = dist[i];
                best = i;
            }
        }
        picked.push_back(best);
        for (int i = 0; i < count; ++i)
            dist[i] = std::min(dist[i], (centers[i] - centers[best]).norm());
    }
    return picked;
}

std::vector<int> frontal_priority_views(const CameraRig& rig, int n) {
    int count = static_cast<int>(rig.cameras.size());
    require(n >= 1 && n <= count, "BadCount",
            "n must be in [1, " + std::to_string(count) + "], got " + std::to_string(n));
    Eigen::Vector3d frontal = Eigen::Vector3d::Zero();
    for (const auto& c : rig.cameras) frontal += c.center().normalized();
    if (frontal.norm() < 1e-12) frontal = Eigen::Vector3d::UnitZ();
    frontal.normalize();
    std::vector<std::pair<double, int>> scored(count);
    for (int i = 0; i < count; ++i) {
        double cosang = rig.cameras[i].center().normalized().dot(frontal);
        scored[i] = {-cosang, i};  // most frontal first
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) out[i] = scored[i].second;
    return out;
}

CropRect project_crop_rect(const Camera& cam, const CropRegion& region) {
    require(!region.box3d.isEmpty() && (region.box3d.sizes().array() > 0).all(), "BadRegion",
            "crop box must have positive extent");
    double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
    int behind = 0;
    for (int i = 0; i < 8; ++i) {
        Eigen::Vector3d corner = region.box3d.corner(static_cast<Eigen::AlignedBox3d::CornerType>(i));
        try {
            auto pr = project_point(cam, corner);
            x0 = std::min(x0, pr.pixel.x());
            y0 = std::min(y0, pr.pixel.y());
            x1 = std::max(x1, pr.pixel.x());
            y1 = std::max(y1, pr.pixel.y());
        } catch (const Error&) {
            ++behind;
        }
    }
    if (behind == 8) fail("DegenerateCrop", "crop box lies behind the camera");
    x0 = std::max(x0, 0.0);
    y0 = std::max(y0, 0.0);
    x1 = std::min(x1, static_cast<double>(cam.width));
    y1 = std::min(y1, static_cast<double>(cam.height));
    if (x1 <= x0 || y1 <= y0) fail("DegenerateCrop", "clipped crop rectangle has zero area");
    return {x0, y0, x1, y1};
}

Image region_crop(const Camera& cam, const CropRegion& region, const Image& image) {
    require(image.w == cam.width && image.h == cam.height, "ShapeMismatch",
            "image size does not match the camera");
    CropRect r = project_crop_rect(cam, region);
    int s = region.output_size;
    Image out(image.c, s, s);
    double sx = (r.x1 - r.x0) / s, sy = (r.y1 - r.y0) / s;
    for (int ch = 0; ch < image.c; ++ch)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                out.at(ch, y, x) =
                    bilinear_sample(image, ch, r.x0 + (x + 0.5) * sx, r.y0 + (y + 0.5) * sy);
    return out;
}

}  // namespace headsup
