#include "headsup/mesh.hpp"

#include <fstream>
#include <sstream>

namespace headsup {

void TemplateMesh::validate() const {
    require(!vertices.empty() && !faces.empty(), "BadMesh", "mesh is empty");
    require(faces.size() == uv_coords.size(), "BadMesh", "faces and uv_coords size mismatch");
    int vc = static_cast<int>(vertices.size());
    for (const auto& f : faces)
        for (int i : f)
            require(i >= 0 && i < vc, "BadMesh", "face index out of range");
    for (const auto& uvf : uv_coords)
        for (const auto& uv : uvf)
            require(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0, "BadMesh",
                    "UV coordinate outside [0,1]");
}

Eigen::AlignedBox3d TemplateMesh::bounding_box() const {
    Eigen::AlignedBox3d box;
    for (const auto& v : vertices) box.extend(v);
    return box;
}

TemplateMesh load_obj(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail("MissingFile", "cannot open OBJ: " + path);
    TemplateMesh mesh;
    std::vector<Eigen::Vector2d> vts;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            double x, y, z;
            ss >> x >> y >> z;
            mesh.vertices.emplace_back(x, y, z);
        } else if (tag == "vt") {
            double u, v;
            ss >> u >> v;
            vts.emplace_back(u, v);
        } else if (tag == "f") {
            std::vector<int> vi, ti;
            std::string corner;
            while (ss >> corner) {
                size_t slash = corner.find('/');
                require(slash != std::string::npos, "BadMesh",
                        "OBJ face without texture index at line " + std::to_string(lineno));
                int v = std::stoi(corner.substr(0, slash));
                std::string rest = corner.substr(slash + 1);
                size_t slash2 = rest.find('/');
                int t = std::stoi(slash2 == std::string::npos ? rest : rest.substr(0, slash2));
                // OBJ indices are 1-based; negative indices count from the end
                vi.push_back(v > 0 ? v - 1 : static_cast<int>(mesh.vertices.size()) + v);
                ti.push_back(t > 0 ? t - 1 : static_cast<int>(vts.size()) + t);
            }
            require(vi.size() >= 3, "BadMesh", "face with <3 corners at line " + std::to_string(lineno));
            for (size_t k = 2; k < vi.size(); ++k) {
                mesh.faces.push_back({vi[0], vi[k - 1], vi[k]});
                auto uv_at = [&](int idx) {
                    require(idx >= 0 && idx < static_cast<int>(vts.size()), "BadMesh",
                            "vt index out of range at line " + std::to_string(lineno));
                    return vts[idx];
                };
                mesh.uv_coords.push_back({uv_at(ti[0]), uv_at(ti[k - 1]), uv_at(ti[k])});
            }
        }
    }
    mesh.validate();
    return mesh;
}

void save_obj(const std::string& path, const TemplateMesh& mesh) {
    std::ofstream f(path);
    if (!f) fail("IOError", "cannot open for write: " + path);
    f.precision(9);
    for (const auto& v : mesh.vertices) f << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
    // one vt per face corner; simple and loss-free
    for (const auto& uvf : mesh.uv_coords)
        for (const auto& uv : uvf) f << "vt " << uv.x() << " " << uv.y() << "\n";
    for (size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& face = mesh.faces[i];
        f << "f";
        for (int k = 0; k < 3; ++k) f << " " << face[k] + 1 << "/" << 3 * i + k + 1;
        f << "\n";
    }
    if (!f) fail("IOError", "write failed: " + path);
}

}  // namespace headsup
