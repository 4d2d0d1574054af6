#include "avatar_forge/editing_export.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace avatar_forge {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string material_text(const std::string& texture_file) {
    return "newmtl avatar\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd " + texture_file + "\n";
}

std::string obj_text(const PointCloud& vertices, const Triangles& faces, const PointCloud2D& uv,
                     const std::string& mtllib) {
    const PointCloud normals = vertex_normals(vertices, faces);
    std::string s;
    s.reserve(static_cast<size_t>(vertices.rows()) * 96);
    s += "mtllib " + mtllib + "\nusemtl avatar\n";
    char buf[128];
    for (Index v = 0; v < vertices.rows(); ++v) {
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", vertices(v, 0), vertices(v, 1), vertices(v, 2));
        s += buf;
    }
    for (Index v = 0; v < uv.rows(); ++v) {
        std::snprintf(buf, sizeof buf, "vt %.9g %.9g\n", uv(v, 0), 1.0 - uv(v, 1));
        s += buf;
    }
    for (Index v = 0; v < normals.rows(); ++v) {
        std::snprintf(buf, sizeof buf, "vn %.6f %.6f %.6f\n", normals(v, 0), normals(v, 1), normals(v, 2));
        s += buf;
    }
    for (Index f = 0; f < faces.rows(); ++f) {
        const int a = faces(f, 0) + 1, b = faces(f, 1) + 1, c = faces(f, 2) + 1;
        std::snprintf(buf, sizeof buf, "f %d/%d/%d %d/%d/%d %d/%d/%d\n", a, a, a, b, b, b, c, c, c);
        s += buf;
    }
    return s;
}

void check_state(const AvatarState& state, const AvatarAssets& assets) {
    if (state.displacement.d.rows() != assets.sub->n_verts() || state.beta.size() != assets.model->n_shape() ||
        state.psi.size() != assets.model->n_expr())
        throw TopologyMismatchError("avatar state does not match the assets");
    if (state.texture.texels.rows() != Index(state.texture.size) * state.texture.size)
        throw DimensionError("texture storage does not match its size");
}

void check_frame(const AnimationFrame& f, const TemplateModel& model) {
    if (f.pose.body_pose.rows() != model.n_joints() - 1)
        throw DimensionError("animation frame has " + std::to_string(f.pose.body_pose.rows() + 1) +
                             " joints, model has " + std::to_string(model.n_joints()));
    if (f.psi.size() && f.psi.size() != model.n_expr()) throw DimensionError("animation frame psi size mismatch");
}

}  // namespace

ExportBundle export_avatar(const AvatarState& state, const AvatarAssets& assets, const PoseParams& pose,
                           const std::string& dir, const std::string& stem) {
    check_state(state, assets);
    ensure_dir(dir);
    const PosedMesh posed = pose_state(assets, state, pose);
    const fs::path d(dir);
    ExportBundle b{(d / (stem + ".obj")).string(), (d / (stem + ".mtl")).string(), (d / (stem + ".png")).string()};
    write_texture_png(b.texture, state.texture);
    write_file(b.material, material_text(stem + ".png"));
    write_file(b.mesh, obj_text(posed.vertices, assets.sub->faces, assets.sub->uv_coords, stem + ".mtl"));
    return b;
}

ObjMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::array<double, 3>> v, vn;
    std::vector<std::array<double, 2>> vt;
    std::vector<std::array<int, 9>> f;
    ObjMesh m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        auto bad = [&] { return ParseError(path + ":" + std::to_string(line_no) + ": malformed '" + tag + "' line"); };
        if (tag == "v" || tag == "vn") {
            std::array<double, 3> p{};
            if (!(ss >> p[0] >> p[1] >> p[2])) throw bad();
            (tag == "v" ? v : vn).push_back(p);
        } else if (tag == "vt") {
            std::array<double, 2> p{};
            if (!(ss >> p[0] >> p[1])) throw bad();
            vt.push_back(p);
        } else if (tag == "f") {
            std::array<int, 9> idx{};
            for (int k = 0; k < 3; ++k) {
                std::string corner;
                if (!(ss >> corner)) throw bad();
                if (std::sscanf(corner.c_str(), "%d/%d/%d", &idx[3 * k], &idx[3 * k + 1], &idx[3 * k + 2]) != 3)
                    throw bad();
            }
            std::string extra;
            if (ss >> extra) throw ParseError(path + ":" + std::to_string(line_no) + ": only triangles are supported");
            f.push_back(idx);
        } else if (tag == "mtllib") {
            ss >> m.mtllib;
        }
    }
    auto fill3 = [](const std::vector<std::array<double, 3>>& src) {
        PointCloud out(static_cast<Index>(src.size()), 3);
        for (size_t i = 0; i < src.size(); ++i)
            for (int c = 0; c < 3; ++c) out(Index(i), c) = src[i][size_t(c)];
        return out;
    };
    m.vertices = fill3(v);
    m.normals = fill3(vn);
    m.uvs.resize(static_cast<Index>(vt.size()), 2);
    for (size_t i = 0; i < vt.size(); ++i) m.uvs.row(Index(i)) << vt[i][0], vt[i][1];
    const Index nf = static_cast<Index>(f.size());
    m.faces.resize(nf, 3);
    m.face_uvs.resize(nf, 3);
    m.face_normals.resize(nf, 3);
    for (Index i = 0; i < nf; ++i)
        for (int k = 0; k < 3; ++k) {
            const auto& idx = f[size_t(i)];
            m.faces(i, k) = idx[size_t(3 * k)] - 1;
            m.face_uvs(i, k) = idx[size_t(3 * k + 1)] - 1;
            m.face_normals(i, k) = idx[size_t(3 * k + 2)] - 1;
        }
    if (nf && (m.faces.minCoeff() < 0 || m.faces.maxCoeff() >= m.vertices.rows() || m.face_uvs.minCoeff() < 0 ||
               m.face_uvs.maxCoeff() >= m.uvs.rows() || m.face_normals.minCoeff() < 0 ||
               m.face_normals.maxCoeff() >= m.normals.rows()))
        throw ParseError(path + ": face index out of range");
    return m;
}

std::vector<ExportBundle> animate(const AvatarState& state, const AvatarAssets& assets,
                                  const AnimationSequence& sequence, const std::string& out_dir,
                                  const AnimateOptions& options) {
    check_state(state, assets);
    for (const AnimationFrame& f : sequence.frames) check_frame(f, *assets.model);
    ensure_dir(out_dir);
    const fs::path d(out_dir);
    std::vector<ExportBundle> bundles;
    const std::string tex = (d / "texture.png").string(), mtl = (d / "material.mtl").string();
    write_texture_png(tex, state.texture);
    if (options.per_frame) {
        write_file(mtl, material_text("texture.png"));
        char name[32];
        for (size_t i = 0; i < sequence.size(); ++i) {
            const AnimationFrame& f = sequence.frames[i];
            const PosedMesh posed = pose_state(assets, state, f.pose, f.psi);
            if (!all_finite(posed.vertices)) throw NonFiniteError("frame " + std::to_string(i) + " has non-finite vertices");
            std::snprintf(name, sizeof name, "frame_%04zu.obj", i);
            write_file(d / name, obj_text(posed.vertices, assets.sub->faces, assets.sub->uv_coords, "material.mtl"));
            bundles.push_back({(d / name).string(), mtl, tex});
        }
    }
    if (options.skinned) {
        using nlohmann::json;
        const PosedMesh rest = pose_state(assets, state, PoseParams::zero(assets.model->n_joints()));
        const SubdividedModel& sub = *assets.sub;
        auto rows = [](const auto& m) {
            json a = json::array();
            for (Index r = 0; r < m.rows(); ++r) {
                json row = json::array();
                for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
                a.push_back(row);
            }
            return a;
        };
        json weights = json::array();
        for (Index v = 0; v < sub.skin_weights_up.rows(); ++v) {
            json entry = json::array();
            for (Index j = 0; j < sub.skin_weights_up.cols(); ++j)
                if (sub.skin_weights_up(v, j) != 0) entry.push_back({j, sub.skin_weights_up(v, j)});
            weights.push_back(entry);
        }
        json doc;
        doc["texture"] = "texture.png";
        doc["vertices"] = rows(rest.tape.rest);
        doc["faces"] = rows(sub.faces);
        doc["uv"] = rows(sub.uv_coords);
        doc["joints"] = rows(rest.tape.joints);
        doc["parents"] = std::vector<int>(sub.base->parents.data(), sub.base->parents.data() + sub.base->parents.size());
        doc["skin_weights"] = weights;
        doc["animation"] = json::parse(sequence_to_json(sequence));
        const std::string path = (d / "animation.json").string();
        write_file(path, doc.dump() + "\n");
        bundles.push_back({path, "", tex});
    }
    return bundles;
}

std::vector<PartLabel> face_labels(const SubdividedModel& sub) {
    std::vector<PartLabel> out(static_cast<size_t>(sub.faces.rows()));
    for (Index f = 0; f < sub.faces.rows(); ++f) {
        const PartLabel l[3] = {sub.part_labels_up[size_t(sub.faces(f, 0))], sub.part_labels_up[size_t(sub.faces(f, 1))],
                                sub.part_labels_up[size_t(sub.faces(f, 2))]};
        PartLabel pick = std::min({l[0], l[1], l[2]});
        if (l[0] == l[1] || l[0] == l[2]) pick = l[0];
        else if (l[1] == l[2]) pick = l[1];
        out[size_t(f)] = pick;
    }
    return out;
}

namespace {

using Poly = std::vector<Eigen::Vector2d>;

// Clips against the half-plane sign * (p[axis] - bound) <= 0.
Poly clip(const Poly& in, int axis, double bound, double sign) {
    Poly out;
    const size_t n = in.size();
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d& p = in[i];
        const Eigen::Vector2d& q = in[(i + 1) % n];
        const double dp = sign * (p(axis) - bound), dq = sign * (q(axis) - bound);
        if (dp <= 0) out.push_back(p);
        if ((dp < 0 && dq > 0) || (dp > 0 && dq < 0)) out.push_back(p + (q - p) * (dp / (dp - dq)));
    }
    return out;
}

double area(const Poly& p) {
    double a = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u.x() * v.y() - v.x() * u.y();
    }
    return std::abs(a) / 2;
}

}  // namespace

std::vector<PartLabel> texel_ownership(const AvatarAssets& assets, int texture_size) {
    if (!is_power_of_two(texture_size)) throw ConfigError("texture size must be a power of two");
    const SubdividedModel& sub = *assets.sub;
    const std::vector<PartLabel> labels = face_labels(sub);
    const size_t n = size_t(texture_size) * size_t(texture_size);
    std::vector<PartLabel> owner(n, PartLabel::other);
    std::vector<double> best(n, 0.0);
    for (Index f = 0; f < sub.faces.rows(); ++f) {
        Poly tri(3);
        for (int k = 0; k < 3; ++k) tri[size_t(k)] = sub.uv_coords.row(sub.faces(f, k)).transpose() * texture_size;
        double lo[2], hi[2];
        for (int a = 0; a < 2; ++a) {
            lo[a] = std::min({tri[0](a), tri[1](a), tri[2](a)});
            hi[a] = std::max({tri[0](a), tri[1](a), tri[2](a)});
        }
        const int x0 = std::max(0, int(std::floor(lo[0]))), x1 = std::min(texture_size - 1, int(std::floor(hi[0])));
        const int y0 = std::max(0, int(std::floor(lo[1]))), y1 = std::min(texture_size - 1, int(std::floor(hi[1])));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                Poly p = clip(tri, 0, x, -1.0);
                p = clip(p, 0, x + 1, 1.0);
                p = clip(p, 1, y, -1.0);
                p = clip(p, 1, y + 1, 1.0);
                if (p.size() < 3) continue;
                const double a = area(p);
                const size_t i = size_t(y) * size_t(texture_size) + size_t(x);
                // Strict comparison: on equal areas the lower face index keeps the texel.
                if (a > best[i]) {
                    best[i] = a;
                    owner[i] = labels[size_t(f)];
                }
            }
    }
    return owner;
}

AvatarState part_swap(const AvatarState& a, const AvatarState& b, PartLabel part, const AvatarAssets& assets,
                      const SwapOptions& options) {
    check_state(a, assets);
    check_state(b, assets);
    if (a.texture.size != b.texture.size) throw TopologyMismatchError("texture resolutions differ");
    if (options.smoothing_iterations < 0) throw ConfigError("smoothing iterations must be non-negative");
    const SubdividedModel& sub = *assets.sub;
    AvatarState out = a;
    const Index nv = sub.n_verts();
    std::vector<bool> in_part(static_cast<size_t>(nv));
    for (Index v = 0; v < nv; ++v) {
        in_part[size_t(v)] = sub.part_labels_up[size_t(v)] == part;
        if (in_part[size_t(v)]) out.displacement.d.row(v) = b.displacement.d.row(v);
    }
    const std::vector<PartLabel> owner = texel_ownership(assets, a.texture.size);
    for (size_t i = 0; i < owner.size(); ++i)
        if (owner[i] == part) out.texture.texels.row(Index(i)) = b.texture.texels.row(Index(i));

    if (options.smoothing_iterations == 0) return out;
    std::vector<std::set<int>> nbr(static_cast<size_t>(nv));
    for (Index f = 0; f < sub.faces.rows(); ++f)
        for (int k = 0; k < 3; ++k)
            for (int m = 0; m < 3; ++m)
                if (k != m) nbr[size_t(sub.faces(f, k))].insert(sub.faces(f, m));
    std::vector<int> ring(static_cast<size_t>(nv), -1);
    std::vector<int> frontier;
    for (Index v = 0; v < nv; ++v)
        for (int u : nbr[size_t(v)])
            if (in_part[size_t(u)] != in_part[size_t(v)]) {
                ring[size_t(v)] = 0;
                frontier.push_back(int(v));
                break;
            }
    for (int depth = 1; depth <= 2; ++depth) {
        std::vector<int> next;
        for (int v : frontier)
            for (int u : nbr[size_t(v)])
                if (ring[size_t(u)] < 0) {
                    ring[size_t(u)] = depth;
                    next.push_back(u);
                }
        frontier = std::move(next);
    }
    for (int it = 0; it < options.smoothing_iterations; ++it) {
        const PointCloud d = out.displacement.d;
        for (Index v = 0; v < nv; ++v) {
            if (ring[size_t(v)] < 0 || nbr[size_t(v)].empty()) continue;
            Vec3 mean = Vec3::Zero();
            for (int u : nbr[size_t(v)]) mean += d.row(u).transpose();
            mean /= double(nbr[size_t(v)].size());
            out.displacement.d.row(v) = 0.5 * (d.row(v) + mean.transpose());
        }
    }
    return out;
}

}  // namespace avatar_forge
