#include "avatar_forge/subdivision.hpp"

#include <algorithm>
#include <map>

namespace avatar_forge {

std::uint64_t SubdividedModel::fingerprint() const {
    Fingerprint fp;
    fp.add(vertices_rest).add(faces).add(uv_coords).add(skin_weights_up);
    fp.add(shape_basis_up).add(expr_basis_up).add(pose_basis_up);
    for (auto l : part_labels_up) fp.add_value(static_cast<std::uint64_t>(l));
    return fp.value();
}

namespace {

using EdgeKey = std::pair<int, int>;

EdgeKey edge_key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

void append_midpoint_rows(Matrix& m, const std::vector<EdgeKey>& edges, Index row_block) {
    const Index old_rows = m.rows() / row_block;
    Matrix out(m.rows() + row_block * static_cast<Index>(edges.size()), m.cols());
    out.topRows(m.rows()) = m;
    for (size_t k = 0; k < edges.size(); ++k) {
        const Index dst = (old_rows + static_cast<Index>(k)) * row_block;
        out.middleRows(dst, row_block) =
            0.5 * (m.middleRows(edges[k].first * row_block, row_block) +
                   m.middleRows(edges[k].second * row_block, row_block));
    }
    m = std::move(out);
}

void subdivide_once(SubdividedModel& s) {
    const Index F = s.n_faces();
    const int N = static_cast<int>(s.n_verts());

    std::vector<EdgeKey> split;
    for (Index f = 0; f < F; ++f) {
        if (!s.face_mask[static_cast<size_t>(f)]) continue;
        for (int k = 0; k < 3; ++k) split.push_back(edge_key(s.faces(f, k), s.faces(f, (k + 1) % 3)));
    }
    std::sort(split.begin(), split.end());
    split.erase(std::unique(split.begin(), split.end()), split.end());
    std::map<EdgeKey, int> midpoint;
    for (size_t k = 0; k < split.size(); ++k) midpoint[split[k]] = N + static_cast<int>(k);

    // Vertex attributes.
    PointCloud pos(N + static_cast<Index>(split.size()), 3);
    pos.topRows(N) = s.vertices_rest;
    PointCloud2D uv(pos.rows(), 2);
    uv.topRows(N) = s.uv_coords;
    Matrix w(pos.rows(), s.skin_weights_up.cols());
    w.topRows(N) = s.skin_weights_up;
    for (size_t k = 0; k < split.size(); ++k) {
        const auto [a, b] = split[k];
        const Index m = N + static_cast<Index>(k);
        pos.row(m) = 0.5 * (s.vertices_rest.row(a) + s.vertices_rest.row(b));
        uv.row(m) = 0.5 * (s.uv_coords.row(a) + s.uv_coords.row(b));
        const auto wm = (0.5 * (s.skin_weights_up.row(a) + s.skin_weights_up.row(b))).eval();
        w.row(m) = wm / wm.sum();
        s.parent_map.push_back({a, b, 0.5});
        // Endpoints with different labels: the lower-index endpoint wins.
        s.part_labels_up.push_back(s.part_labels_up[static_cast<size_t>(a)]);
    }
    append_midpoint_rows(s.shape_basis_up, split, 3);
    append_midpoint_rows(s.expr_basis_up, split, 3);
    append_midpoint_rows(s.pose_basis_up, split, 3);
    s.vertices_rest = std::move(pos);
    s.uv_coords = std::move(uv);
    s.skin_weights_up = std::move(w);

    // Faces.
    std::vector<Eigen::Vector3i> faces;
    std::vector<bool> mask;
    std::vector<int> origin;
    auto emit = [&](int a, int b, int c, bool masked, int from) {
        faces.emplace_back(a, b, c);
        mask.push_back(masked);
        origin.push_back(from);
    };
    for (Index f = 0; f < F; ++f) {
        const int v[3] = {s.faces(f, 0), s.faces(f, 1), s.faces(f, 2)};
        const bool masked = s.face_mask[static_cast<size_t>(f)];
        const int from = s.face_origin[static_cast<size_t>(f)];
        int mid[3];  // mid[k] splits edge (v[k], v[k+1])
        int n_split = 0;
        for (int k = 0; k < 3; ++k) {
            auto it = midpoint.find(edge_key(v[k], v[(k + 1) % 3]));
            mid[k] = it == midpoint.end() ? -1 : it->second;
            n_split += mid[k] >= 0 ? 1 : 0;
        }
        if (n_split == 0) {
            emit(v[0], v[1], v[2], masked, from);
        } else if (n_split == 3) {
            emit(v[0], mid[0], mid[2], masked, from);
            emit(mid[0], v[1], mid[1], masked, from);
            emit(mid[2], mid[1], v[2], masked, from);
            emit(mid[0], mid[1], mid[2], masked, from);
        } else if (n_split == 1) {
            int k = 0;
            while (mid[k] < 0) ++k;
            const int a = v[k], b = v[(k + 1) % 3], c = v[(k + 2) % 3];
            emit(a, mid[k], c, false, from);
            emit(mid[k], b, c, false, from);
        } else {
            // Rotate so edge (a, c) is the unsplit one: edges ab and bc split.
            int k = 0;
            while (mid[(k + 2) % 3] >= 0) ++k;
            const int a = v[k], b = v[(k + 1) % 3], c = v[(k + 2) % 3];
            const int m1 = mid[k], m2 = mid[(k + 1) % 3];
            emit(m1, b, m2, false, from);
            emit(a, m1, m2, false, from);
            emit(a, m2, c, false, from);
        }
    }
    s.faces.resize(static_cast<Index>(faces.size()), 3);
    for (size_t f = 0; f < faces.size(); ++f) s.faces.row(static_cast<Index>(f)) = faces[f].transpose();
    s.face_mask = std::move(mask);
    s.face_origin = std::move(origin);
    ++s.rounds;
}

}  // namespace

SubdividedModel subdivide_partial(const TemplateModel& model, int rounds) {
    if (rounds < 1) throw ConfigError("subdivide_partial requires rounds >= 1");
    SubdividedModel s;
    s.base = &model;
    s.vertices_rest = model.vertices;
    s.faces = model.faces;
    s.uv_coords = model.uv_coords;
    s.skin_weights_up = model.skin_weights;
    s.shape_basis_up = model.shape_basis;
    s.expr_basis_up = model.expr_basis;
    s.pose_basis_up = model.pose_basis;
    s.part_labels_up = model.part_labels;
    s.face_mask = model.subdivision_mask;
    s.face_origin.resize(static_cast<size_t>(model.n_faces()));
    for (Index f = 0; f < model.n_faces(); ++f) s.face_origin[static_cast<size_t>(f)] = static_cast<int>(f);
    for (Index v = 0; v < model.n_verts(); ++v) s.parent_map.push_back({static_cast<int>(v), static_cast<int>(v), 0.0});
    for (int r = 0; r < rounds; ++r) subdivide_once(s);
    return s;
}

SubdividedModel refine(const SubdividedModel& sub, int rounds) {
    if (rounds < 1) throw ConfigError("refine requires rounds >= 1");
    SubdividedModel s = sub;
    for (int r = 0; r < rounds; ++r) subdivide_once(s);
    return s;
}

namespace {

void check_displacement(const SubdividedModel& sub, const DisplacementLayer& disp) {
    if (disp.d.rows() != sub.n_verts())
        throw DimensionError("displacement has " + std::to_string(disp.d.rows()) + " rows, subdivided model has " +
                             std::to_string(sub.n_verts()) + " vertices");
}

PointCloud lifted_template(const SubdividedModel& sub, const DisplacementLayer& disp, const BodyParams& params) {
    check_dimensions(*sub.base, params);
    check_displacement(sub, disp);
    PointCloud out = sub.vertices_rest;
    Eigen::Map<Vector>(out.data(), out.size()) += sub.shape_basis_up * params.beta + sub.expr_basis_up * params.psi +
                                                   sub.pose_basis_up * pose_feature(params.theta);
    out += disp.d;
    return out;
}

std::uint64_t subdivided_fingerprint(const void* owner) {
    return static_cast<const SubdividedModel*>(owner)->fingerprint();
}

}  // namespace

PointCloud personalized_template(const SubdividedModel& sub, const DisplacementLayer& disp,
                                 const BodyParams& params) {
    return lifted_template(sub, disp, params);
}

PosedMesh posed_avatar(const SubdividedModel& sub, const DisplacementLayer& disp, const BodyParams& params) {
    const TemplateModel& model = *sub.base;
    PointCloud rest = lifted_template(sub, disp, params);
    PointCloud base_shaped = model.vertices;
    Eigen::Map<Vector>(base_shaped.data(), base_shaped.size()) +=
        model.shape_basis * params.beta + model.expr_basis * params.psi;
    PointCloud joints = model.joint_regressor * base_shaped;

    PosedMesh out = detail::skin(std::move(rest), sub.skin_weights_up, std::move(joints), model.parents, params.theta);
    LbsTape& tape = out.tape;
    tape.base = &model;
    tape.base_fingerprint = model.fingerprint();
    tape.shape_basis = &sub.shape_basis_up;
    tape.expr_basis = &sub.expr_basis_up;
    tape.pose_basis = &sub.pose_basis_up;
    tape.skin_weights = &sub.skin_weights_up;
    tape.lifted_fingerprint = &subdivided_fingerprint;
    tape.lifted_owner = &sub;
    tape.lifted_value = sub.fingerprint();
    tape.has_displacement = true;
    return out;
}

int locate_in_refinement(const SubdividedModel& sub, int base_face, const Vec3& bary, Vec3& child_bary) {
    const TemplateModel& model = *sub.base;
    const Vec3 p0 = model.vertices.row(model.faces(base_face, 0));
    const Vec3 e1 = Vec3(model.vertices.row(model.faces(base_face, 1))) - p0;
    const Vec3 e2 = Vec3(model.vertices.row(model.faces(base_face, 2))) - p0;
    // Planar coordinates (s, t) with p = p0 + s e1 + t e2.
    Eigen::Matrix<double, 3, 2> E;
    E << e1, e2;
    const Eigen::Matrix2d gram_inv = (E.transpose() * E).inverse();
    auto planar = [&](const Vec3& p) -> Eigen::Vector2d { return gram_inv * (E.transpose() * (p - p0)); };
    const Eigen::Vector2d q(bary(1), bary(2));

    int best = -1;
    double best_min = -1e300;
    for (Index f = 0; f < sub.n_faces(); ++f) {
        if (sub.face_origin[static_cast<size_t>(f)] != base_face) continue;
        const Eigen::Vector2d a = planar(sub.vertices_rest.row(sub.faces(f, 0)).transpose());
        const Eigen::Vector2d b = planar(sub.vertices_rest.row(sub.faces(f, 1)).transpose());
        const Eigen::Vector2d c = planar(sub.vertices_rest.row(sub.faces(f, 2)).transpose());
        Eigen::Matrix2d T;
        T << b - a, c - a;
        const Eigen::Vector2d st = T.inverse() * (q - a);
        const Vec3 lam(1.0 - st(0) - st(1), st(0), st(1));
        if (lam.minCoeff() > best_min) {
            best_min = lam.minCoeff();
            best = static_cast<int>(f);
            child_bary = lam;
        }
    }
    return best_min >= -1e-9 ? best : -1;
}

}  // namespace avatar_forge
