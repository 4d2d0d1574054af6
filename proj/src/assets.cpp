#include "avatar_forge/assets.hpp"

#include "avatar_forge/array_file.hpp"
#include "avatar_forge/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace avatar_forge {

std::string_view part_label_name(PartLabel label) {
    switch (label) {
        case PartLabel::head: return "head";
        case PartLabel::body: return "body";
        case PartLabel::left_hand: return "left_hand";
        case PartLabel::right_hand: return "right_hand";
        case PartLabel::face_interior: return "face_interior";
        case PartLabel::jaw: return "jaw";
        case PartLabel::other: return "other";
    }
    return "other";
}

PartLabel parse_part_label(std::string_view name) {
    for (int i = 0; i < kPartLabelCount; ++i) {
        const auto label = static_cast<PartLabel>(i);
        if (part_label_name(label) == name) return label;
    }
    throw ConfigError("unknown part label '" + std::string(name) + "'");
}

bool is_head_region(PartLabel label) {
    return label == PartLabel::head || label == PartLabel::face_interior || label == PartLabel::jaw;
}

std::uint64_t TemplateModel::fingerprint() const {
    Fingerprint fp;
    fp.add(vertices).add(faces).add(uv_coords).add(shape_basis).add(expr_basis).add(pose_basis);
    fp.add(joint_regressor).add(skin_weights).add(parents);
    for (auto l : part_labels) fp.add_value(static_cast<std::uint64_t>(l));
    for (bool m : subdivision_mask) fp.add_value(m ? 1u : 0u);
    return fp.value();
}

std::vector<int> topological_joint_order(const Eigen::VectorXi& parents) {
    const int K = static_cast<int>(parents.size());
    if (K == 0) throw InvariantError("kinematic tree has no joints");
    if (parents(0) != -1) throw InvariantError("joint 0 must be the root (parent -1)");
    std::vector<std::vector<int>> children(static_cast<size_t>(K));
    for (int j = 1; j < K; ++j) {
        const int p = parents(j);
        if (p < 0 || p >= K || p == j)
            throw InvariantError("joint " + std::to_string(j) + " has invalid parent " + std::to_string(p));
        children[static_cast<size_t>(p)].push_back(j);
    }
    std::vector<int> order{0};
    for (size_t i = 0; i < order.size(); ++i)
        for (int c : children[static_cast<size_t>(order[i])]) order.push_back(c);
    if (static_cast<int>(order.size()) != K)
        throw InvariantError("kinematic tree has a cycle or unreachable joints");
    return order;
}

void validate(const TemplateModel& m) {
    const Index N = m.n_verts(), K = m.n_joints();
    auto dim = [](bool ok, const std::string& what) {
        if (!ok) throw DimensionError(what);
    };
    dim(m.uv_coords.rows() == N, "uv_coords must have N rows");
    dim(m.shape_basis.rows() == 3 * N, "shape_basis must have 3N rows");
    dim(m.expr_basis.rows() == 3 * N, "expr_basis must have 3N rows");
    dim(m.pose_basis.rows() == 3 * N && m.pose_basis.cols() == 9 * (K - 1),
        "pose_basis must be 3N x 9(K-1)");
    dim(m.joint_regressor.rows() == K && m.joint_regressor.cols() == N, "joint_regressor must be K x N");
    dim(m.skin_weights.rows() == N && m.skin_weights.cols() == K, "skin_weights must be N x K");
    dim(static_cast<Index>(m.part_labels.size()) == N, "part_labels must have N entries");
    dim(static_cast<Index>(m.subdivision_mask.size()) == m.n_faces(), "subdivision_mask must have F entries");

    if (m.faces.size() > 0 && (m.faces.minCoeff() < 0 || m.faces.maxCoeff() >= N))
        throw InvariantError("face index out of range");
    if (!all_finite(m.vertices) || !all_finite(m.uv_coords) || !all_finite(m.shape_basis) ||
        !all_finite(m.expr_basis) || !all_finite(m.pose_basis) || !all_finite(m.joint_regressor) ||
        !all_finite(m.skin_weights))
        throw InvariantError("non-finite values in model arrays");
    for (Index v = 0; v < N; ++v) {
        const double s = m.skin_weights.row(v).sum();
        if (std::abs(s - 1.0) > 1e-9)
            throw InvariantError("skin_weights row " + std::to_string(v) + " sums to " + std::to_string(s));
        if (m.skin_weights.row(v).minCoeff() < 0.0 || m.skin_weights.row(v).maxCoeff() > 1.0)
            throw InvariantError("skin_weights row " + std::to_string(v) + " outside [0,1]");
    }
    for (Index j = 0; j < K; ++j) {
        const double s = m.joint_regressor.row(j).sum();
        if (std::abs(s - 1.0) > 1e-9)
            throw InvariantError("joint_regressor row " + std::to_string(j) + " sums to " + std::to_string(s));
    }
    topological_joint_order(m.parents);
}

void write_model_arrays(const TemplateModel& m, ArrayFile& f) {
    f.set("vertices", m.vertices);
    f.set("faces", m.faces);
    f.set("uv_coords", m.uv_coords);
    f.set("shape_basis", m.shape_basis);
    f.set("expr_basis", m.expr_basis);
    f.set("pose_basis", m.pose_basis);
    f.set("joint_regressor", m.joint_regressor);
    f.set("skin_weights", m.skin_weights);
    f.set_ints("parents", std::vector<std::int32_t>(m.parents.data(), m.parents.data() + m.parents.size()));
    std::vector<std::int32_t> labels, mask;
    for (auto l : m.part_labels) labels.push_back(static_cast<std::int32_t>(l));
    for (bool b : m.subdivision_mask) mask.push_back(b ? 1 : 0);
    f.set_ints("part_labels", labels);
    f.set_ints("subdivision_mask", mask);
}

TemplateModel read_model_arrays(const ArrayFile& f, bool check_invariants) {
    TemplateModel m;
    m.vertices = f.matrix("vertices", -1, 3);
    const Index N = m.vertices.rows();
    m.faces = f.int_matrix("faces", -1, 3);
    m.uv_coords = f.matrix("uv_coords", N, 2);
    const auto parents = f.ints("parents");
    const Index K = static_cast<Index>(parents.size());
    m.parents = Eigen::Map<const Eigen::VectorXi>(parents.data(), K);
    m.shape_basis = f.matrix("shape_basis", 3 * N, -1);
    m.expr_basis = f.matrix("expr_basis", 3 * N, -1);
    m.pose_basis = f.matrix("pose_basis", 3 * N, 9 * (K - 1));
    m.joint_regressor = f.matrix("joint_regressor", K, N);
    m.skin_weights = f.matrix("skin_weights", N, K);
    for (auto l : f.ints("part_labels", N)) {
        if (l < 0 || l >= kPartLabelCount) throw InvariantError("part label out of range");
        m.part_labels.push_back(static_cast<PartLabel>(l));
    }
    for (auto b : f.ints("subdivision_mask", m.faces.rows())) {
        if (b != 0 && b != 1) throw InvariantError("subdivision_mask entries must be 0 or 1");
        m.subdivision_mask.push_back(b == 1);
    }
    try {
        validate(m);
    } catch (const InvariantError&) {
        if (check_invariants) throw;
    }
    return m;
}

TemplateModel load_model(const std::string& path, bool check_invariants) {
    const ArrayFile f = ArrayFile::read(path);
    const auto kind = f.meta("kind");
    if (kind && *kind != "template_model") throw ParseError("'" + path + "' is not a template model file");
    return read_model_arrays(f, check_invariants);
}

void save_model(const TemplateModel& model, const std::string& path) {
    ArrayFile f;
    f.set_meta("kind", "template_model");
    write_model_arrays(model, f);
    f.write(path);
}

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Toy body dimensions (meters).
struct ToyGeometry {
    double head_center_y = 1.62;
    double head_radius = 0.08;
    double head_max_polar = 140.0 * kPi / 180.0;
    double torso_radius = 0.17;
    double torso_top_y = 1.35;
    double torso_bottom_y = 0.75;
    double neck_polar = 30.0 * kPi / 180.0;
};

struct RingPoint {
    double radius, y;
};

RingPoint body_profile(const ToyGeometry& g, double s) {
    const double R = g.torso_radius;
    const double arc1 = R * (kPi / 2 - g.neck_polar);
    const double h = g.torso_top_y - g.torso_bottom_y;
    if (s < arc1) {
        const double gamma = g.neck_polar + s / R;
        return {R * std::sin(gamma), g.torso_top_y + R * std::cos(gamma)};
    }
    if (s < arc1 + h) return {R, g.torso_top_y - (s - arc1)};
    const double gamma = (s - arc1 - h) / R;
    return {R * std::cos(gamma), g.torso_bottom_y - R * std::sin(gamma)};
}

double body_profile_length(const ToyGeometry& g) {
    return g.torso_radius * (kPi / 2 - g.neck_polar) + (g.torso_top_y - g.torso_bottom_y) +
           g.torso_radius * kPi / 2;
}

// Smooth random field: sum of three sinusoids per coordinate.
struct SmoothField {
    Eigen::Matrix<double, 3, 3> freq[3];
    Eigen::Vector3d phase[3];
    Eigen::Vector3d amp[3];

    SmoothField(Rng& rng, double amplitude, double max_freq) {
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 3; ++k) {
                for (int d = 0; d < 3; ++d) freq[c](k, d) = rng.uniform(-max_freq, max_freq);
                phase[c](k) = rng.uniform(0.0, 2 * kPi);
                amp[c](k) = amplitude * rng.uniform(-1.0, 1.0) / 3.0;
            }
    }
    Vec3 operator()(const Vec3& p) const {
        Vec3 out;
        for (int c = 0; c < 3; ++c) {
            double v = 0;
            for (int k = 0; k < 3; ++k) v += amp[c](k) * std::sin(freq[c].row(k).dot(p) + phase[c](k));
            out(c) = v;
        }
        return out;
    }
};

}  // namespace

TemplateModel make_toy_body(std::uint64_t seed, int n_rings) {
    if (n_rings < 4) throw ConfigError("make_toy_body requires n_rings >= 4");
    const ToyGeometry g;
    const int S = 2 * n_rings;
    const int H = n_rings / 2 + 1;
    const int B = 3 * n_rings + 1;
    const int R = H + B;
    const int N = 2 + S * R;
    const int top = 0, bottom = N - 1;
    auto ring_vertex = [&](int ring, int seg) { return 1 + ring * S + ((seg % S) + S) % S; };

    TemplateModel m;
    m.vertices.resize(N, 3);
    m.uv_coords.resize(N, 2);
    m.part_labels.assign(static_cast<size_t>(N), PartLabel::body);

    const Vec3 head_center(0, g.head_center_y, 0);
    const double body_len = body_profile_length(g);
    std::vector<double> ring_y(static_cast<size_t>(R)), ring_polar(static_cast<size_t>(H));

    m.vertices.row(top) = (head_center + Vec3(0, g.head_radius, 0)).transpose();
    m.uv_coords.row(top) << 0.5, 0.5;
    m.part_labels[top] = PartLabel::head;
    for (int ring = 0; ring < R; ++ring) {
        double radius, y, uv_radius;
        if (ring < H) {
            const double a = g.head_max_polar * (ring + 1) / H;
            ring_polar[static_cast<size_t>(ring)] = a;
            radius = g.head_radius * std::sin(a);
            y = g.head_center_y + g.head_radius * std::cos(a);
            uv_radius = 0.22 * (ring + 1) / H;
        } else {
            const int j = ring - H;
            const RingPoint p = body_profile(g, body_len * j / B);
            radius = p.radius;
            y = p.y;
            uv_radius = 0.25 + 0.23 * j / (B - 1);
        }
        ring_y[static_cast<size_t>(ring)] = y;
        for (int s = 0; s < S; ++s) {
            const double phi = 2 * kPi * s / S;
            const int v = ring_vertex(ring, s);
            m.vertices.row(v) << radius * std::sin(phi), y, radius * std::cos(phi);
            m.uv_coords.row(v) << 0.5 + uv_radius * std::sin(phi), 0.5 - uv_radius * std::cos(phi);
            const double phi_signed = phi > kPi ? phi - 2 * kPi : phi;
            const bool front = std::abs(phi_signed) < 50.0 * kPi / 180.0;
            if (ring < H) {
                const double a = ring_polar[static_cast<size_t>(ring)];
                if (front && a >= 100.0 * kPi / 180.0)
                    m.part_labels[static_cast<size_t>(v)] = PartLabel::jaw;
                else if (front && a >= 50.0 * kPi / 180.0)
                    m.part_labels[static_cast<size_t>(v)] = PartLabel::face_interior;
                else
                    m.part_labels[static_cast<size_t>(v)] = PartLabel::head;
            } else {
                const double x = radius * std::sin(phi);
                if (std::abs(x) > 0.7 * g.torso_radius && y > 1.05 && y < 1.45)
                    m.part_labels[static_cast<size_t>(v)] = x > 0 ? PartLabel::left_hand : PartLabel::right_hand;
            }
        }
    }
    m.vertices.row(bottom) << 0, g.torso_bottom_y - g.torso_radius, 0;
    m.uv_coords.row(bottom) << 0.5, 0.5 - 0.49;

    // Faces, oriented outward and flagged for subdivision on the body.
    std::vector<Eigen::Vector3i> faces;
    std::vector<bool> mask;
    auto outward_reference = [&](const Vec3& c, bool head_face) -> Vec3 {
        if (head_face) return head_center;
        return Vec3(0, std::clamp(c.y(), g.torso_bottom_y, g.torso_top_y), 0);
    };
    auto add_face = [&](int a, int b, int c, bool head_face) {
        const Vec3 pa = m.vertices.row(a), pb = m.vertices.row(b), pc = m.vertices.row(c);
        const Vec3 n = (pb - pa).cross(pc - pa);
        const Vec3 centroid = (pa + pb + pc) / 3.0;
        if (n.dot(centroid - outward_reference(centroid, head_face)) < 0) std::swap(b, c);
        faces.emplace_back(a, b, c);
        mask.push_back(!head_face);
    };
    for (int s = 0; s < S; ++s) add_face(top, ring_vertex(0, s), ring_vertex(0, s + 1), true);
    for (int ring = 0; ring + 1 < R; ++ring) {
        const bool head_face = ring + 1 < H;
        for (int s = 0; s < S; ++s) {
            const int a = ring_vertex(ring, s), b = ring_vertex(ring, s + 1);
            const int c = ring_vertex(ring + 1, s), d = ring_vertex(ring + 1, s + 1);
            add_face(a, c, d, head_face);
            add_face(a, d, b, head_face);
        }
    }
    for (int s = 0; s < S; ++s) add_face(bottom, ring_vertex(R - 1, s + 1), ring_vertex(R - 1, s), false);
    m.faces.resize(static_cast<Index>(faces.size()), 3);
    for (size_t f = 0; f < faces.size(); ++f) m.faces.row(static_cast<Index>(f)) = faces[f].transpose();
    m.subdivision_mask = mask;

    // Kinematic tree: root, spine, neck, jaw, left arm, right arm.
    const int K = 6;
    m.parents.resize(K);
    m.parents << -1, 0, 1, 2, 1, 1;
    enum { root = 0, spine = 1, neck = 2, jaw = 3, larm = 4, rarm = 5 };

    auto closest_ring = [&](double y, int first, int last) {
        int best = first;
        for (int r = first; r <= last; ++r)
            if (std::abs(ring_y[static_cast<size_t>(r)] - y) < std::abs(ring_y[static_cast<size_t>(best)] - y))
                best = r;
        return best;
    };
    m.joint_regressor = Matrix::Zero(K, N);
    auto regress_ring = [&](int joint, int ring) {
        for (int s = 0; s < S; ++s) m.joint_regressor(joint, ring_vertex(ring, s)) = 1.0 / S;
    };
    regress_ring(root, closest_ring(0.85, H, R - 1));
    regress_ring(spine, closest_ring(1.2, H, R - 1));
    regress_ring(neck, H);
    regress_ring(jaw, std::min(3, H - 1));
    const int arm_ring = closest_ring(1.35, H, R - 1);
    for (int side : {larm, rarm}) {
        std::vector<int> verts;
        for (int s = 0; s < S; ++s) {
            const int v = ring_vertex(arm_ring, s);
            const double x = m.vertices(v, 0);
            if ((side == larm ? x : -x) > 0.5 * g.torso_radius) verts.push_back(v);
        }
        for (int v : verts) m.joint_regressor(side, v) = 1.0 / static_cast<double>(verts.size());
    }

    // Skinning weights: height-blended torso chain, lateral arm blend,
    // rigid head and jaw.
    m.skin_weights = Matrix::Zero(N, K);
    for (int v = 0; v < N; ++v) {
        const Vec3 p = m.vertices.row(v);
        const PartLabel label = m.part_labels[static_cast<size_t>(v)];
        auto w = m.skin_weights.row(v);
        if (label == PartLabel::jaw) {
            w(jaw) = 1.0;
        } else if (is_head_region(label)) {
            w(neck) = 1.0;
        } else {
            const double w_root = 1.0 - smoothstep(0.95, 1.25, p.y());
            const double w_neck = smoothstep(1.38, 1.50, p.y());
            const double w_spine = 1.0 - w_root - w_neck;
            const double lateral = smoothstep(0.45, 0.8, std::abs(p.x()) / g.torso_radius) *
                                   smoothstep(0.95, 1.15, p.y()) * (1.0 - smoothstep(1.42, 1.5, p.y()));
            const double arm = 0.9 * lateral;
            w(root) = (1.0 - arm) * w_root;
            w(spine) = (1.0 - arm) * std::max(0.0, w_spine);
            w(neck) = (1.0 - arm) * w_neck;
            w(p.x() > 0 ? larm : rarm) = arm;
        }
        w /= w.sum();
    }

    // Blendshape bases from seeded smooth fields.
    Rng rng(seed);
    const int n_shape = 10, n_expr = 4;
    const Vec3 centroid = m.vertices.colwise().mean();
    m.shape_basis = Matrix::Zero(3 * N, n_shape);
    m.expr_basis = Matrix::Zero(3 * N, n_expr);
    m.pose_basis = Matrix::Zero(3 * N, 9 * (K - 1));
    const double scale_gain = 0.04 * (1.0 + 0.5 * rng.uniform(-1.0, 1.0));
    for (int v = 0; v < N; ++v)
        m.shape_basis.block(3 * v, 0, 3, 1) = scale_gain * (Vec3(m.vertices.row(v)) - centroid);
    for (int b = 1; b < n_shape; ++b) {
        const SmoothField field(rng, 0.03, 4.0);
        for (int v = 0; v < N; ++v) m.shape_basis.block(3 * v, b, 3, 1) = field(m.vertices.row(v).transpose());
    }
    for (int b = 0; b < n_expr; ++b) {
        const SmoothField field(rng, 0.01, 25.0);
        for (int v = 0; v < N; ++v) {
            const PartLabel l = m.part_labels[static_cast<size_t>(v)];
            if (l == PartLabel::face_interior || l == PartLabel::jaw)
                m.expr_basis.block(3 * v, b, 3, 1) = field(m.vertices.row(v).transpose());
        }
    }
    for (int j = 1; j < K; ++j)
        for (int e = 0; e < 9; ++e) {
            const SmoothField field(rng, 0.01, 3.0);
            const int col = 9 * (j - 1) + e;
            for (int v = 0; v < N; ++v)
                m.pose_basis.block(3 * v, col, 3, 1) = m.skin_weights(v, j) * field(m.vertices.row(v).transpose());
        }
    validate(m);
    return m;
}

int jaw_joint_index(const TemplateModel& model) {
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(model.n_joints());
    bool any = false;
    for (Index v = 0; v < model.n_verts(); ++v)
        if (model.part_labels[static_cast<size_t>(v)] == PartLabel::jaw) {
            mass += model.skin_weights.row(v).transpose();
            any = true;
        }
    if (!any) throw InvariantError("model has no jaw-labeled vertices");
    Index best;
    mass.maxCoeff(&best);
    return static_cast<int>(best);
}

double region_vertex_density(const PointCloud& vertices, const Triangles& faces,
                             const std::vector<PartLabel>& labels, bool head_region) {
    auto in_region = [&](Index v) { return is_head_region(labels[static_cast<size_t>(v)]) == head_region; };
    double area = 0;
    for (Index f = 0; f < faces.rows(); ++f) {
        const Vec3 a = vertices.row(faces(f, 0)), b = vertices.row(faces(f, 1)), c = vertices.row(faces(f, 2));
        const double fa = 0.5 * (b - a).cross(c - a).norm();
        for (int k = 0; k < 3; ++k)
            if (in_region(faces(f, k))) area += fa / 3.0;
    }
    Index count = 0;
    for (Index v = 0; v < vertices.rows(); ++v) count += in_region(v) ? 1 : 0;
    return area > 0 ? static_cast<double>(count) / area : 0.0;
}

}  // namespace avatar_forge
