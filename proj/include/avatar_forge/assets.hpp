#pragma once

#include "avatar_forge/core.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace avatar_forge {

enum class PartLabel : std::int32_t {
    head = 0,
    body = 1,
    left_hand = 2,
    right_hand = 3,
    face_interior = 4,
    jaw = 5,
    other = 6,
};
inline constexpr int kPartLabelCount = 7;

std::string_view part_label_name(PartLabel label);
PartLabel parse_part_label(std::string_view name);
// head, face_interior and jaw together make up the head region.
bool is_head_region(PartLabel label);

/** Rest-pose body asset: template mesh, linear blendshape bases, joint
 *  regressor, skinning weights and kinematic tree.
 *
 *  Bases are stored as (3N x S) matrices with row 3*v+c holding coordinate c
 *  of vertex v, so that the blended template is T + B * coeffs after
 *  flattening T row-major. */
struct TemplateModel {
    PointCloud vertices;      // N x 3, meters
    Triangles faces;          // F x 3, counter-clockwise
    PointCloud2D uv_coords;   // N x 2 in [0,1]^2
    Matrix shape_basis;       // 3N x S_b
    Matrix expr_basis;        // 3N x S_e
    Matrix pose_basis;        // 3N x 9(K-1)
    Matrix joint_regressor;   // K x N
    Matrix skin_weights;      // N x K
    Eigen::VectorXi parents;  // K, parents[0] = -1
    std::vector<PartLabel> part_labels;    // N
    std::vector<bool> subdivision_mask;    // F

    Index n_verts() const { return vertices.rows(); }
    Index n_faces() const { return faces.rows(); }
    Index n_joints() const { return parents.size(); }
    Index n_shape() const { return shape_basis.cols(); }
    Index n_expr() const { return expr_basis.cols(); }

    std::uint64_t fingerprint() const;
};

// Throws DimensionError / InvariantError on the first violated invariant.
void validate(const TemplateModel& model);

// Joints in an order where every parent precedes its children; throws
// InvariantError when parents does not describe a tree rooted at joint 0.
std::vector<int> topological_joint_order(const Eigen::VectorXi& parents);

// With check_invariants false, value-level violations (weight sums, tree
// order, ...) are left for the caller to report; shape errors still throw.
TemplateModel load_model(const std::string& path, bool check_invariants = true);
void save_model(const TemplateModel& model, const std::string& path);

class ArrayFile;
void write_model_arrays(const TemplateModel& model, ArrayFile& file);
TemplateModel read_model_arrays(const ArrayFile& file, bool check_invariants = true);

/** Deterministic capsule-torso humanoid with a spherical head.
 *
 *  Surface of revolution about +Y with 2*n_rings segments, n_rings/2+1 head
 *  rings, 3*n_rings+1 body rings and two poles. Joints: root, spine, neck,
 *  jaw, left arm, right arm. Head faces are excluded from subdivision. */
TemplateModel make_toy_body(std::uint64_t seed, int n_rings);

// Joint whose skin weights cover the jaw-labeled vertices the most.
int jaw_joint_index(const TemplateModel& model);

// Per-label vertex density (vertices / m^2), with each face's area split
// evenly between its corners.
double region_vertex_density(const PointCloud& vertices, const Triangles& faces,
                             const std::vector<PartLabel>& labels, bool head_region);

}  // namespace avatar_forge
