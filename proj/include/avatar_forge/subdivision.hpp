#pragma once

#include "avatar_forge/body_model.hpp"

#include <vector>

namespace avatar_forge {

// Each vertex of a subdivided mesh is either an original vertex (a == b,
// t == 0) or the midpoint of the edge (a, b) of the previous round (t = 0.5).
struct VertexParent {
    int a = 0;
    int b = 0;
    double t = 0.0;
};

/** Partially subdivided body. Original vertices keep their indices and
 *  attributes; each round appends edge midpoints sorted by (min, max)
 *  endpoint. All per-vertex attributes, including the three blendshape
 *  bases, are lifted by the same midpoint averaging. */
struct SubdividedModel {
    const TemplateModel* base = nullptr;
    PointCloud vertices_rest;
    Triangles faces;
    PointCloud2D uv_coords;
    Matrix skin_weights_up;
    std::vector<VertexParent> parent_map;
    Matrix shape_basis_up;
    Matrix expr_basis_up;
    Matrix pose_basis_up;
    std::vector<PartLabel> part_labels_up;
    std::vector<bool> face_mask;   // true for faces descending from masked base faces
    std::vector<int> face_origin;  // base face each face descends from
    int rounds = 0;

    Index n_verts() const { return vertices_rest.rows(); }
    Index n_faces() const { return faces.rows(); }
    std::uint64_t fingerprint() const;
};

struct DisplacementLayer {
    PointCloud d;  // N_s x 3, canonical-space offsets in meters

    static DisplacementLayer zero(const SubdividedModel& sub) { return {PointCloud::Zero(sub.n_verts(), 3)}; }
};

// Splits every masked face into four per round. Unmasked faces that border
// split edges are fan-split into two or three triangles (four when all three
// edges are split) so the mesh stays free of T-junctions.
SubdividedModel subdivide_partial(const TemplateModel& model, int rounds);
// Continues subdividing an existing result; subdivide_partial(m, r+s) equals
// refine(subdivide_partial(m, r), s).
SubdividedModel refine(const SubdividedModel& sub, int rounds);

// S(T(beta, theta, psi)) + D evaluated on the lifted bases.
PointCloud personalized_template(const SubdividedModel& sub, const DisplacementLayer& disp,
                                 const BodyParams& params);

// Skins the personalized template with the lifted weights. Joints are
// regressed from the base-resolution template without D.
PosedMesh posed_avatar(const SubdividedModel& sub, const DisplacementLayer& disp, const BodyParams& params);

// Index of the child face of `sub` containing barycentric point `bary` of
// base face `base_face`, with the barycentric coordinates inside that child.
// Returns -1 when the point lies in no descendant (should not happen).
int locate_in_refinement(const SubdividedModel& sub, int base_face, const Vec3& bary, Vec3& child_bary);

}  // namespace avatar_forge
