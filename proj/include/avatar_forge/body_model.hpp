#pragma once

#include "avatar_forge/assets.hpp"
#include "avatar_forge/rotation.hpp"

#include <vector>

namespace avatar_forge {

struct PoseParams {
    PointCloud body_pose;   // (K-1) x 3 axis-angle, radians
    Vec3 root_orient = Vec3::Zero();
    Vec3 root_transl = Vec3::Zero();

    static PoseParams zero(Index n_joints) {
        PoseParams p;
        p.body_pose = PointCloud::Zero(n_joints - 1, 3);
        return p;
    }
};

struct BodyParams {
    Vector beta;
    PoseParams theta;
    Vector psi;

    static BodyParams zero(const TemplateModel& model) {
        return {Vector::Zero(model.n_shape()), PoseParams::zero(model.n_joints()), Vector::Zero(model.n_expr())};
    }
};

void check_dimensions(const TemplateModel& model, const BodyParams& params);

// Reverse-mode gradients of <grad_vertices, posed vertices>.
struct BodyGrad {
    Vector beta;
    Vector psi;
    PointCloud body_pose;  // (K-1) x 3
    Vec3 root_orient = Vec3::Zero();
    Vec3 root_transl = Vec3::Zero();
    PointCloud displacement;  // N_s x 3 when the forward pass had a displacement layer, else empty
};

/** Intermediates of one skinning forward pass. Holds non-owning pointers to
 *  the (immutable) model arrays plus a fingerprint of their contents; a
 *  backward call on a tape whose model changed raises StaleTapeError. */
struct LbsTape {
    const TemplateModel* base = nullptr;
    std::uint64_t base_fingerprint = 0;
    // Basis set the posed vertices were built from: the base model's own
    // bases, or the lifted bases of a subdivided model.
    const Matrix* shape_basis = nullptr;
    const Matrix* expr_basis = nullptr;
    const Matrix* pose_basis = nullptr;
    const Matrix* skin_weights = nullptr;
    std::uint64_t (*lifted_fingerprint)(const void*) = nullptr;
    const void* lifted_owner = nullptr;
    std::uint64_t lifted_value = 0;
    bool has_displacement = false;

    PointCloud rest;     // template after all blendshapes (+ D) that was skinned
    PointCloud joints;   // rest joints J
    std::vector<RotationDeviation<double>> local;  // per joint, S = R - I
    std::vector<Mat3> world_dev;                   // Ra - I of the rest-to-posed transform
    std::vector<Vec3> world_transl;
    Matrix blended_dev;  // N x 9, per-vertex blended (Ra - I)
    std::vector<int> order;
};

struct PosedMesh {
    PointCloud vertices;
    PointCloud joints_world;
    LbsTape tape;
};

// T(beta, theta, psi) = T + Bs beta + Be psi + Bp(theta).
PointCloud shaped_template(const TemplateModel& model, const BodyParams& params);
PointCloud regress_joints(const TemplateModel& model, const PointCloud& shaped);

// Flattened (R_j - I) for joints 1..K-1, the pose-blendshape coefficients.
Vector pose_feature(const PoseParams& pose);

// Joints are regressed from T + Bs beta + Be psi (no pose correctives).
PosedMesh lbs_forward(const TemplateModel& model, const BodyParams& params);
BodyGrad lbs_backward(const LbsTape& tape, const PointCloud& grad_vertices);

namespace detail {
// Skins `rest` with weights W about `joints`; used by both the base and the
// subdivided model paths. Fills every tape field except the model pointers.
PosedMesh skin(PointCloud rest, const Matrix& weights, PointCloud joints, const Eigen::VectorXi& parents,
               const PoseParams& pose);
}  // namespace detail

}  // namespace avatar_forge
