#include "avatar_forge/body_model.hpp"

namespace avatar_forge {

namespace {

Vec3 joint_axis_angle(const PoseParams& pose, Index j) {
    return j == 0 ? pose.root_orient : Vec3(pose.body_pose.row(j - 1).transpose());
}

}  // namespace

void check_dimensions(const TemplateModel& model, const BodyParams& params) {
    if (params.beta.size() != model.n_shape())
        throw DimensionError("beta has " + std::to_string(params.beta.size()) + " entries, model expects " +
                             std::to_string(model.n_shape()));
    if (params.psi.size() != model.n_expr())
        throw DimensionError("psi has " + std::to_string(params.psi.size()) + " entries, model expects " +
                             std::to_string(model.n_expr()));
    if (params.theta.body_pose.rows() != model.n_joints() - 1)
        throw DimensionError("body_pose has " + std::to_string(params.theta.body_pose.rows()) +
                             " joints, model expects " + std::to_string(model.n_joints() - 1));
    if (!all_finite(params.theta.body_pose) || !all_finite(params.theta.root_orient) ||
        !all_finite(params.theta.root_transl) || !all_finite(params.beta) || !all_finite(params.psi))
        throw InvariantError("body parameters must be finite");
}

Vector pose_feature(const PoseParams& pose) {
    const Index n = pose.body_pose.rows();
    Vector f(9 * n);
    for (Index j = 0; j < n; ++j) {
        const Mat3 S = rodrigues<double>(pose.body_pose.row(j).transpose()).S;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) f(9 * j + 3 * a + b) = S(a, b);
    }
    return f;
}

PointCloud shaped_template(const TemplateModel& model, const BodyParams& params) {
    check_dimensions(model, params);
    PointCloud out = model.vertices;
    Eigen::Map<Vector> o(out.data(), out.size());
    o += model.shape_basis * params.beta + model.expr_basis * params.psi +
         model.pose_basis * pose_feature(params.theta);
    return out;
}

PointCloud regress_joints(const TemplateModel& model, const PointCloud& shaped) {
    if (shaped.rows() != model.n_verts())
        throw DimensionError("regress_joints expects " + std::to_string(model.n_verts()) + " vertices");
    return model.joint_regressor * shaped;
}

namespace detail {

PosedMesh skin(PointCloud rest, const Matrix& weights, PointCloud joints, const Eigen::VectorXi& parents,
               const PoseParams& pose) {
    const Index K = parents.size();
    PosedMesh out;
    LbsTape& tape = out.tape;
    tape.order = topological_joint_order(parents);
    tape.local.resize(static_cast<size_t>(K));
    tape.world_dev.resize(static_cast<size_t>(K));
    tape.world_transl.resize(static_cast<size_t>(K));
    for (Index j = 0; j < K; ++j) tape.local[static_cast<size_t>(j)] = rodrigues<double>(joint_axis_angle(pose, j));

    // Rest-to-posed transform of joint j: x -> (I + Da_j) x + ta_j.
    //   root:  Da = S_0,                  ta = -S_0 J_0
    //   child: Da = Da_p + (I + Da_p) S_j, ta = ta_p - (I + Da_p) S_j J_j
    for (int j : tape.order) {
        const auto ju = static_cast<size_t>(j);
        const Mat3& S = tape.local[ju].S;
        const Vec3 J = joints.row(j).transpose();
        if (j == 0) {
            tape.world_dev[ju] = S;
            tape.world_transl[ju] = -(S * J);
        } else {
            const auto pu = static_cast<size_t>(parents(j));
            const Mat3 RS = S + tape.world_dev[pu] * S;
            tape.world_dev[ju] = tape.world_dev[pu] + RS;
            tape.world_transl[ju] = tape.world_transl[pu] - RS * J;
        }
    }

    Matrix dev_flat(K, 9), transl(K, 3);
    for (Index j = 0; j < K; ++j) {
        const auto ju = static_cast<size_t>(j);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) dev_flat(j, 3 * a + b) = tape.world_dev[ju](a, b);
        transl.row(j) = tape.world_transl[ju].transpose();
    }
    tape.blended_dev = weights * dev_flat;
    const Matrix blended_t = weights * transl;

    const Index N = rest.rows();
    out.vertices.resize(N, 3);
    for (Index v = 0; v < N; ++v) {
        const auto M = tape.blended_dev.row(v);
        const Vec3 p = rest.row(v).transpose();
        Vec3 delta;
        for (int a = 0; a < 3; ++a) delta(a) = M(3 * a) * p(0) + M(3 * a + 1) * p(1) + M(3 * a + 2) * p(2);
        out.vertices.row(v) = (p + (delta + blended_t.row(v).transpose()) + pose.root_transl).transpose();
    }

    out.joints_world.resize(K, 3);
    for (Index j = 0; j < K; ++j) {
        const auto ju = static_cast<size_t>(j);
        const Vec3 J = joints.row(j).transpose();
        out.joints_world.row(j) = (J + tape.world_dev[ju] * J + tape.world_transl[ju] + pose.root_transl).transpose();
    }
    tape.rest = std::move(rest);
    tape.joints = std::move(joints);
    return out;
}

}  // namespace detail

PosedMesh lbs_forward(const TemplateModel& model, const BodyParams& params) {
    check_dimensions(model, params);
    PointCloud identity_shaped = model.vertices;
    Eigen::Map<Vector>(identity_shaped.data(), identity_shaped.size()) +=
        model.shape_basis * params.beta + model.expr_basis * params.psi;
    PointCloud joints = model.joint_regressor * identity_shaped;
    PointCloud rest = identity_shaped;
    Eigen::Map<Vector>(rest.data(), rest.size()) += model.pose_basis * pose_feature(params.theta);

    PosedMesh out = detail::skin(std::move(rest), model.skin_weights, std::move(joints), model.parents, params.theta);
    LbsTape& tape = out.tape;
    tape.base = &model;
    tape.base_fingerprint = model.fingerprint();
    tape.shape_basis = &model.shape_basis;
    tape.expr_basis = &model.expr_basis;
    tape.pose_basis = &model.pose_basis;
    tape.skin_weights = &model.skin_weights;
    return out;
}

BodyGrad lbs_backward(const LbsTape& tape, const PointCloud& grad_vertices) {
    if (!tape.base) throw StaleTapeError("tape was not produced by a forward pass");
    if (tape.base->fingerprint() != tape.base_fingerprint)
        throw StaleTapeError("template model changed between forward and backward");
    if (tape.lifted_fingerprint && tape.lifted_fingerprint(tape.lifted_owner) != tape.lifted_value)
        throw StaleTapeError("subdivided model changed between forward and backward");
    const TemplateModel& model = *tape.base;
    const Index N = tape.rest.rows(), K = model.n_joints();
    if (grad_vertices.rows() != N) throw DimensionError("grad_vertices must have one row per posed vertex");
    const Matrix& W = *tape.skin_weights;

    BodyGrad g;
    g.root_transl = grad_vertices.colwise().sum().transpose();

    // d rest: g + (blended deviation)^T g per vertex.
    PointCloud grad_rest = grad_vertices;
    Matrix outer(N, 9);
    for (Index v = 0; v < N; ++v) {
        const auto M = tape.blended_dev.row(v);
        const Vec3 gv = grad_vertices.row(v).transpose();
        const Vec3 p = tape.rest.row(v).transpose();
        for (int b = 0; b < 3; ++b) grad_rest(v, b) += M(b) * gv(0) + M(3 + b) * gv(1) + M(6 + b) * gv(2);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) outer(v, 3 * a + b) = gv(a) * p(b);
    }
    const Matrix grad_dev_flat = W.transpose() * outer;
    const Matrix grad_transl_flat = W.transpose() * grad_vertices;

    std::vector<Mat3> g_dev(static_cast<size_t>(K)), g_S(static_cast<size_t>(K), Mat3::Zero());
    std::vector<Vec3> g_t(static_cast<size_t>(K));
    PointCloud g_joints = PointCloud::Zero(K, 3);
    for (Index j = 0; j < K; ++j) {
        const auto ju = static_cast<size_t>(j);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) g_dev[ju](a, b) = grad_dev_flat(j, 3 * a + b);
        g_t[ju] = grad_transl_flat.row(j).transpose();
    }
    for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
        const int j = *it;
        const auto ju = static_cast<size_t>(j);
        const Mat3& S = tape.local[ju].S;
        const Vec3 J = tape.joints.row(j).transpose();
        if (j == 0) {
            g_S[ju] += g_dev[ju] - g_t[ju] * J.transpose();
            g_joints.row(0) -= (S.transpose() * g_t[ju]).transpose();
        } else {
            const auto pu = static_cast<size_t>(model.parents(j));
            const Mat3 Rp = Mat3::Identity() + tape.world_dev[pu];
            const Vec3 SJ = S * J;
            g_dev[pu] += g_dev[ju] * S.transpose() + g_dev[ju] - g_t[ju] * SJ.transpose();
            g_S[ju] += Rp.transpose() * g_dev[ju] - Rp.transpose() * g_t[ju] * J.transpose();
            g_joints.row(j) -= ((Rp * S).transpose() * g_t[ju]).transpose();
            g_t[pu] += g_t[ju];
        }
    }

    const Eigen::Map<const Vector> grad_rest_flat(grad_rest.data(), grad_rest.size());
    const Vector g_feature = tape.pose_basis->transpose() * grad_rest_flat;
    for (Index j = 1; j < K; ++j)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) g_S[static_cast<size_t>(j)](a, b) += g_feature(9 * (j - 1) + 3 * a + b);

    g.body_pose.resize(K - 1, 3);
    g.root_orient = rodrigues_pullback(tape.local[0], g_S[0]);
    for (Index j = 1; j < K; ++j)
        g.body_pose.row(j - 1) = rodrigues_pullback(tape.local[static_cast<size_t>(j)], g_S[static_cast<size_t>(j)]).transpose();

    // Joints come from the base-resolution identity-shaped template.
    const PointCloud g_base = model.joint_regressor.transpose() * g_joints;
    const Eigen::Map<const Vector> g_base_flat(g_base.data(), g_base.size());
    g.beta = tape.shape_basis->transpose() * grad_rest_flat + model.shape_basis.transpose() * g_base_flat;
    g.psi = tape.expr_basis->transpose() * grad_rest_flat + model.expr_basis.transpose() * g_base_flat;
    if (tape.has_displacement) g.displacement = grad_rest;
    return g;
}

}  // namespace avatar_forge
