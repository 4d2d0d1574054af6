#include "avatar_forge/body_model.hpp"

#include "doctest.h"
#include "support/test_support.hpp"

#include <Eigen/Geometry>

using namespace avatar_forge;
using namespace avatar_forge::testing;

namespace {

const TemplateModel& toy() {
    static const TemplateModel m = make_toy_body(0, 8);
    return m;
}

Mat3 rotation_matrix(const Vec3& r) {
    const double a = r.norm();
    if (a == 0) return Mat3::Identity();
    return Eigen::AngleAxisd(a, r / a).toRotationMatrix();
}

}  // namespace

TEST_CASE("rodrigues matches Eigen's angle-axis and is exact at identity") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const Vec3 r = random_vector(rng, 3, 2.0);
        CHECK((rodrigues<double>(r).rotation() - rotation_matrix(r)).norm() < 1e-14);
    }
    const auto id = rodrigues<double>(Vec3::Zero());
    CHECK(id.S == Mat3::Zero());
    // Derivative matches finite differences across the three regimes.
    for (double scale : {1e-9, 1e-4, 1e-1, 2.0}) {
        const Vec3 r = scale * Vec3(0.3, -0.5, 0.8);
        const auto rot = rodrigues<double>(r);
        for (int i = 0; i < 3; ++i) {
            const double h = 1e-6;
            Vec3 rp = r, rm = r;
            rp(i) += h;
            rm(i) -= h;
            const Mat3 fd = (rodrigues<double>(rp).S - rodrigues<double>(rm).S) / (2 * h);
            CHECK((fd - rot.dS[i]).norm() < 1e-8);
        }
    }
}

TEST_CASE("shaped template is T-bar at zero and linear in beta") {
    const TemplateModel& m = toy();
    BodyParams p = BodyParams::zero(m);
    CHECK(shaped_template(m, p) == m.vertices);

    p.beta(0) = 1.0;
    PointCloud expected = m.vertices;
    for (Index v = 0; v < m.n_verts(); ++v)
        for (int c = 0; c < 3; ++c) expected(v, c) += m.shape_basis(3 * v + c, 0);
    CHECK((shaped_template(m, p) - expected).cwiseAbs().maxCoeff() == 0.0);

    p.beta(0) = 2.0;
    for (Index v = 0; v < m.n_verts(); ++v)
        for (int c = 0; c < 3; ++c) expected(v, c) = m.vertices(v, c) + 2.0 * m.shape_basis(3 * v + c, 0);
    CHECK((shaped_template(m, p) - expected).cwiseAbs().maxCoeff() < 1e-15);

    p.beta.resize(3);
    CHECK_THROWS_AS(shaped_template(m, p), DimensionError);
}

TEST_CASE("joint regression is a convex combination") {
    const TemplateModel& m = toy();
    const PointCloud J = regress_joints(m, m.vertices);
    CHECK(J.rows() == 6);
    // Root row is uniform over one ring: lies on the vertical axis.
    CHECK(std::abs(J(0, 0)) < 1e-12);
    CHECK(std::abs(J(0, 2)) < 1e-12);
    const Vec3 t(0.1, -0.2, 0.3);
    PointCloud moved = m.vertices;
    moved.rowwise() += t.transpose();
    const PointCloud Jt = regress_joints(m, moved);
    CHECK(((Jt.rowwise() - t.transpose()) - J).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(regress_joints(m, PointCloud::Zero(3, 3)), DimensionError);
}

TEST_CASE("zero pose reproduces the shaped template exactly") {
    const TemplateModel& m = toy();
    BodyParams p = BodyParams::zero(m);
    CHECK(lbs_forward(m, p).vertices == m.vertices);
    Rng rng(1);
    p.beta = random_vector(rng, m.n_shape(), 1.0);
    p.psi = random_vector(rng, m.n_expr(), 1.0);
    CHECK(lbs_forward(m, p).vertices == shaped_template(m, p));
}

TEST_CASE("pure root rotation is a single rigid transform about the root joint") {
    const TemplateModel& m = toy();
    BodyParams p = BodyParams::zero(m);
    p.theta.root_orient = Vec3(0.2, -0.7, 0.4);
    p.theta.root_transl = Vec3(0.5, 0.1, -0.3);
    const PointCloud shaped = shaped_template(m, p);
    const Vec3 root = regress_joints(m, shaped).row(0).transpose();
    const Mat3 R = rotation_matrix(p.theta.root_orient);
    const PosedMesh posed = lbs_forward(m, p);
    for (Index v = 0; v < m.n_verts(); ++v) {
        const Vec3 expected = R * (Vec3(shaped.row(v)) - root) + root + p.theta.root_transl;
        CHECK((Vec3(posed.vertices.row(v)) - expected).norm() < 1e-12);
    }
}

TEST_CASE("rotating the jaw moves only jaw-weighted vertices") {
    const TemplateModel& m = toy();
    const int jaw = jaw_joint_index(m);
    BodyParams p = BodyParams::zero(m);
    p.theta.body_pose(jaw - 1, 0) = 0.3;
    const PosedMesh posed = lbs_forward(m, p);
    const PointCloud shaped = shaped_template(m, p);
    Index moved = 0;
    for (Index v = 0; v < m.n_verts(); ++v) {
        if (m.skin_weights(v, jaw) == 0.0) {
            CHECK(posed.vertices.row(v) == shaped.row(v));
        } else {
            moved += (posed.vertices.row(v) - shaped.row(v)).norm() > 1e-6 ? 1 : 0;
        }
    }
    CHECK(moved > 0);
}

TEST_CASE("global rigid motion equivariance") {
    const TemplateModel& m = toy();
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        BodyParams p = random_params(rng, m);
        p.theta.root_orient.setZero();
        p.theta.root_transl.setZero();
        const PosedMesh base = lbs_forward(m, p);
        const Vec3 root = base.joints_world.row(0).transpose();
        BodyParams q = p;
        q.theta.root_orient = random_vector(rng, 3, 2.0);
        q.theta.root_transl = random_vector(rng, 3, 1.0);
        const Mat3 R = rotation_matrix(q.theta.root_orient);
        const PosedMesh moved = lbs_forward(m, q);
        for (Index v = 0; v < m.n_verts(); ++v) {
            const Vec3 expected = R * (Vec3(base.vertices.row(v)) - root) + root + q.theta.root_transl;
            REQUIRE((Vec3(moved.vertices.row(v)) - expected).norm() < 1e-9);
        }
    }
}

TEST_CASE("translating rest joints and vertices together translates the posed mesh") {
    TemplateModel m = toy();
    Rng rng(11);
    const BodyParams p = random_params(rng, m);
    const PosedMesh a = lbs_forward(m, p);
    const Vec3 t(0.3, -0.2, 0.7);
    m.vertices.rowwise() += t.transpose();  // regressor rows sum to 1, so joints move by t as well
    const PosedMesh b = lbs_forward(m, p);
    // Posed offset is the rotated translation of the root chain; every vertex moves identically.
    const Vec3 shift = (b.vertices.row(0) - a.vertices.row(0)).transpose();
    for (Index v = 0; v < m.n_verts(); ++v)
        CHECK((Vec3(b.vertices.row(v) - a.vertices.row(v)) - shift).norm() < 1e-9);
}

TEST_CASE("backward with zero upstream gradient is zero") {
    const TemplateModel& m = toy();
    Rng rng(2);
    const PosedMesh posed = lbs_forward(m, random_params(rng, m));
    const BodyGrad g = lbs_backward(posed.tape, PointCloud::Zero(m.n_verts(), 3));
    CHECK(g.beta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.psi.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.body_pose.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.root_orient.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.root_transl.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("beta gradient at zero pose is the shape-basis contraction") {
    const TemplateModel& m = toy();
    Rng rng(5);
    BodyParams p = BodyParams::zero(m);
    p.beta = random_vector(rng, m.n_shape(), 1.0);
    const PointCloud G = random_points(rng, m.n_verts(), 1.0);
    const BodyGrad g = lbs_backward(lbs_forward(m, p).tape, G);
    // At zero pose the posed mesh equals T + Bs beta + Be psi, whose beta
    // derivative is Bs (joints do not influence vertices at identity).
    const Vector expected = m.shape_basis.transpose() * flatten(G);
    CHECK((g.beta - expected).norm() < 1e-10 * expected.norm());
}

TEST_CASE("backward matches central finite differences") {
    const TemplateModel& m = toy();
    Rng rng(42);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
        const BodyParams p = random_params(rng, m);
        const PointCloud G = random_points(rng, m.n_verts(), 1.0);
        const BodyGrad g = lbs_backward(lbs_forward(m, p).tape, G);
        auto loss = [&](const BodyParams& q) { return (lbs_forward(m, q).vertices.array() * G.array()).sum(); };

        auto check_block = [&](const Vector& x0, const std::function<BodyParams(const Vector&)>& make,
                               const Vector& analytic) {
            const Vector fd = central_differences([&](const Vector& x) { return loss(make(x)); }, x0, h);
            CHECK(relative_error(analytic, fd) < 1e-6);
        };
        check_block(p.beta, [&](const Vector& x) { BodyParams q = p; q.beta = x; return q; }, g.beta);
        check_block(p.psi, [&](const Vector& x) { BodyParams q = p; q.psi = x; return q; }, g.psi);
        check_block(flatten(p.theta.body_pose),
                    [&](const Vector& x) { BodyParams q = p; q.theta.body_pose = unflatten(x); return q; },
                    flatten(g.body_pose));
        check_block(p.theta.root_orient,
                    [&](const Vector& x) { BodyParams q = p; q.theta.root_orient = x; return q; }, g.root_orient);
        check_block(p.theta.root_transl,
                    [&](const Vector& x) { BodyParams q = p; q.theta.root_transl = x; return q; }, g.root_transl);
    }
}

TEST_CASE("backward on a mutated model raises StaleTapeError") {
    TemplateModel m = make_toy_body(0, 4);
    const PosedMesh posed = lbs_forward(m, BodyParams::zero(m));
    m.shape_basis(0, 0) += 1.0;
    CHECK_THROWS_AS(lbs_backward(posed.tape, PointCloud::Zero(m.n_verts(), 3)), StaleTapeError);
}
