#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>

namespace avatar_forge {

template <class Scalar>
Eigen::Matrix<Scalar, 3, 3> skew(const Eigen::Matrix<Scalar, 3, 1>& v) {
    Eigen::Matrix<Scalar, 3, 3> k;
    k << Scalar(0), -v.z(), v.y(),  //
        v.z(), Scalar(0), -v.x(),   //
        -v.y(), v.x(), Scalar(0);
    return k;
}

// Axis-angle rotation expressed as its deviation from identity, S = R - I,
// together with dS/dr_i. Keeping S instead of R makes the identity rotation
// produce exact zeros, which the skinning code relies on.
template <class Scalar>
struct RotationDeviation {
    Eigen::Matrix<Scalar, 3, 3> S;
    std::array<Eigen::Matrix<Scalar, 3, 3>, 3> dS;

    Eigen::Matrix<Scalar, 3, 3> rotation() const {
        return S + Eigen::Matrix<Scalar, 3, 3>::Identity();
    }
};

// Below this angle both value and derivative use the second-order expansion
// R = I + K + K^2/2.
inline constexpr double kSmallAngle = 1e-8;

template <class Scalar>
RotationDeviation<Scalar> rodrigues(const Eigen::Matrix<Scalar, 3, 1>& r) {
    using Mat = Eigen::Matrix<Scalar, 3, 3>;
    const Scalar theta2 = r.squaredNorm();
    const Scalar theta = std::sqrt(theta2);
    const Mat K = skew<Scalar>(r);
    const Mat K2 = K * K;

    // R = I + a K + b K^2, with a = sin(t)/t, b = (1 - cos t)/t^2.
    // da/dr_i = ca * r_i, db/dr_i = cb * r_i.
    Scalar a, b, ca, cb;
    if (theta < Scalar(kSmallAngle)) {
        a = Scalar(1);
        b = Scalar(0.5);
        ca = Scalar(0);
        cb = Scalar(0);
    } else if (theta < Scalar(1e-2)) {
        const Scalar t4 = theta2 * theta2;
        a = Scalar(1) - theta2 / Scalar(6) + t4 / Scalar(120);
        b = Scalar(0.5) - theta2 / Scalar(24) + t4 / Scalar(720);
        ca = Scalar(-1) / Scalar(3) + theta2 / Scalar(30) - t4 / Scalar(840);
        cb = Scalar(-1) / Scalar(12) + theta2 / Scalar(180) - t4 / Scalar(6720);
    } else {
        const Scalar s = std::sin(theta), c = std::cos(theta);
        a = s / theta;
        b = (Scalar(1) - c) / theta2;
        ca = (theta * c - s) / (theta2 * theta);
        cb = (theta * s - Scalar(2) * (Scalar(1) - c)) / (theta2 * theta2);
    }

    RotationDeviation<Scalar> out;
    out.S = a * K + b * K2;
    for (int i = 0; i < 3; ++i) {
        Eigen::Matrix<Scalar, 3, 1> e = Eigen::Matrix<Scalar, 3, 1>::Zero();
        e(i) = Scalar(1);
        const Mat E = skew<Scalar>(e);
        out.dS[i] = ca * r(i) * K + a * E + cb * r(i) * K2 + b * (E * K + K * E);
    }
    return out;
}

// Contract a gradient on S with dS/dr: returns dL/dr.
template <class Scalar>
Eigen::Matrix<Scalar, 3, 1> rodrigues_pullback(const RotationDeviation<Scalar>& rot,
                                              const Eigen::Matrix<Scalar, 3, 3>& grad_S) {
    Eigen::Matrix<Scalar, 3, 1> g;
    for (int i = 0; i < 3; ++i) g(i) = (rot.dS[i].array() * grad_S.array()).sum();
    return g;
}

}  // namespace avatar_forge
