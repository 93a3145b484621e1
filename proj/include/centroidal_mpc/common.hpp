#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace centroidal_mpc {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using VectorX = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimensions or layouts that do not agree with each other.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Non-finite or otherwise unusable numeric input.
class InputError : public Error {
public:
    using Error::Error;
};

/// Time stepping produced a non-finite or divergent state.
class IntegrationError : public Error {
public:
    using Error::Error;
};

/// Reference to an entity (contact id, section, ...) that does not exist.
class LookupError : public Error {
public:
    using Error::Error;
};

/// Parameters that are individually parsable but invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Skew-symmetric matrix such that hat(a) * b == a.cross(b).
inline Matrix3 hat(const Vector3& a)
{
    Matrix3 m;
    m << 0.0, -a.z(), a.y(),
         a.z(), 0.0, -a.x(),
         -a.y(), a.x(), 0.0;
    return m;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m)
{
    return m.allFinite();
}

/// Rotation about the world z axis.
inline Matrix3 yaw_rotation(double yaw)
{
    return Eigen::AngleAxisd(yaw, Vector3::UnitZ()).toRotationMatrix();
}

inline bool is_rotation(const Matrix3& r, double tolerance = 1e-9)
{
    return (r.transpose() * r - Matrix3::Identity()).cwiseAbs().maxCoeff() <= tolerance
        && std::abs(r.determinant() - 1.0) <= tolerance;
}

}  // namespace centroidal_mpc
