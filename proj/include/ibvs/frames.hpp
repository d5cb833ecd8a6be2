#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ibvs {

template <class T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T> using Mat3 = Eigen::Matrix<T, 3, 3>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

/// ZYX Euler angles (roll about x, pitch about y, yaw about z).
template <class T> struct EulerAngles {
  T roll{};
  T pitch{};
  T yaw{};
};

using Euler = EulerAngles<double>;

struct GimbalLock : std::domain_error {
  GimbalLock() : std::domain_error("dcm_to_euler: gimbal lock (|R31| too close to 1)") {}
};

struct NonUnitAxis : std::invalid_argument {
  NonUnitAxis() : std::invalid_argument("rodrigues: axis is not unit length") {}
};

inline constexpr double kGimbalTol = 1e-9;

/// Body to inertial rotation, R = Rz(yaw) * Ry(pitch) * Rx(roll).
/// Matrices are column-vector convention: v_inertial = R * v_body.
template <class T> Mat3<T> euler_to_dcm(const EulerAngles<T>& e) {
  using std::cos;
  using std::sin;
  const T cf = cos(e.roll), sf = sin(e.roll);
  const T ct = cos(e.pitch), st = sin(e.pitch);
  const T cp = cos(e.yaw), sp = sin(e.yaw);
  Mat3<T> r;
  r << cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf,
       sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf,
       -st, ct * sf, ct * cf;
  return r;
}

template <class T> EulerAngles<T> dcm_to_euler(const Mat3<T>& r) {
  using std::abs;
  using std::asin;
  using std::atan2;
  if (abs(r(2, 0)) >= T(1) - T(kGimbalTol)) throw GimbalLock();
  EulerAngles<T> e;
  e.pitch = -asin(r(2, 0));
  e.roll = atan2(r(2, 1), r(2, 2));
  e.yaw = atan2(r(1, 0), r(0, 0));
  return e;
}

template <class T> Mat3<T> skew(const Vec3<T>& a) {
  Mat3<T> k;
  k << T(0), -a.z(), a.y(),
       a.z(), T(0), -a.x(),
       -a.y(), a.x(), T(0);
  return k;
}

template <class T> Mat3<T> rodrigues(const Vec3<T>& axis, T angle) {
  using std::abs;
  if (abs(axis.norm() - T(1)) > T(1e-9)) throw NonUnitAxis();
  const Mat3<T> k = skew(axis);
  return Mat3<T>::Identity() + std::sin(angle) * k + (T(1) - std::cos(angle)) * (k * k);
}

inline Mat3d rot_x(double a) { return rodrigues<double>(Vec3d::UnitX(), a); }
inline Mat3d rot_y(double a) { return rodrigues<double>(Vec3d::UnitY(), a); }
inline Mat3d rot_z(double a) { return rodrigues<double>(Vec3d::UnitZ(), a); }

// Coordinate frames. FI is the z-up inertial frame; FVR is the y-up world frame
// of the renderer, centred on the car's initial centre of gravity.
enum class FrameTag { FI, FVR };

/// A position carrying its frame in the type, so FI and FVR values never mix.
template <FrameTag Tag> struct Position {
  Vec3d v = Vec3d::Zero();

  Position() = default;
  explicit Position(const Vec3d& p) : v(p) {}
  Position(double x, double y, double z) : v(x, y, z) {}

  static constexpr FrameTag tag = Tag;

  double x() const { return v.x(); }
  double y() const { return v.y(); }
  double z() const { return v.z(); }

  Position operator+(const Vec3d& d) const { return Position(v + d); }
  Vec3d operator-(const Position& o) const { return v - o.v; }
  bool operator==(const Position& o) const { return v == o.v; }
};

using PosFI = Position<FrameTag::FI>;
using PosFVR = Position<FrameTag::FVR>;

inline PosFVR fi_to_fvr(const PosFI& p, const PosFI& origin) {
  const Vec3d d = p.v - origin.v;
  return PosFVR(d.x(), d.z(), -d.y());
}

inline PosFI fvr_to_fi(const PosFVR& p, const PosFI& origin) {
  return PosFI(Vec3d(p.x(), -p.z(), p.y()) + origin.v);
}

/// Wrap an angle into [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

}  // namespace ibvs
