#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/roots.hpp>

#include "frames.hpp"

namespace ibvs {

struct DroneParams {
  double m = 0.65;
  double l = 0.23;
  double b_f = 7.5e-7;
  double b_m = 3.13e-5;
  double ix = 7.5e-3;
  double iy = 7.5e-3;
  double iz = 1.3e-3;
  double g = 9.81;
  double omega_max = 2000.0;

  bool valid() const {
    return m > 0 && l > 0 && b_f > 0 && b_m > 0 && ix > 0 && iy > 0 && iz > 0 && g > 0 &&
           omega_max > 0;
  }
  double hover_thrust() const { return m * g; }
  double hover_omega() const { return std::sqrt(m * g / (4.0 * b_f)); }
};

/// 12-state rigid body, all quantities in FI. Body rates are integrated
/// directly into the Euler angles (small-angle rotational model).
template <class T> struct BasicDroneState {
  Vec3<T> pos = Vec3<T>::Zero();
  Vec3<T> vel = Vec3<T>::Zero();
  Vec3<T> eta = Vec3<T>::Zero();  // roll, pitch, yaw
  Vec3<T> omega = Vec3<T>::Zero();

  using Vector = Eigen::Matrix<T, 12, 1>;

  Vector to_vector() const {
    Vector v;
    v << pos, vel, eta, omega;
    return v;
  }
  static BasicDroneState from_vector(const Vector& v) {
    BasicDroneState s;
    s.pos = v.template segment<3>(0);
    s.vel = v.template segment<3>(3);
    s.eta = v.template segment<3>(6);
    s.omega = v.template segment<3>(9);
    return s;
  }
  EulerAngles<T> attitude() const { return {eta.x(), eta.y(), eta.z()}; }
  bool finite() const { return to_vector().allFinite(); }
};

using DroneState = BasicDroneState<double>;
using StateDerivative = DroneState::Vector;

struct RotorSpeeds {
  std::array<double, 4> w{};
};

struct ControlCommand {
  double u_t = 0;
  double u_phi = 0;
  double u_theta = 0;
  double u_psi = 0;
};

struct InfeasibleCommand : std::range_error {
  int rotor;
  explicit InfeasibleCommand(int r)
      : std::range_error("mixer_inverse: rotor " + std::to_string(r + 1) + " saturates"),
        rotor(r) {}
};

struct NonFiniteState : std::runtime_error {
  NonFiniteState() : std::runtime_error("step: non-finite state") {}
};

// Plus configuration: rotors 1 and 3 on the body x axis, 2 and 4 on the y axis.
// Roll and pitch torques use signed differences; the yaw row keeps the
// b_f/b_m scaling.
inline ControlCommand mixer_forward(const RotorSpeeds& o, const DroneParams& p) {
  const double s1 = o.w[0] * o.w[0], s2 = o.w[1] * o.w[1];
  const double s3 = o.w[2] * o.w[2], s4 = o.w[3] * o.w[3];
  ControlCommand c;
  c.u_t = p.b_f * (s1 + s2 + s3 + s4);
  c.u_phi = p.b_f * p.l * (s4 - s2);
  c.u_theta = p.b_f * p.l * (s3 - s1);
  c.u_psi = (p.b_f / p.b_m) * (-s1 + s2 - s3 + s4);
  return c;
}

/// Squared rotor speeds solving the mixer exactly (may be out of range).
inline std::array<double, 4> mixer_inverse_squared(const ControlCommand& c, const DroneParams& p) {
  const double sum = c.u_t / p.b_f;
  const double d_phi = c.u_phi / (p.b_f * p.l);
  const double d_theta = c.u_theta / (p.b_f * p.l);
  const double yaw = c.u_psi * p.b_m / p.b_f;
  const double odd = 0.5 * (sum - yaw);   // s1 + s3
  const double even = 0.5 * (sum + yaw);  // s2 + s4
  return {0.5 * (odd - d_theta), 0.5 * (even - d_phi), 0.5 * (odd + d_theta),
          0.5 * (even + d_phi)};
}

inline RotorSpeeds mixer_inverse(const ControlCommand& c, const DroneParams& p) {
  const auto sq = mixer_inverse_squared(c, p);
  const double max2 = p.omega_max * p.omega_max;
  RotorSpeeds r;
  for (int i = 0; i < 4; ++i) {
    // allow round-off at the bounds
    const double tol = 1e-9 * max2;
    if (sq[i] < -tol || sq[i] > max2 + tol) throw InfeasibleCommand(i);
    r.w[i] = std::sqrt(std::clamp(sq[i], 0.0, max2));
  }
  return r;
}

struct ClampedRotors {
  RotorSpeeds speeds;
  bool saturated = false;
  double torque_scale = 1;  // factor applied to the torque triple
};

/// Feasible rotor speeds closest in spirit to the command: thrust is clamped to
/// its range, then the torque triple is scaled down until every rotor fits.
inline ClampedRotors mixer_inverse_clamped(const ControlCommand& c, const DroneParams& p) {
  const double max2 = p.omega_max * p.omega_max;
  ClampedRotors out;
  ControlCommand base{std::clamp(c.u_t, 0.0, 4 * p.b_f * max2), 0, 0, 0};
  out.saturated = base.u_t != c.u_t;
  const auto b = mixer_inverse_squared(base, p);
  ControlCommand torque{0, c.u_phi, c.u_theta, c.u_psi};
  const auto d = mixer_inverse_squared(torque, p);
  double alpha = 1;
  for (int i = 0; i < 4; ++i) {
    if (b[i] + d[i] > max2) alpha = std::min(alpha, (max2 - b[i]) / d[i]);
    if (b[i] + d[i] < 0) alpha = std::min(alpha, -b[i] / d[i]);
  }
  alpha = std::max(alpha, 0.0);
  if (alpha < 1) out.saturated = true;
  out.torque_scale = alpha;
  for (int i = 0; i < 4; ++i) out.speeds.w[i] = std::sqrt(std::clamp(b[i] + alpha * d[i], 0.0, max2));
  return out;
}

template <class T>
typename BasicDroneState<T>::Vector quad_derivatives(const BasicDroneState<T>& s,
                                                      const ControlCommand& c,
                                                      const DroneParams& p) {
  using std::cos;
  using std::sin;
  const T phi = s.eta.x(), th = s.eta.y(), psi = s.eta.z();
  const T cf = cos(phi), sf = sin(phi), ct = cos(th), st = sin(th), cp = cos(psi), sp = sin(psi);
  const T a = T(c.u_t / p.m);
  const T wx = s.omega.x(), wy = s.omega.y(), wz = s.omega.z();
  typename BasicDroneState<T>::Vector d;
  d << s.vel,
       a * (cf * st * cp + sf * sp),
       a * (cf * st * sp - sf * cp),
       a * ct * cf - T(p.g),
       s.omega,
       (wy * wz * T(p.iy - p.iz) + T(c.u_phi)) / T(p.ix),
       (wx * wz * T(p.iz - p.ix) + T(c.u_theta)) / T(p.iy),
       (wy * wx * T(p.ix - p.iy) + T(c.u_psi)) / T(p.iz);
  return d;
}

/// One RK4 step with a command held constant over dt.
inline DroneState step(const DroneState& s, const ControlCommand& c, const DroneParams& p,
                       double dt) {
  if (!(dt > 0)) throw std::invalid_argument("step: dt must be positive");
  using V = DroneState::Vector;
  const V x = s.to_vector();
  auto f = [&](const V& v) { return quad_derivatives(DroneState::from_vector(v), c, p); };
  const V k1 = f(x);
  const V k2 = f(x + 0.5 * dt * k1);
  const V k3 = f(x + 0.5 * dt * k2);
  const V k4 = f(x + dt * k3);
  const V out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) throw NonFiniteState();
  return DroneState::from_vector(out);
}

// ---------------------------------------------------------------------------
// Car path: straight approach, lateral shift, hold, return shift, straight exit.
// The lateral offset is a half-cosine in each shift, so the path is C1.

struct PathConfig {
  double speed = 10.0;          // m/s
  double speed_factor = 1.0;    // multiplies speed after speedup_time
  double speedup_time = 0.0;    // s
  double lane_width = 3.5;      // m
  double approach = 150.0;      // m of straight road before the first shift
  double transition = 30.0;     // m per lateral shift
  double hold = 25.0;           // m in the passing lane
  double start_x = 0.0;         // FI
  double start_y = 0.0;
  double cg_height = 0.75;      // z of the chassis reference
};

struct CarState {
  Vec3d pos = Vec3d::Zero();  // FI
  double heading = 0;
  double speed = 0;
  double steering = 0;  // path curvature times wheelbase, diagnostic only
};

class CarPath {
 public:
  explicit CarPath(PathConfig cfg) : cfg_(cfg) {
    if (cfg_.speed <= 0 || cfg_.transition <= 0 || cfg_.hold < 0 || cfg_.approach < 0)
      throw std::invalid_argument("CarPath: bad geometry");
    seg_x_ = {cfg_.approach, cfg_.approach + cfg_.transition,
              cfg_.approach + cfg_.transition + cfg_.hold,
              cfg_.approach + 2 * cfg_.transition + cfg_.hold};
    shift_len_ = shift_arc(cfg_.transition);
    seg_s_ = {seg_x_[0], seg_x_[0] + shift_len_, seg_x_[0] + shift_len_ + cfg_.hold,
              seg_x_[0] + 2 * shift_len_ + cfg_.hold};
  }

  const PathConfig& config() const { return cfg_; }

  /// Longitudinal coordinate where the manoeuvre ends.
  double maneuver_end_x() const { return seg_x_[3]; }

  /// Lateral offset (FI y, relative to start) as a function of along-road x.
  double lateral(double x) const {
    const double w = cfg_.lane_width, L = cfg_.transition;
    if (x < seg_x_[0]) return 0;
    if (x < seg_x_[1]) return 0.5 * w * (1 - std::cos(M_PI * (x - seg_x_[0]) / L));
    if (x < seg_x_[2]) return w;
    if (x < seg_x_[3]) return 0.5 * w * (1 + std::cos(M_PI * (x - seg_x_[2]) / L));
    return 0;
  }

  double lateral_slope(double x) const {
    const double w = cfg_.lane_width, L = cfg_.transition;
    if (x >= seg_x_[0] && x < seg_x_[1]) return 0.5 * w * M_PI / L * std::sin(M_PI * (x - seg_x_[0]) / L);
    if (x >= seg_x_[2] && x < seg_x_[3]) return -0.5 * w * M_PI / L * std::sin(M_PI * (x - seg_x_[2]) / L);
    return 0;
  }

  double lateral_curvature(double x) const {
    const double w = cfg_.lane_width, L = cfg_.transition, k = M_PI / L;
    if (x >= seg_x_[0] && x < seg_x_[1]) return 0.5 * w * k * k * std::cos(k * (x - seg_x_[0]));
    if (x >= seg_x_[2] && x < seg_x_[3]) return -0.5 * w * k * k * std::cos(k * (x - seg_x_[2]));
    return 0;
  }

  /// Distance travelled along the path at time t.
  double arc_at(double t) const {
    const double v = cfg_.speed;
    if (t <= cfg_.speedup_time) return v * t;
    return v * cfg_.speedup_time + v * cfg_.speed_factor * (t - cfg_.speedup_time);
  }

  double speed_at(double t) const {
    return t <= cfg_.speedup_time ? cfg_.speed : cfg_.speed * cfg_.speed_factor;
  }

  /// Along-road x for a given arc length.
  double x_at_arc(double s) const {
    if (s <= seg_s_[0]) return s;
    if (s <= seg_s_[1]) return seg_x_[0] + invert_shift(s - seg_s_[0]);
    if (s <= seg_s_[2]) return seg_x_[1] + (s - seg_s_[1]);
    if (s <= seg_s_[3]) return seg_x_[2] + invert_shift(s - seg_s_[2]);
    return seg_x_[3] + (s - seg_s_[3]);
  }

  CarState at(double t) const {
    if (t < 0) throw std::invalid_argument("car_path: t < 0");
    const double x = x_at_arc(arc_at(t));
    CarState c;
    const double slope = lateral_slope(x);
    c.pos = Vec3d(cfg_.start_x + x, cfg_.start_y + lateral(x), cfg_.cg_height);
    c.heading = std::atan(slope);
    c.speed = speed_at(t);
    const double kappa = lateral_curvature(x) / std::pow(1 + slope * slope, 1.5);
    c.steering = std::atan(2.7 * kappa);
    return c;
  }

 private:
  // Arc length of one half-cosine shift from its start to along-road distance u.
  double shift_arc(double u) const {
    const double a = 0.5 * cfg_.lane_width * M_PI / cfg_.transition;
    const double k = M_PI / cfg_.transition;
    auto integrand = [a, k](double x) {
      const double d = a * std::sin(k * x);
      return std::sqrt(1 + d * d);
    };
    // composite Gauss-Legendre, 4 panels
    constexpr int panels = 4;
    double total = 0;
    const double h = u / panels;
    for (int i = 0; i < panels; ++i)
      total += boost::math::quadrature::gauss<double, 20>::integrate(integrand, i * h, (i + 1) * h);
    return total;
  }

  double invert_shift(double s) const {
    const double a = 0.5 * cfg_.lane_width * M_PI / cfg_.transition;
    const double k = M_PI / cfg_.transition;
    auto f = [&](double u) {
      const double d = a * std::sin(k * u);
      return std::make_pair(shift_arc(u) - s, std::sqrt(1 + d * d));
    };
    const double guess = std::clamp(s * cfg_.transition / shift_len_, 0.0, cfg_.transition);
    std::uintmax_t iters = 50;
    return boost::math::tools::newton_raphson_iterate(f, guess, 0.0, cfg_.transition, 50, iters);
  }

  PathConfig cfg_;
  std::array<double, 4> seg_x_{};
  std::array<double, 4> seg_s_{};
  double shift_len_ = 0;
};

inline CarState car_path(double t, const PathConfig& cfg) { return CarPath(cfg).at(t); }

}  // namespace ibvs
