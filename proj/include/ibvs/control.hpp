#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dynamics.hpp"
#include "vision.hpp"

namespace ibvs {

struct PidGains {
  double kp = 0;
  double ki = 0;
  double kd = 0;
};

struct PidState {
  double integral = 0;
  double prev_error = 0;
  double i_min = -std::numeric_limits<double>::infinity();
  double i_max = std::numeric_limits<double>::infinity();

  static PidState limited(double lim) { return {0, 0, -lim, lim}; }
};

/// Discrete PID: the integral includes the current sample, the derivative is a
/// backward difference against the previous error (zero for a fresh state).
inline double pid_step(PidState& s, const PidGains& g, double e, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("pid_step: dt must be positive");
  s.integral = std::clamp(s.integral + e * dt, s.i_min, s.i_max);
  const double d = (e - s.prev_error) / dt;
  s.prev_error = e;
  return g.kp * e + g.ki * s.integral + g.kd * d;
}

// ---------------------------------------------------------------------------
// Reference generator: visual errors to (x_r, y_r, z_r, psi_r, theta_r) in FVR.

enum class XMode {
  Absolute,  // x_r = x_init + PI(area error)
  Velocity   // x_r advances by dt * PI(area error)
};

struct ReferenceSet {
  double x_r = 0, y_r = 0, z_r = 0;
  double psi_r = 0, theta_r = 0;
  double psi_ref_r = 0, theta_ref_r = 0;
  double area_ref = 0;
};

struct ReferenceGains {
  PidGains psi{1e-5, 1e-3, 0};
  PidGains theta{1e-5, 1e-3, 0};
  PidGains x{5.5e-4, 1e-4, 0};
  PidGains y{1e-2, 1e-2, 0};
  PidGains z{2.0, 0.3, 0};
  XMode x_mode = XMode::Velocity;

  /// The heuristic values of the original controller, applied verbatim.
  static ReferenceGains literal() {
    ReferenceGains g;
    g.x = {1e-6, 6e-6, 0};
    g.z = {15, 57.5, 3.75};
    g.x_mode = XMode::Absolute;
    return g;
  }
};

struct ReferenceBanks {
  PidState psi, theta, x, y, z;
};

/// Anchors of the position references (initial drone pose in FVR).
struct ReferenceAnchor {
  double x = 0, y = 0, z = 0;
};

inline ReferenceSet reference_step(const VisionError& err, ReferenceSet refs, ReferenceBanks& banks,
                                   const ReferenceGains& g, const ReferenceAnchor& anchor, double dt) {
  refs.psi_r = pid_step(banks.psi, g.psi, err.e_u, dt);
  // turning left (psi > 0) moves the drone towards -z in FVR
  refs.z_r = anchor.z - pid_step(banks.z, g.z, refs.psi_r - refs.psi_ref_r, dt);
  refs.theta_r = pid_step(banks.theta, g.theta, err.e_v, dt);
  refs.y_r = anchor.y + pid_step(banks.y, g.y, refs.theta_r - refs.theta_ref_r, dt);
  const double ux = pid_step(banks.x, g.x, refs.area_ref - err.area, dt);
  if (g.x_mode == XMode::Absolute)
    refs.x_r = anchor.x + ux;
  else
    refs.x_r += dt * ux;
  return refs;
}

// ---------------------------------------------------------------------------
// Integral backstepping position-to-attitude law.

struct IbGains {
  double c1 = 2, c2 = 0.5, c3 = 2, c4 = 0.5;
  double lambda1 = 0.025, lambda2 = 0.025;
  double max_tilt = 0.5;  // rad
  double ut_min = 0.1;    // N
  double i_limit = 50;    // m*s
};

/// Integrals use the value before the current sample (forward Euler), and the
/// first call has no derivative.
struct IbState {
  double ix = 0, iz = 0;
  double prev_ex = 0, prev_ez = 0;
  bool has_prev = false;
  double ex_ib = 0, ez_ib = 0;
};

struct ThrustTooLow : std::domain_error {
  ThrustTooLow() : std::domain_error("ib_attitude_refs: thrust below minimum") {}
};

struct IbOutput {
  double theta_ref = 0;
  double phi_ref = 0;
};

inline IbOutput ib_attitude_refs(double e_x, double e_z, IbState& s, const IbGains& g, double u_t, double m,
                                 double dt) {
  if (u_t <= g.ut_min) throw ThrustTooLow();
  const double dex = s.has_prev ? (e_x - s.prev_ex) / dt : 0;
  const double dez = s.has_prev ? (e_z - s.prev_ez) / dt : 0;
  s.ex_ib = g.lambda1 * s.ix + g.c1 * e_x + dex;
  s.ez_ib = g.lambda2 * s.iz + g.c3 * e_z + dez;
  const double k = m / u_t;
  IbOutput o;
  o.theta_ref = k * ((1 - g.c1 * g.c1 + g.lambda1) * e_x + (g.c1 + g.c2) * s.ex_ib - g.c1 * g.lambda1 * s.ix);
  o.phi_ref = -k * ((1 - g.c3 * g.c3 + g.lambda2) * e_z + (g.c3 + g.c4) * s.ez_ib - g.c3 * g.lambda2 * s.iz);
  o.theta_ref = std::clamp(o.theta_ref, -g.max_tilt, g.max_tilt);
  o.phi_ref = std::clamp(o.phi_ref, -g.max_tilt, g.max_tilt);
  s.ix = std::clamp(s.ix + e_x * dt, -g.i_limit, g.i_limit);
  s.iz = std::clamp(s.iz + e_z * dt, -g.i_limit, g.i_limit);
  s.prev_ex = e_x;
  s.prev_ez = e_z;
  s.has_prev = true;
  return o;
}

// ---------------------------------------------------------------------------
// PD attitude and altitude loops.

struct AttitudeGains {
  PidGains y{1000, 0, 200};
  PidGains phi{8, 0, 4};
  PidGains theta{12, 0, 4};
  PidGains psi{10, 0, 4};
};

struct AttitudeBanks {
  PidState y, phi, theta, psi;
};

struct AttitudeRefs {
  double theta = 0, phi = 0, psi = 0, y = 0;
};

struct AttitudeMeas {
  double theta = 0, phi = 0, psi = 0, y = 0;
};

inline ControlCommand attitude_command_step(const AttitudeRefs& r, const AttitudeMeas& m, AttitudeBanks& b,
                                            const AttitudeGains& g, double dt, double feedforward) {
  ControlCommand c;
  c.u_theta = pid_step(b.theta, g.theta, r.theta - m.theta, dt);
  c.u_phi = pid_step(b.phi, g.phi, r.phi - m.phi, dt);
  c.u_psi = pid_step(b.psi, g.psi, wrap_angle(r.psi - m.psi), dt);
  c.u_t = std::max(0.0, pid_step(b.y, g.y, r.y - m.y, dt) + feedforward);
  return c;
}

}  // namespace ibvs
