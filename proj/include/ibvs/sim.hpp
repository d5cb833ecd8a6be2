#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "camera.hpp"
#include "config.hpp"
#include "control.hpp"
#include "dynamics.hpp"
#include "vision.hpp"

namespace ibvs {

enum class Scenario { Nominal, Distractor, HighSpeed, Custom };

struct InitialPose {
  double x = -15, y = 0, z = 4;  // FI
  double phi = 0, theta = 0, psi = 0;
  double vx = 10;  // forward speed at t = 0, m/s
};

struct DistractorConfig {
  bool enabled = false;
  double ahead = 5;      // m ahead of the target car along the road
  double lateral = -3.5; // m, FI y offset from the target's lane
  Rgb color{230, 200, 40};
};

struct VisionConfig {
  int margin = 60;
  long long min_area = 25;
  double loss_threshold = 0.05;
  int n_loss = 3;
  FuseMode fuse = FuseMode::Maximum;
};

struct SimConfig {
  Scenario scenario = Scenario::Nominal;
  DroneParams drone{};
  InitialPose init{};
  CameraIntrinsics camera{};
  MountConfig mount{0.2132, Vec3d::Zero()};
  double pixel_noise = 0;  // std-dev of additive RGB noise
  PathConfig path{};
  Vec3d car_size{4.2, 1.8, 1.5};
  Rgb car_color{200, 20, 20};
  DistractorConfig distractor{};
  ReferenceGains ref{};
  double area_ref = 0;  // 0: calibrate from the first detection
  double i_limit_psi = 2000, i_limit_theta = 500, i_limit_x = 4e5, i_limit_y = 100, i_limit_z = 10;
  IbGains ib{};
  AttitudeGains att{};
  VisionConfig vision{};
  bool actuator_clamp = true;
  double dt_physics = 5e-4;
  double frame_rate = 50;
  double duration = 60;
  double standoff = 15;  // nominal drone-car distance for metrics
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  int frame_every = 0;  // dump every k-th frame into <output_dir>/frames, 0 = off

  int substeps() const { return int(std::lround(1.0 / (frame_rate * dt_physics))); }
  int ticks() const { return int(std::ceil(duration * frame_rate - 1e-9)); }
  PosFI fvr_origin() const { return PosFI(path.start_x, path.start_y, path.cg_height); }

  void validate() const {
    if (!drone.valid()) throw ConfigError("drone parameters must be positive");
    if (!camera.valid()) throw ConfigError("invalid camera intrinsics");
    if (!(duration > 0)) throw ConfigError("duration must be positive");
    if (!(frame_rate > 0) || !(dt_physics > 0)) throw ConfigError("rates must be positive");
    const double period = 1.0 / frame_rate;
    if (std::abs(substeps() * dt_physics - period) > 1e-9 * period || substeps() < 1)
      throw ConfigError("dt_physics must divide the frame period");
  }

  static SimConfig from(const Config& c);
};

inline Scenario parse_scenario(const std::string& s) {
  if (s == "nominal") return Scenario::Nominal;
  if (s == "distractor") return Scenario::Distractor;
  if (s == "high-speed") return Scenario::HighSpeed;
  if (s == "custom") return Scenario::Custom;
  throw ConfigError("unknown scenario: " + s);
}

namespace detail {
inline Rgb parse_rgb(const std::string& s) {
  int r, g, b;
  char c1, c2;
  std::istringstream in(s);
  if (!(in >> r >> c1 >> g >> c2 >> b) || c1 != ',' || c2 != ',' || r < 0 || r > 255 || g < 0 || g > 255 ||
      b < 0 || b > 255)
    throw ConfigError("bad colour (want r,g,b): " + s);
  return {std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)};
}
inline std::string rgb_string(Rgb c) {
  return std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b);
}
}  // namespace detail

inline SimConfig SimConfig::from(const Config& c) {
  SimConfig s;
  s.scenario = parse_scenario(c.get_string("scenario", "nominal"));
  if (s.scenario == Scenario::Distractor) s.distractor.enabled = true;
  if (s.scenario == Scenario::HighSpeed) s.path.speed_factor = 2.5;

  auto& d = s.drone;
  d.m = c.get_double("drone.m", d.m);
  d.l = c.get_double("drone.l", d.l);
  d.b_f = c.get_double("drone.b_f", d.b_f);
  d.b_m = c.get_double("drone.b_m", d.b_m);
  d.ix = c.get_double("drone.ix", d.ix);
  d.iy = c.get_double("drone.iy", d.iy);
  d.iz = c.get_double("drone.iz", d.iz);
  d.g = c.get_double("drone.g", d.g);
  d.omega_max = c.get_double("drone.omega_max", d.omega_max);

  auto& i = s.init;
  i.x = c.get_double("init.x", i.x);
  i.y = c.get_double("init.y", i.y);
  i.z = c.get_double("init.z", i.z);
  i.phi = c.get_double("init.phi", i.phi);
  i.theta = c.get_double("init.theta", i.theta);
  i.psi = c.get_double("init.psi", i.psi);
  i.vx = c.get_double("init.vx", i.vx);

  auto& k = s.camera;
  k.width = int(c.get_int("camera.width", k.width));
  k.height = int(c.get_int("camera.height", k.height));
  k.f = c.get_double("camera.f", k.f);
  k.cu = c.get_double("camera.cu", k.width / 2.0);
  k.cv = c.get_double("camera.cv", k.height / 2.0);
  k.z_near = c.get_double("camera.z_near", k.z_near);
  s.mount.tilt = c.get_double("camera.tilt", s.mount.tilt);
  s.pixel_noise = c.get_double("camera.noise", s.pixel_noise);

  auto& p = s.path;
  p.speed = c.get_double("path.speed", p.speed);
  p.speed_factor = c.get_double("path.speed_factor", p.speed_factor);
  p.speedup_time = c.get_double("path.speedup_time", p.speedup_time);
  p.lane_width = c.get_double("path.lane_width", p.lane_width);
  p.approach = c.get_double("path.approach", p.approach);
  p.transition = c.get_double("path.transition", p.transition);
  p.hold = c.get_double("path.hold", p.hold);
  p.start_x = c.get_double("path.start_x", p.start_x);
  p.start_y = c.get_double("path.start_y", p.start_y);
  p.cg_height = c.get_double("path.cg_height", p.cg_height);
  s.car_size = Vec3d(c.get_double("car.length", s.car_size.x()), c.get_double("car.width", s.car_size.y()),
                     c.get_double("car.height", s.car_size.z()));
  s.car_color = detail::parse_rgb(c.get_string("car.color", detail::rgb_string(s.car_color)));

  auto& dc = s.distractor;
  dc.enabled = c.get_bool("distractor.enabled", dc.enabled);
  dc.ahead = c.get_double("distractor.ahead", dc.ahead);
  dc.lateral = c.get_double("distractor.lateral", dc.lateral);
  dc.color = detail::parse_rgb(c.get_string("distractor.color", detail::rgb_string(dc.color)));

  const std::string preset = c.get_string("gains", "tuned");
  if (preset == "literal") s.ref = ReferenceGains::literal();
  else if (preset != "tuned") throw ConfigError("gains must be tuned or literal");
  auto gain = [&](const std::string& name, double& v) { v = c.get_double(name, v); };
  gain("kp_psi_r", s.ref.psi.kp);
  gain("ki_psi_r", s.ref.psi.ki);
  gain("kp_theta_r", s.ref.theta.kp);
  gain("ki_theta_r", s.ref.theta.ki);
  gain("kp_x_r", s.ref.x.kp);
  gain("ki_x_r", s.ref.x.ki);
  gain("kp_y_r", s.ref.y.kp);
  gain("ki_y_r", s.ref.y.ki);
  gain("kp_z_r", s.ref.z.kp);
  gain("ki_z_r", s.ref.z.ki);
  gain("kd_z_r", s.ref.z.kd);
  const std::string xm = c.get_string("x_mode", s.ref.x_mode == XMode::Velocity ? "velocity" : "absolute");
  if (xm == "velocity") s.ref.x_mode = XMode::Velocity;
  else if (xm == "absolute") s.ref.x_mode = XMode::Absolute;
  else throw ConfigError("x_mode must be velocity or absolute");
  s.area_ref = c.get_double("area_ref", s.area_ref);
  s.i_limit_psi = c.get_double("i_limit_psi_r", s.i_limit_psi);
  s.i_limit_theta = c.get_double("i_limit_theta_r", s.i_limit_theta);
  s.i_limit_x = c.get_double("i_limit_x_r", s.i_limit_x);
  s.i_limit_y = c.get_double("i_limit_y_r", s.i_limit_y);
  s.i_limit_z = c.get_double("i_limit_z_r", s.i_limit_z);

  gain("kp_y_att", s.att.y.kp);
  gain("kd_y_att", s.att.y.kd);
  gain("kp_phi_att", s.att.phi.kp);
  gain("kd_phi_att", s.att.phi.kd);
  gain("kp_theta_att", s.att.theta.kp);
  gain("kd_theta_att", s.att.theta.kd);
  gain("kp_psi_att", s.att.psi.kp);
  gain("kd_psi_att", s.att.psi.kd);

  gain("ib.c1", s.ib.c1);
  gain("ib.c2", s.ib.c2);
  gain("ib.c3", s.ib.c3);
  gain("ib.c4", s.ib.c4);
  gain("ib.lambda1", s.ib.lambda1);
  gain("ib.lambda2", s.ib.lambda2);
  gain("ib.max_tilt", s.ib.max_tilt);
  gain("ib.ut_min", s.ib.ut_min);
  gain("ib.i_limit", s.ib.i_limit);

  auto& v = s.vision;
  v.margin = int(c.get_int("vision.margin", v.margin));
  v.min_area = c.get_int("vision.min_area", v.min_area);
  v.loss_threshold = c.get_double("vision.loss_threshold", v.loss_threshold);
  v.n_loss = int(c.get_int("vision.n_loss", v.n_loss));
  const std::string fuse = c.get_string("vision.fuse", "maximum");
  if (fuse == "maximum") v.fuse = FuseMode::Maximum;
  else if (fuse == "average") v.fuse = FuseMode::Average;
  else throw ConfigError("vision.fuse must be maximum or average");

  s.actuator_clamp = c.get_bool("actuator.clamp", s.actuator_clamp);
  s.dt_physics = c.get_double("dt_physics", s.dt_physics);
  s.frame_rate = c.get_double("frame_rate", s.frame_rate);
  s.duration = c.get_double("duration", s.duration);
  s.standoff = c.get_double("standoff", s.standoff);
  s.seed = std::uint64_t(c.get_int("seed", std::int64_t(s.seed)));
  s.output_dir = c.get_string("output.dir", s.output_dir);
  s.frame_every = int(c.get_int("output.frame_every", s.frame_every));
  if (s.frame_every < 0) throw ConfigError("output.frame_every must be >= 0");
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

struct SimLogRow {
  double t = 0;
  Vec3d drone_pos = Vec3d::Zero();
  Vec3d drone_eta = Vec3d::Zero();
  Vec3d car_pos = Vec3d::Zero();
  bool has_target = false;
  VisionError err{};
  ControlCommand cmd{};
  ReferenceSet refs{};
  IbOutput ib{};
  SelectorMode mode = SelectorMode::Detect;
  double confidence = 0;
  double standoff = 0;
};

inline const char* kLogHeader =
    "t,x_d,y_d,z_d,phi_d,theta_d,psi_d,x_car,y_car,z_car,has_target,e_u,e_v,area_bb,"
    "u_T,u_phi,u_theta,u_psi,x_r,y_r,z_r,psi_r,theta_r,theta_ref_ib,phi_ref_ib,mode,confidence,standoff";

inline std::string format_row(const SimLogRow& r) {
  std::string out;
  char buf[32];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.9g,", x);
    out += buf;
  };
  num(r.t);
  for (int i = 0; i < 3; ++i) num(r.drone_pos[i]);
  for (int i = 0; i < 3; ++i) num(r.drone_eta[i]);
  for (int i = 0; i < 3; ++i) num(r.car_pos[i]);
  out += r.has_target ? "1," : "0,";
  num(r.err.e_u);
  num(r.err.e_v);
  num(r.err.area);
  num(r.cmd.u_t);
  num(r.cmd.u_phi);
  num(r.cmd.u_theta);
  num(r.cmd.u_psi);
  num(r.refs.x_r);
  num(r.refs.y_r);
  num(r.refs.z_r);
  num(r.refs.psi_r);
  num(r.refs.theta_r);
  num(r.ib.theta_ref);
  num(r.ib.phi_ref);
  out += r.mode == SelectorMode::Track ? "track," : "detect,";
  num(r.confidence);
  std::snprintf(buf, sizeof buf, "%.9g", r.standoff);
  out += buf;
  return out;
}

struct RunMetrics {
  long long frames_total = 0;
  long long frames_tracked = 0;
  long long frames_no_target = 0;
  long long loss_events = 0;
  long long detector_calls = 0;
  long long distractor_hits = 0;
  long long distractor_visible = 0;  // frames with the distractor inside the image
  long long saturation_events = 0;
  long long pitch_violations = 0;
  long long thrust_guard_events = 0;
  double mean_abs_e_u = 0, max_abs_e_u = 0;
  double mean_abs_e_v = 0, max_abs_e_v = 0;
  double mean_standoff = 0, max_standoff = 0;
  double standoff_in_band = 0;  // fraction of frames within standoff +-20%
  double mean_area_error = 0;
  double area_ref = 0;
  bool aborted = false;
  double wall_seconds = 0;
};

inline std::string format_metrics(const RunMetrics& m) {
  std::ostringstream o;
  o.precision(9);
  o << "frames_total=" << m.frames_total << "\n"
    << "frames_tracked=" << m.frames_tracked << "\n"
    << "frames_no_target=" << m.frames_no_target << "\n"
    << "loss_events=" << m.loss_events << "\n"
    << "detector_calls=" << m.detector_calls << "\n"
    << "distractor_hits=" << m.distractor_hits << "\n"
    << "distractor_visible=" << m.distractor_visible << "\n"
    << "saturation_events=" << m.saturation_events << "\n"
    << "pitch_violations=" << m.pitch_violations << "\n"
    << "thrust_guard_events=" << m.thrust_guard_events << "\n"
    << "mean_abs_e_u=" << m.mean_abs_e_u << "\n"
    << "max_abs_e_u=" << m.max_abs_e_u << "\n"
    << "mean_abs_e_v=" << m.mean_abs_e_v << "\n"
    << "max_abs_e_v=" << m.max_abs_e_v << "\n"
    << "mean_standoff=" << m.mean_standoff << "\n"
    << "max_standoff=" << m.max_standoff << "\n"
    << "standoff_in_band=" << m.standoff_in_band << "\n"
    << "mean_area_error=" << m.mean_area_error << "\n"
    << "area_ref=" << m.area_ref << "\n"
    << "aborted=" << (m.aborted ? 1 : 0) << "\n";
  return o.str();
}

struct SimOutputs {
  std::string log_path;     // empty: no CSV
  std::string frame_dir;    // empty: no frames
  int frame_every = 0;
  std::function<void(int, const Frame&)> on_frame;  // optional observer
  std::vector<SimLogRow>* rows = nullptr;           // optional in-memory log
};

inline std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.ppm", index);
  return buf;
}

namespace detail {

// Detector wrapper that remembers the raw boxes of its last call.
struct RecordingDetector {
  const ColorBlobDetector* inner;
  mutable std::vector<BoundingBox> last;
  std::vector<BoundingBox> detect(const Frame& f) const {
    last = inner->detect(f);
    return last;
  }
};

inline std::optional<BoundingBox> projected_box(const SceneBox& b, const CameraIntrinsics& k, const CameraPose& p) {
  double l = 1e300, t = 1e300, r = -1e300, bo = -1e300;
  for (const auto& c : b.corners()) {
    auto px = project(c, k, p);
    if (!px) return std::nullopt;
    l = std::min(l, px->u);
    r = std::max(r, px->u);
    t = std::min(t, px->v);
    bo = std::max(bo, px->v);
  }
  return BoundingBox::from_edges(l, t, r, bo);
}

}  // namespace detail

/// Scene at time t: the target car and, if enabled, the distractor.
inline SceneModel build_scene(const SimConfig& cfg, const CarPath& path, double t) {
  SceneModel scene;
  const CarState car = path.at(t);
  scene.boxes.push_back({car.pos, cfg.car_size, car.heading, cfg.car_color});
  if (cfg.distractor.enabled) {
    const double x = path.x_at_arc(path.arc_at(t)) + cfg.distractor.ahead;
    SceneBox d;
    d.center = Vec3d(cfg.path.start_x + x, cfg.path.start_y + cfg.distractor.lateral, cfg.path.cg_height);
    d.size = cfg.car_size;
    d.color = cfg.distractor.color;
    scene.boxes.push_back(d);
  }
  return scene;
}

inline void add_noise(Frame& f, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& p : f.pixels) p = std::uint8_t(std::clamp(std::lround(p + n(rng)), 0L, 255L));
}

/// Closed loop: render, select, reference generator and IB at frame rate,
/// PD loops and RK4 at dt_physics.
inline RunMetrics run_simulation(const SimConfig& cfg, const SimOutputs& out = {}) {
  cfg.validate();
  const auto wall0 = std::chrono::steady_clock::now();
  const CarPath path(cfg.path);
  const PosFI origin = cfg.fvr_origin();
  const DroneParams& dp = cfg.drone;
  const double frame_dt = 1.0 / cfg.frame_rate;
  const int sub = cfg.substeps();
  const int n = cfg.ticks();

  DroneState s;
  s.pos = Vec3d(cfg.init.x, cfg.init.y, cfg.init.z);
  s.eta = Vec3d(cfg.init.phi, cfg.init.theta, cfg.init.psi);
  s.vel = Vec3d(cfg.init.vx * std::cos(cfg.init.psi), cfg.init.vx * std::sin(cfg.init.psi), 0);

  const PosFVR start = fi_to_fvr(PosFI(s.pos), origin);
  const ReferenceAnchor anchor{start.x(), start.y(), start.z()};
  ReferenceSet refs;
  refs.x_r = anchor.x;
  refs.y_r = anchor.y;
  refs.z_r = anchor.z;
  refs.area_ref = cfg.area_ref;
  ReferenceBanks banks{PidState::limited(cfg.i_limit_psi), PidState::limited(cfg.i_limit_theta),
                       PidState::limited(cfg.i_limit_x), PidState::limited(cfg.i_limit_y),
                       PidState::limited(cfg.i_limit_z)};
  if (cfg.ref.x_mode == XMode::Velocity && cfg.ref.x.ki > 0)
    banks.x.integral = std::clamp(cfg.init.vx / cfg.ref.x.ki, banks.x.i_min, banks.x.i_max);

  IbState ibs;
  AttitudeBanks att;
  att.y.prev_error = 0;
  double u_t_last = dp.hover_thrust();

  const ColorBlobDetector color{cfg.vision.margin, BlobCriteria{cfg.vision.min_area}};
  const detail::RecordingDetector detector{&color, {}};
  SelectorConfig sel_cfg;
  sel_cfg.fuse = cfg.vision.fuse;
  sel_cfg.n_loss = cfg.vision.n_loss;
  sel_cfg.camshift.loss_threshold = cfg.vision.loss_threshold;
  SelectorState sel;
  std::mt19937_64 rng(cfg.seed);

  std::ofstream log;
  if (!out.log_path.empty()) {
    log.open(out.log_path);
    if (!log) throw IoError("cannot write " + out.log_path);
    log << kLogHeader << "\n";
  }
  if (!out.frame_dir.empty()) std::filesystem::create_directories(out.frame_dir);

  RunMetrics m;
  double sum_eu = 0, sum_ev = 0, sum_area = 0, sum_standoff = 0;
  long long in_band = 0;

  for (int k = 0; k < n; ++k) {
    const double t = k * frame_dt;
    const CarState car = path.at(t);
    const SceneModel scene = build_scene(cfg, path, t);
    const CameraPose pose = camera_pose_from_drone(s, cfg.mount);
    Frame frame = render(scene, cfg.camera, pose);
    if (cfg.pixel_noise > 0) add_noise(frame, cfg.pixel_noise, rng);
    if (!out.frame_dir.empty() && out.frame_every > 0 && k % out.frame_every == 0)
      write_ppm((std::filesystem::path(out.frame_dir) / frame_name(k)).string(), frame);
    if (out.on_frame) out.on_frame(k, frame);

    const bool detecting = sel.mode == SelectorMode::Detect;
    detector.last.clear();
    const auto box = target_select(sel, frame, detector, sel_cfg);

    if (cfg.distractor.enabled) {
      const auto car_px = detail::projected_box(scene.boxes[0], cfg.camera, pose);
      const auto dis_px = detail::projected_box(scene.boxes[1], cfg.camera, pose);
      auto on_distractor = [&](const BoundingBox& b) {
        return dis_px && dis_px->contains(b.u, b.v) && !(car_px && car_px->contains(b.u, b.v));
      };
      if (dis_px && iou(clip_box(*dis_px, cfg.camera.width, cfg.camera.height),
                        BoundingBox{cfg.camera.width / 2.0, cfg.camera.height / 2.0, double(cfg.camera.width),
                                    double(cfg.camera.height)}) > 0)
        ++m.distractor_visible;
      if (detecting)
        for (const auto& b : detector.last) m.distractor_hits += on_distractor(b);
      if (box && !detecting) m.distractor_hits += on_distractor(*box);
    }

    SimLogRow row;
    row.t = t;
    row.drone_pos = s.pos;
    row.drone_eta = s.eta;
    row.car_pos = car.pos;
    row.has_target = box.has_value();
    row.mode = sel.mode;
    row.confidence = sel.confidence;
    row.standoff = (s.pos - car.pos).norm();

    ++m.frames_total;
    if (box) {
      ++m.frames_tracked;
      const VisionError err = distance_vector(*box, cfg.camera);
      if (refs.area_ref <= 0) refs.area_ref = err.area;
      refs = reference_step(err, refs, banks, cfg.ref, anchor, frame_dt);
      row.err = err;
      sum_eu += std::abs(err.e_u);
      sum_ev += std::abs(err.e_v);
      sum_area += std::abs(err.area - refs.area_ref);
      m.max_abs_e_u = std::max(m.max_abs_e_u, std::abs(err.e_u));
      m.max_abs_e_v = std::max(m.max_abs_e_v, std::abs(err.e_v));
    } else {
      ++m.frames_no_target;
    }
    sum_standoff += row.standoff;
    m.max_standoff = std::max(m.max_standoff, row.standoff);
    if (std::abs(row.standoff - cfg.standoff) <= 0.2 * cfg.standoff) ++in_band;

    // Position errors in the heading frame; lateral is positive to the drone's left.
    const PosFI ref_fi = fvr_to_fi(PosFVR(refs.x_r, refs.y_r, refs.z_r), origin);
    const double ex = ref_fi.x() - s.pos.x(), ey = ref_fi.y() - s.pos.y();
    const double cp = std::cos(s.eta.z()), sp = std::sin(s.eta.z());
    IbOutput ib;
    try {
      ib = ib_attitude_refs(cp * ex + sp * ey, -sp * ex + cp * ey, ibs, cfg.ib, u_t_last, dp.m, frame_dt);
    } catch (const ThrustTooLow&) {
      ++m.thrust_guard_events;
    }
    row.refs = refs;
    row.ib = ib;

    const AttitudeRefs ar{ib.theta_ref, ib.phi_ref, cfg.init.psi + refs.psi_r, refs.y_r};
    try {
      for (int j = 0; j < sub; ++j) {
        const AttitudeMeas meas{s.eta.y(), s.eta.x(), s.eta.z(), s.pos.z() - origin.z()};
        ControlCommand cmd = attitude_command_step(ar, meas, att, cfg.att, cfg.dt_physics, dp.hover_thrust());
        if (cfg.actuator_clamp) {
          const auto cr = mixer_inverse_clamped(cmd, dp);
          if (cr.saturated) ++m.saturation_events;
          cmd = mixer_forward(cr.speeds, dp);
        }
        if (j == 0) row.cmd = cmd;
        s = step(s, cmd, dp, cfg.dt_physics);
        if (std::abs(s.eta.y()) >= M_PI / 2 - 1e-3) ++m.pitch_violations;
        u_t_last = cmd.u_t;
      }
    } catch (const NonFiniteState&) {
      m.aborted = true;
      if (out.rows) out.rows->push_back(row);
      if (log) {
        log << format_row(row) << "\n";
        log << "# aborted: non-finite state at t=" << t << "\n";
      }
      break;
    }
    if (out.rows) out.rows->push_back(row);
    if (log) log << format_row(row) << "\n";
  }

  m.loss_events = sel.loss_events;
  m.detector_calls = sel.detector_calls;
  m.area_ref = refs.area_ref;
  if (m.frames_tracked) {
    m.mean_abs_e_u = sum_eu / m.frames_tracked;
    m.mean_abs_e_v = sum_ev / m.frames_tracked;
    m.mean_area_error = sum_area / m.frames_tracked;
  }
  if (m.frames_total) {
    m.mean_standoff = sum_standoff / m.frames_total;
    m.standoff_in_band = double(in_band) / m.frames_total;
  }
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return m;
}

// ---------------------------------------------------------------------------
// Dataset acquisition and detector evaluation

struct AcquisitionConfig {
  double r = 15;
  int n_alpha = 12;
  int n_beta = 4;
  SweepMode mode = SweepMode::Grid;
  double turns = 8;
  int negative_ratio = 2;
  std::string out_dir = "dataset";
  CameraIntrinsics camera{};
  PathConfig path{};
  Vec3d car_size{4.2, 1.8, 1.5};
  Rgb car_color{200, 20, 20};
  CropConfig crop{};

  static AcquisitionConfig from(const Config& c) {
    AcquisitionConfig a;
    a.r = c.get_double("acquire.r", a.r);
    a.n_alpha = int(c.get_int("acquire.n_alpha", a.n_alpha));
    a.n_beta = int(c.get_int("acquire.n_beta", a.n_beta));
    const std::string mode = c.get_string("acquire.mode", "grid");
    if (mode == "grid") a.mode = SweepMode::Grid;
    else if (mode == "spiral") a.mode = SweepMode::Spiral;
    else throw ConfigError("acquire.mode must be grid or spiral");
    a.turns = c.get_double("acquire.turns", a.turns);
    a.negative_ratio = int(c.get_int("acquire.negative_ratio", a.negative_ratio));
    a.out_dir = c.get_string("acquire.out", a.out_dir);
    a.crop.criteria.min_area = c.get_int("vision.min_area", a.crop.criteria.min_area);
    // share camera/car keys with the simulator
    const SimConfig s = SimConfig::from(c);
    a.camera = s.camera;
    a.path = s.path;
    a.car_size = s.car_size;
    a.car_color = s.car_color;
    if (!(a.r > 0) || a.n_alpha < 1 || a.n_beta < 1 || a.negative_ratio < 0)
      throw ConfigError("bad acquisition parameters");
    return a;
  }
};

struct AcquisitionReport {
  long long positives = 0;
  long long negatives = 0;
  long long roi_rows = 0;
  long long crop_failures = 0;
  double mean_roi_area = 0;
};

inline const char* kRoiHeader = "frame_index,u_bb,v_bb,w_bb,h_bb";

inline AcquisitionReport acquire_dataset(const AcquisitionConfig& a) {
  namespace fs = std::filesystem;
  const fs::path root(a.out_dir);
  fs::create_directories(root / "positive");
  fs::create_directories(root / "negative");
  const PosFI origin(a.path.start_x, a.path.start_y, a.path.cg_height);
  const PosFVR target(0, 0, 0);

  SceneModel with_car;
  with_car.boxes.push_back({origin.v, a.car_size, 0.0, a.car_color});
  const SceneModel empty;

  AcquisitionReport rep;
  std::ofstream roi(root / "roi.csv");
  if (!roi) throw IoError("cannot write roi.csv");
  roi << kRoiHeader << "\n";
  double area_sum = 0;
  const auto poses = spherical_acquisition_poses(a.r, a.n_alpha, a.n_beta, target, a.mode, a.turns);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const CameraPose cam = acquisition_camera(poses[i], target, origin);
    const Frame f = render(with_car, a.camera, cam);
    write_ppm((root / "positive" / frame_name(int(i))).string(), f);
    ++rep.positives;
    const auto box = crop_roi(f, a.crop);
    if (!box) {
      ++rep.crop_failures;
      continue;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", i, box->u, box->v, box->w, box->h);
    roi << buf;
    ++rep.roi_rows;
    area_sum += box->area();
  }
  // negatives: the same sphere, denser in azimuth, with the car removed
  if (a.negative_ratio > 0) {
    const auto neg = spherical_acquisition_poses(a.r, a.n_alpha * a.negative_ratio, a.n_beta, target, a.mode,
                                                 a.turns * a.negative_ratio);
    for (std::size_t i = 0; i < neg.size(); ++i) {
      const Frame f = render(empty, a.camera, acquisition_camera(neg[i], target, origin));
      write_ppm((root / "negative" / frame_name(int(i))).string(), f);
      ++rep.negatives;
    }
  }
  if (rep.roi_rows) rep.mean_roi_area = area_sum / rep.roi_rows;
  return rep;
}

struct DatasetFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RoiRow {
  int frame_index = 0;
  BoundingBox box;
};

inline std::vector<RoiRow> read_roi_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetFormatError("missing " + path);
  std::string line;
  if (!std::getline(in, line) || line != kRoiHeader) throw DatasetFormatError("bad ROI header in " + path);
  std::vector<RoiRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    RoiRow r;
    char c1, c2, c3, c4;
    if (!(ls >> r.frame_index >> c1 >> r.box.u >> c2 >> r.box.v >> c3 >> r.box.w >> c4 >> r.box.h) || c1 != ',' ||
        c2 != ',' || c3 != ',' || c4 != ',' || r.frame_index < 0 || r.box.w <= 0 || r.box.h <= 0)
      throw DatasetFormatError(path + ":" + std::to_string(lineno) + ": malformed row");
    ls >> std::ws;
    if (!ls.eof()) throw DatasetFormatError(path + ":" + std::to_string(lineno) + ": trailing data");
    rows.push_back(r);
  }
  return rows;
}

struct EvaluationReport {
  long long positives = 0;  // frames with ground truth
  long long hits = 0;
  double detection_rate = 0;
  double mean_iou = 0;
  long long negatives = 0;
  long long false_positives = 0;
};

inline std::string format_report(const EvaluationReport& r) {
  std::ostringstream o;
  o.precision(9);
  o << "positives=" << r.positives << "\nhits=" << r.hits << "\ndetection_rate=" << r.detection_rate
    << "\nmean_iou=" << r.mean_iou << "\nnegatives=" << r.negatives << "\nfalse_positives=" << r.false_positives
    << "\n";
  return o.str();
}

template <Detector D>
EvaluationReport evaluate_detector(const std::string& dataset, const D& detector, double iou_threshold = 0.5,
                                   FuseMode fuse = FuseMode::Maximum) {
  namespace fs = std::filesystem;
  const fs::path root(dataset);
  if (!fs::is_directory(root)) throw DatasetFormatError("no dataset at " + dataset);
  EvaluationReport rep;
  double iou_sum = 0;
  for (const auto& row : read_roi_csv((root / "roi.csv").string())) {
    const fs::path p = root / "positive" / frame_name(row.frame_index);
    if (!fs::exists(p)) throw DatasetFormatError("missing frame " + p.string());
    const auto fused = fuse_boxes(detector.detect(read_ppm(p.string())), fuse);
    const double v = fused ? iou(*fused, row.box) : 0.0;
    ++rep.positives;
    iou_sum += v;
    if (v >= iou_threshold) ++rep.hits;
  }
  if (fs::is_directory(root / "negative")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root / "negative"))
      if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ++rep.negatives;
      rep.false_positives += (long long)detector.detect(read_ppm(f.string())).size();
    }
  }
  if (rep.positives) {
    rep.detection_rate = double(rep.hits) / rep.positives;
    rep.mean_iou = iou_sum / rep.positives;
  }
  return rep;
}

}  // namespace ibvs
