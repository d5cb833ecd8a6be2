#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "frames.hpp"

namespace ibvs {

struct CameraIntrinsics {
  double f = 554.0;
  double cu = 320.0;
  double cv = 240.0;
  int width = 640;
  int height = 480;
  double z_near = 0.1;

  bool valid() const {
    return f > 0 && cu > 0 && cu < width && cv > 0 && cv < height && width > 0 && height > 0;
  }
};

struct CameraPose {
  Vec3d position = Vec3d::Zero();  // FI
  Mat3d orientation = Mat3d::Identity();  // camera -> FI
};

/// Camera axes in body coordinates: X right, Y down, Z forward.
inline Mat3d camera_base_rotation() {
  Mat3d r;
  r.col(0) = Vec3d(0, -1, 0);
  r.col(1) = Vec3d(0, 0, -1);
  r.col(2) = Vec3d(1, 0, 0);
  return r;
}

struct MountConfig {
  double tilt = 0.0;  // downward pitch of the optical axis, rad
  Vec3d offset = Vec3d::Zero();  // body frame

  Mat3d rotation() const { return rot_y(tilt) * camera_base_rotation(); }
};

inline CameraPose camera_pose_from_drone(const DroneState& d, const MountConfig& mount) {
  const Mat3d rb = euler_to_dcm(d.attitude());
  return {d.pos + rb * mount.offset, rb * mount.rotation()};
}

/// Orientation looking from `from` towards `to`, image up along world +z
/// where that is defined.
inline Mat3d look_at(const Vec3d& from, const Vec3d& to, const Vec3d& up_hint = Vec3d::UnitZ()) {
  const Vec3d z = (to - from).normalized();
  Vec3d x = z.cross(up_hint);
  if (x.norm() < 1e-9) x = z.cross(Vec3d::UnitX());
  x.normalize();
  Mat3d r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return r;
}

struct Pixel {
  double u = 0;
  double v = 0;
};

inline std::optional<Pixel> project(const Vec3d& p, const CameraIntrinsics& k, const CameraPose& pose) {
  const Vec3d c = pose.orientation.transpose() * (p - pose.position);
  if (c.z() <= k.z_near) return std::nullopt;
  return Pixel{k.cu + k.f * c.x() / c.z(), k.cv + k.f * c.y() / c.z()};
}

// ---------------------------------------------------------------------------

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  Frame() = default;
  Frame(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(std::size_t(3) * w * h) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = fill.r;
      pixels[i + 1] = fill.g;
      pixels[i + 2] = fill.b;
    }
  }

  Rgb at(int u, int v) const {
    const std::size_t i = 3 * (std::size_t(v) * width + u);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int u, int v, Rgb c) {
    const std::size_t i = 3 * (std::size_t(v) * width + u);
    pixels[i] = c.r;
    pixels[i + 1] = c.g;
    pixels[i + 2] = c.b;
  }
  bool operator==(const Frame&) const = default;
};

/// Box standing on its centre, rotated about the vertical by `heading`.
struct SceneBox {
  Vec3d center = Vec3d::Zero();  // FI
  Vec3d size{4.2, 1.8, 1.5};     // length, width, height
  double heading = 0;
  Rgb color{200, 20, 20};

  std::array<Vec3d, 8> corners() const {
    std::array<Vec3d, 8> c;
    const Mat3d r = rot_z(heading);
    int i = 0;
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1})
          c[i++] = center + r * Vec3d(0.5 * sx * size.x(), 0.5 * sy * size.y(), 0.5 * sz * size.z());
    return c;
  }
};

struct SceneModel {
  std::vector<SceneBox> boxes;
  Rgb ground{180, 180, 180};
  Rgb sky{170, 200, 230};
  double ground_z = 0;
};

namespace detail {

inline Rgb shade(Rgb c, double k) {
  auto s = [k](std::uint8_t v) { return std::uint8_t(std::lround(v * k)); };
  return {s(c.r), s(c.g), s(c.b)};
}

// Ray/box slab test in the box frame. Returns entry distance and hit face axis.
inline bool ray_box(const Vec3d& o, const Vec3d& d, const Vec3d& half, double& t_hit, int& face) {
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  int axis = -1, sign = 0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < -half[i] || o[i] > half[i]) return false;
      continue;
    }
    double ta = (-half[i] - o[i]) / d[i];
    double tb = (half[i] - o[i]) / d[i];
    int s = -1;
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1;
    }
    if (ta > t0) {
      t0 = ta;
      axis = i;
      sign = s;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (axis < 0) return false;  // camera inside the box
  t_hit = t0;
  face = axis * 2 + (sign > 0 ? 1 : 0);
  return true;
}

inline double face_shade(int face) {
  switch (face) {
    case 5: return 1.0;   // top
    case 4: return 0.5;   // bottom
    case 0: case 1: return 0.85;  // front/back
    default: return 0.7;  // sides
  }
}

}  // namespace detail

/// Ray-cast renderer: one ray through each pixel centre, nearest hit wins.
inline Frame render(const SceneModel& scene, const CameraIntrinsics& k, const CameraPose& pose) {
  Frame img(k.width, k.height);
  const Mat3d& r = pose.orientation;
  const Vec3d c0 = r.col(0) / k.f, c1 = r.col(1) / k.f, c2 = r.col(2);
  const double cam_h = pose.position.z() - scene.ground_z;

  for (int v = 0; v < k.height; ++v) {
    const double b = v + 0.5 - k.cv;
    for (int u = 0; u < k.width; ++u) {
      const double a = u + 0.5 - k.cu;
      const double dz = a * c0.z() + b * c1.z() + c2.z();
      const bool ground = cam_h > 0 ? dz < 0 : dz > 0;
      img.set(u, v, ground ? scene.ground : scene.sky);
    }
  }

  // Depth buffer holds ray parameters of box hits; ground is re-tested per pixel.
  std::vector<double> depth(std::size_t(k.width) * k.height, std::numeric_limits<double>::infinity());
  for (const auto& box : scene.boxes) {
    int u0 = 0, u1 = k.width - 1, v0 = 0, v1 = k.height - 1;
    bool all_front = true;
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (const auto& c : box.corners()) {
      auto px = project(c, k, pose);
      if (!px) {
        all_front = false;
        break;
      }
      umin = std::min(umin, px->u);
      umax = std::max(umax, px->u);
      vmin = std::min(vmin, px->v);
      vmax = std::max(vmax, px->v);
    }
    if (all_front) {
      if (umax < 0 || vmax < 0 || umin >= k.width || vmin >= k.height) continue;
      u0 = std::max(0, int(std::floor(umin)) - 1);
      u1 = std::min(k.width - 1, int(std::ceil(umax)) + 1);
      v0 = std::max(0, int(std::floor(vmin)) - 1);
      v1 = std::min(k.height - 1, int(std::ceil(vmax)) + 1);
    }
    const Mat3d rb = rot_z(box.heading);
    const Mat3d to_box = rb.transpose() * r;
    const Vec3d o = rb.transpose() * (pose.position - box.center);
    const Vec3d half = 0.5 * box.size;
    for (int v = v0; v <= v1; ++v) {
      const double b = v + 0.5 - k.cv;
      for (int u = u0; u <= u1; ++u) {
        const double a = u + 0.5 - k.cu;
        const Vec3d dc(a / k.f, b / k.f, 1.0);
        double t;
        int face;
        if (!detail::ray_box(o, to_box * dc, half, t, face)) continue;
        const std::size_t i = std::size_t(v) * k.width + u;
        if (t >= depth[i] || t <= k.z_near) continue;
        depth[i] = t;
        img.set(u, v, detail::shade(box.color, detail::face_shade(face)));
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// PPM P6

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void write_ppm(const std::string& path, const Frame& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << f.width << ' ' << f.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(f.pixels.data()), std::streamsize(f.pixels.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline Frame read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  if (magic != "P6" || w <= 0 || h <= 0 || maxv != 255) throw IoError("not a P6/255 file: " + path);
  in.get();
  Frame f(w, h);
  in.read(reinterpret_cast<char*>(f.pixels.data()), std::streamsize(f.pixels.size()));
  if (!in) throw IoError("truncated PPM: " + path);
  return f;
}

// ---------------------------------------------------------------------------
// Acquisition poses on a sphere around the target (FVR coordinates).

struct AcquisitionPose {
  double r = 0;
  double alpha = 0;
  double beta = 0;
  PosFVR position;
};

inline AcquisitionPose sphere_pose(double r, double alpha, double beta, const PosFVR& target) {
  const Vec3d rel(r * std::sin(beta) * std::sin(alpha), r * std::cos(beta),
                  r * std::sin(beta) * std::cos(alpha));
  return {r, alpha, beta, PosFVR(target.v + rel)};
}

enum class SweepMode { Grid, Spiral };

/// Grid: n_alpha azimuths in [0, 2pi) times n_beta elevations spanning [0, pi/2].
/// Spiral: n_alpha * n_beta samples with alpha and beta both driven by one parameter.
inline std::vector<AcquisitionPose> spherical_acquisition_poses(double r, int n_alpha, int n_beta,
                                                                const PosFVR& target,
                                                                SweepMode mode = SweepMode::Grid,
                                                                double turns = 8.0) {
  if (!(r > 0) || n_alpha < 1 || n_beta < 1)
    throw std::invalid_argument("spherical_acquisition_poses: bad arguments");
  std::vector<AcquisitionPose> out;
  const int n = n_alpha * n_beta;
  out.reserve(n);
  if (mode == SweepMode::Grid) {
    for (int j = 0; j < n_beta; ++j) {
      const double beta = n_beta == 1 ? M_PI / 2 : (M_PI / 2) * j / (n_beta - 1);
      for (int i = 0; i < n_alpha; ++i)
        out.push_back(sphere_pose(r, 2 * M_PI * i / n_alpha, beta, target));
    }
  } else {
    for (int i = 0; i < n; ++i) {
      const double s = n == 1 ? 1.0 : double(i) / (n - 1);
      out.push_back(sphere_pose(r, std::fmod(2 * M_PI * turns * s, 2 * M_PI), (M_PI / 2) * s, target));
    }
  }
  return out;
}

/// Camera pose for an acquisition sample, looking at the target.
inline CameraPose acquisition_camera(const AcquisitionPose& a, const PosFVR& target, const PosFI& origin) {
  const Vec3d p = fvr_to_fi(a.position, origin).v;
  const Vec3d t = fvr_to_fi(target, origin).v;
  // straight down: keep image "up" along the azimuth direction
  const Vec3d hint = a.beta < 1e-6 ? Vec3d(-std::cos(a.alpha), std::sin(a.alpha), 0) : Vec3d::UnitZ();
  return {p, look_at(p, t, hint)};
}

}  // namespace ibvs
