#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "ibvs/camera.hpp"
#include "oracles.hpp"

using namespace ibvs;

namespace {
const CameraIntrinsics K{};

SceneModel car_scene(const Vec3d& center, double heading = 0) {
  SceneModel s;
  s.boxes.push_back({center, Vec3d(4.2, 1.8, 1.5), heading, {200, 20, 20}});
  return s;
}

// First ground-coloured row in a column, or -1.
int horizon_row(const Frame& f, int u, Rgb ground) {
  for (int v = 0; v < f.height; ++v)
    if (f.at(u, v) == ground) return v;
  return -1;
}
}  // namespace

TEST(CameraPose, LevelDroneLooksForward) {
  const CameraPose p = camera_pose_from_drone(DroneState{}, MountConfig{});
  EXPECT_EQ(p.position, Vec3d::Zero());
  EXPECT_LT((p.orientation.col(2) - Vec3d::UnitX()).norm(), 1e-15);
  EXPECT_LT((p.orientation.col(1) - Vec3d(0, 0, -1)).norm(), 1e-15);  // image down is world down
}

TEST(CameraPose, YawRotatesOpticalAxis) {
  DroneState d;
  d.eta.z() = M_PI / 2;
  const CameraPose p = camera_pose_from_drone(d, MountConfig{});
  EXPECT_LT((p.orientation.col(2) - Vec3d::UnitY()).norm(), 1e-15);
}

TEST(CameraPose, TiltPointsDown) {
  MountConfig m;
  m.tilt = 0.3;
  const CameraPose p = camera_pose_from_drone(DroneState{}, m);
  EXPECT_NEAR(p.orientation.col(2).z(), -std::sin(0.3), 1e-15);
  EXPECT_NEAR(p.orientation.determinant(), 1, 1e-12);
}

TEST(CameraPose, OffsetRotatesWithBody) {
  DroneState d;
  d.pos = Vec3d(1, 2, 3);
  d.eta.z() = M_PI / 2;
  MountConfig m;
  m.offset = Vec3d(0.1, 0, 0);
  EXPECT_LT((camera_pose_from_drone(d, m).position - Vec3d(1, 2.1, 3)).norm(), 1e-15);
}

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const CameraPose p = camera_pose_from_drone(DroneState{}, MountConfig{});
  const auto px = project(Vec3d(7, 0, 0), K, p);
  ASSERT_TRUE(px);
  EXPECT_NEAR(px->u, K.cu, 1e-12);
  EXPECT_NEAR(px->v, K.cv, 1e-12);
}

TEST(Project, LateralOffset) {
  const CameraPose p = camera_pose_from_drone(DroneState{}, MountConfig{});
  const double d = 10, k = 0.2;
  // camera X is body -y
  const auto px = project(Vec3d(d, -d * k, 0), K, p);
  EXPECT_NEAR(px->u, K.cu + K.f * k, 1e-9);
  EXPECT_NEAR(px->v, K.cv, 1e-9);
}

TEST(Project, BehindAndNearPlane) {
  const CameraPose p = camera_pose_from_drone(DroneState{}, MountConfig{});
  EXPECT_FALSE(project(Vec3d(-5, 0, 0), K, p));
  EXPECT_FALSE(project(Vec3d(0.05, 0, 0), K, p));
  EXPECT_TRUE(project(Vec3d(0.2, 0, 0), K, p));
}

TEST(Render, LevelCameraHorizonAtPrincipalRow) {
  DroneState d;
  d.pos.z() = 4;
  const SceneModel s;
  const Frame f = render(s, K, camera_pose_from_drone(d, MountConfig{}));
  for (int u = 0; u < K.width; u += 37) EXPECT_NEAR(horizon_row(f, u, s.ground), K.cv, 1.0);
  EXPECT_EQ(f.at(0, 0), s.sky);
  EXPECT_EQ(f.at(K.width - 1, K.height - 1), s.ground);
}

TEST(Render, RollTiltsHorizon) {
  const SceneModel s;
  for (double roll : {-0.3, -0.1, 0.15, 0.4}) {
    DroneState d;
    d.pos.z() = 4;
    d.eta.x() = roll;
    const CameraPose pose = camera_pose_from_drone(d, MountConfig{});
    const Frame f = render(s, K, pose);
    // least-squares line through the rendered horizon
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int u = 100; u < 540; ++u) {
      const int v = horizon_row(f, u, s.ground);
      if (v <= 0) continue;
      sx += u;
      sy += v;
      sxx += double(u) * u;
      sxy += double(u) * v;
      ++n;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    // oracle: project two far ground points on either side of the view
    const Vec3d fwd(1e5, 0, 0);
    const auto a = project(fwd + Vec3d(0, 2e4, 0), K, pose);
    const auto b = project(fwd + Vec3d(0, -2e4, 0), K, pose);
    const double want = std::atan2(b->v - a->v, b->u - a->u);
    EXPECT_NEAR(std::atan(slope), want, 0.5 * M_PI / 180) << "roll " << roll;
    EXPECT_NEAR(std::abs(std::atan(slope)), std::abs(roll), 0.5 * M_PI / 180);
  }
}

TEST(Render, CarRegionMatchesCornerProjection) {
  DroneState d;
  d.pos = Vec3d(-15, 0, 4);
  MountConfig m;
  m.tilt = 0.2132;
  const CameraPose pose = camera_pose_from_drone(d, m);
  for (double heading : {0.0, 0.3, -0.7}) {
    const SceneModel s = car_scene(Vec3d(0, 1, 0.75), heading);
    const Frame f = render(s, K, pose);
    const auto got = oracle::pixel_extent(f, oracle::is_red);
    ASSERT_TRUE(got);
    const auto want = oracle::corner_box(s.boxes[0], K, pose);
    EXPECT_NEAR(got->left(), want.left(), 2);
    EXPECT_NEAR(got->right(), want.right(), 2);
    EXPECT_NEAR(got->top(), want.top(), 2);
    EXPECT_NEAR(got->bottom(), want.bottom(), 2);
  }
}

TEST(Render, NearerBoxOccludes) {
  DroneState d;
  d.pos = Vec3d(-15, 0, 1);
  SceneModel s = car_scene(Vec3d(0, 0, 0.75));
  s.boxes.push_back({Vec3d(-8, 0, 0.75), Vec3d(1, 1, 1.5), 0, {20, 20, 200}});
  const Frame f = render(s, K, camera_pose_from_drone(d, MountConfig{}));
  const Rgb centre = f.at(320, 240);
  EXPECT_GT(centre.b, centre.r);
}

TEST(Render, CarBehindCameraIsInvisible) {
  DroneState d;
  d.pos = Vec3d(15, 0, 4);
  const Frame f = render(car_scene(Vec3d(0, 0, 0.75)), K, camera_pose_from_drone(d, MountConfig{}));
  EXPECT_FALSE(oracle::pixel_extent(f, oracle::is_red));
}

TEST(Render, Deterministic) {
  DroneState d;
  d.pos = Vec3d(-12, 1, 5);
  d.eta = Vec3d(0.05, 0.1, -0.2);
  const auto s = car_scene(Vec3d(0, 0, 0.75), 0.2);
  EXPECT_EQ(render(s, K, camera_pose_from_drone(d, MountConfig{})),
            render(s, K, camera_pose_from_drone(d, MountConfig{})));
}

TEST(Ppm, ExactLayoutAndRoundTrip) {
  Frame f(3, 2);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = std::uint8_t(i * 13);
  const auto path = (std::filesystem::temp_directory_path() / "ibvs_ppm_test.ppm").string();
  write_ppm(path, f);
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P6\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 18);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(std::uint8_t(bytes[header.size() + 5]), 65);
  EXPECT_EQ(read_ppm(path), f);
  std::remove(path.c_str());
  EXPECT_THROW(read_ppm(path), IoError);
}

TEST(Acquisition, PolesAndEquator) {
  const PosFVR t(0, 0, 0);
  const auto top = sphere_pose(15, 1.0, 0, t);
  EXPECT_NEAR((top.position.v - Vec3d(0, 15, 0)).norm(), 0, 1e-12);
  const auto eq = sphere_pose(15, 0, M_PI / 2, t);
  EXPECT_NEAR((eq.position.v - Vec3d(0, 0, 15)).norm(), 0, 1e-12);
}

TEST(Acquisition, GridOnSphere) {
  const PosFVR t(1, -2, 3);
  const auto poses = spherical_acquisition_poses(15, 8, 4, t);
  ASSERT_EQ(poses.size(), 32u);
  for (const auto& p : poses) {
    EXPECT_LT(std::abs((p.position - t).norm() - 15), 1e-12);
    EXPECT_GE(p.alpha, 0);
    EXPECT_LT(p.alpha, 2 * M_PI);
    EXPECT_GE(p.beta, 0);
    EXPECT_LE(p.beta, M_PI / 2);
  }
  EXPECT_EQ(poses.front().beta, 0);
  EXPECT_EQ(poses.back().beta, M_PI / 2);
}

TEST(Acquisition, SpiralOnSphere) {
  const auto poses = spherical_acquisition_poses(15, 10, 10, PosFVR(), SweepMode::Spiral, 5);
  ASSERT_EQ(poses.size(), 100u);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    EXPECT_GT(poses[i].beta, poses[i - 1].beta);
    EXPECT_LT(std::abs(poses[i].position.v.norm() - 15), 1e-12);
  }
}

TEST(Acquisition, CameraLooksAtTarget) {
  const PosFI origin(0, 0, 0.75);
  const PosFVR target(0, 0, 0);
  for (const auto& p : spherical_acquisition_poses(15, 6, 4, target)) {
    const CameraPose cam = acquisition_camera(p, target, origin);
    const auto px = project(origin.v, K, cam);
    ASSERT_TRUE(px);
    EXPECT_NEAR(px->u, K.cu, 1e-9);
    EXPECT_NEAR(px->v, K.cv, 1e-9);
    EXPECT_NEAR(cam.orientation.determinant(), 1, 1e-12);
  }
}

TEST(Acquisition, RejectsBadArguments) {
  EXPECT_THROW(spherical_acquisition_poses(0, 1, 1, PosFVR()), std::invalid_argument);
  EXPECT_THROW(spherical_acquisition_poses(1, 0, 1, PosFVR()), std::invalid_argument);
}
