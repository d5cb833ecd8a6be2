#include <random>

#include <gtest/gtest.h>

#include "ibvs/vision.hpp"
#include "oracles.hpp"

using namespace ibvs;

namespace {
Frame car_view(double drone_x = -15, double lateral = 0) {
  DroneState d;
  d.pos = Vec3d(drone_x, 0, 4);
  MountConfig m;
  m.tilt = 0.2132;
  SceneModel s;
  s.boxes.push_back({Vec3d(0, lateral, 0.75), Vec3d(4.2, 1.8, 1.5), 0, {200, 20, 20}});
  return render(s, CameraIntrinsics{}, camera_pose_from_drone(d, m));
}

struct FixedDetector {
  std::vector<BoundingBox> boxes;
  mutable int calls = 0;
  std::vector<BoundingBox> detect(const Frame&) const {
    ++calls;
    return boxes;
  }
};
}  // namespace

TEST(Grayscale, Bt601RoundHalfUp) {
  Frame f(4, 1);
  f.set(0, 0, {255, 255, 255});
  f.set(1, 0, {255, 0, 0});
  f.set(2, 0, {0, 255, 0});
  f.set(3, 0, {0, 0, 255});
  const auto g = to_grayscale(f);
  EXPECT_EQ(g(0, 0), 255);
  EXPECT_EQ(g(1, 0), 76);   // 76.245
  EXPECT_EQ(g(2, 0), 150);  // 149.685
  EXPECT_EQ(g(3, 0), 29);   // 29.07
}

TEST(Bht, TwoDeltas) {
  Histogram256 h{};
  h[50] = 1000;
  h[200] = 1000;
  EXPECT_NEAR(bht_threshold(h), 125, 1);
}

TEST(Bht, Uniform) {
  Histogram256 h;
  h.fill(10);
  EXPECT_NEAR(bht_threshold(h), 127, 1);
}

TEST(Bht, SingleBin) {
  Histogram256 h{};
  h[77] = 5;
  EXPECT_EQ(bht_threshold(h), 77);
}

TEST(Bht, EmptyThrows) { EXPECT_THROW(bht_threshold(Histogram256{}), EmptyHistogram); }

TEST(Bht, ThresholdWithinOccupiedRange) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> mean(10, 245), sd(2, 30);
  std::uniform_int_distribution<long> count(1, 5000);
  for (int trial = 0; trial < 500; ++trial) {
    const auto h = oracle::bimodal(mean(rng), mean(rng), sd(rng), count(rng), count(rng), rng);
    int lo = 0, hi = 255;
    while (!h[lo]) ++lo;
    while (!h[hi]) --hi;
    const int t = bht_threshold(h);
    EXPECT_GE(t, lo);
    EXPECT_LE(t, hi);
  }
}

TEST(Bht, SeparatesWellSeparatedModes) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const double m1 = 40 + trial % 20, m2 = 190 + trial % 30;
    const auto h = oracle::bimodal(m1, m2, 8, 20000, 20000, rng);
    const int t = bht_threshold(h);
    EXPECT_GT(t, m1 + 24);
    EXPECT_LT(t, m2 - 24);
  }
}

TEST(Binarize, Polarity) {
  GrayImage g(3, 1);
  g(0, 0) = 10;
  g(1, 0) = 100;
  g(2, 0) = 101;
  const auto below = binarize(g, 100, Polarity::Below);
  const auto above = binarize(g, 100, Polarity::Above);
  EXPECT_EQ(below.data, (std::vector<std::uint8_t>{1, 1, 0}));
  EXPECT_EQ(above.data, (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(Labeling, MatchesFloodFillOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const double p = 0.2 + 0.5 * (trial % 10) / 10.0;
    std::bernoulli_distribution bit(p);
    BinaryImage img(32, 32);
    for (auto& x : img.data) x = bit(rng);
    const auto got = label_components(img);
    const auto want = oracle::flood_labels(img);
    ASSERT_TRUE(oracle::same_partition(got.labels.data, want)) << "trial " << trial;
    const int n = want.empty() ? 0 : *std::max_element(want.begin(), want.end());
    ASSERT_EQ(int(got.blobs.size()), n);
    std::int64_t total = 0;
    for (const auto& b : got.blobs) total += b.area;
    EXPECT_EQ(total, std::count(img.data.begin(), img.data.end(), 1));
  }
}

TEST(Labeling, DiagonalIsConnected) {
  BinaryImage img(3, 3);
  img(0, 0) = img(1, 1) = img(2, 2) = 1;
  img(2, 0) = 1;
  const auto l = label_components(img);
  EXPECT_EQ(l.blobs.size(), 1u);
  EXPECT_EQ(l.blobs[0].area, 4);
}

TEST(Labeling, StatsOfRectangle) {
  BinaryImage img(20, 10);
  for (int v = 2; v < 6; ++v)
    for (int u = 3; u < 11; ++u) img(u, v) = 1;
  const auto l = label_components(img);
  ASSERT_EQ(l.blobs.size(), 1u);
  const auto b = l.blobs[0].box();
  EXPECT_EQ(b, BoundingBox::from_edges(3, 2, 11, 6));
  EXPECT_DOUBLE_EQ(l.blobs[0].cu, 7);
  EXPECT_DOUBLE_EQ(l.blobs[0].cv, 4);
}

TEST(SelectBlob, LargestWinsAndTiesPreferUpperThenLeft) {
  auto blob = [](std::int64_t a, double cu, double cv) {
    BlobStats b;
    b.area = a;
    b.cu = cu;
    b.cv = cv;
    b.umin = int(cu);
    b.vmin = int(cv);
    b.umax = int(cu);
    b.vmax = int(cv);
    return b;
  };
  const BlobCriteria c;
  EXPECT_EQ(select_blob({blob(30, 5, 5), blob(90, 50, 50)}, c)->u, 50.5);
  EXPECT_EQ(select_blob({blob(90, 50, 50), blob(90, 70, 20)}, c)->u, 70.5);
  EXPECT_EQ(select_blob({blob(90, 50, 20), blob(90, 10, 20)}, c)->u, 10.5);
  EXPECT_FALSE(select_blob({blob(10, 1, 1)}, c));
}

TEST(Detect, RenderedCarMatchesRedPixels) {
  const Frame f = car_view();
  const auto boxes = detect(f, ColorBlobDetector{});
  ASSERT_EQ(boxes.size(), 1u);
  const auto want = oracle::pixel_extent(f, oracle::is_red);
  EXPECT_EQ(boxes[0], *want);
}

TEST(Detect, NothingWithoutRed) {
  Frame f(64, 48, {128, 128, 128});
  EXPECT_TRUE(detect(f, ColorBlobDetector{}).empty());
  const Frame yellow = oracle::rect_frame(64, 48, 10, 10, 20, 20, {230, 200, 40});
  EXPECT_TRUE(detect(yellow, ColorBlobDetector{}).empty());
}

TEST(Detect, RedAndYellowPicksRedOnly) {
  Frame f = oracle::rect_frame(200, 100, 20, 20, 30, 20, {200, 20, 20});
  for (int v = 30; v < 60; ++v)
    for (int u = 120; u < 170; ++u) f.set(u, v, {230, 200, 40});
  const auto boxes = detect(f, ColorBlobDetector{});
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0], BoundingBox::from_edges(20, 20, 50, 40));
}

TEST(Fuse, MaximumAndAverage) {
  const std::vector<BoundingBox> b{{10, 10, 4, 4}, {20, 20, 4, 4}};
  EXPECT_EQ(*fuse_boxes(b, FuseMode::Maximum), (BoundingBox{15, 15, 14, 14}));
  EXPECT_EQ(*fuse_boxes(b, FuseMode::Average), (BoundingBox{15, 15, 4, 4}));
  EXPECT_FALSE(fuse_boxes({}, FuseMode::Maximum));
}

TEST(Fuse, MaximumContainsEveryInput) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> c(0, 600), s(1, 80);
  for (int i = 0; i < 200; ++i) {
    std::vector<BoundingBox> b;
    for (int k = 0; k < 1 + i % 5; ++k) b.push_back({c(rng), c(rng), s(rng), s(rng)});
    const auto m = *fuse_boxes(b, FuseMode::Maximum);
    for (const auto& x : b) {
      EXPECT_LE(m.left(), x.left() + 1e-9);
      EXPECT_GE(m.right(), x.right() - 1e-9);
      EXPECT_LE(m.top(), x.top() + 1e-9);
      EXPECT_GE(m.bottom(), x.bottom() - 1e-9);
    }
  }
}

TEST(Iou, AgreesWithPixelCounting) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> pos(0, 50), size(1, 30);
  for (int i = 0; i < 300; ++i) {
    const int l1 = pos(rng), t1 = pos(rng), l2 = pos(rng), t2 = pos(rng);
    const auto a = BoundingBox::from_edges(l1, t1, l1 + size(rng), t1 + size(rng));
    const auto b = BoundingBox::from_edges(l2, t2, l2 + size(rng), t2 + size(rng));
    EXPECT_NEAR(iou(a, b), oracle::pixel_iou(a, b, 90, 90), 1e-12);
  }
}

TEST(Hsv, PrimaryHues) {
  EXPECT_NEAR(to_hsv({255, 0, 0}).h, 0, 1e-12);
  EXPECT_NEAR(to_hsv({0, 255, 0}).h, 120, 1e-12);
  EXPECT_NEAR(to_hsv({0, 0, 255}).h, 240, 1e-12);
  EXPECT_NEAR(to_hsv({255, 0, 255}).h, 300, 1e-12);
  EXPECT_EQ(hue_bin({128, 128, 128}, CamshiftConfig{}), -1);
  EXPECT_EQ(hue_bin({5, 0, 0}, CamshiftConfig{}), -1);
}

TEST(Camshift, InitRejectsDegenerate) {
  const Frame f = oracle::rect_frame(100, 100, 40, 40, 20, 20);
  EXPECT_THROW(camshift_init(f, {50, 50, 3, 3}), DegenerateRoi);
  EXPECT_THROW(camshift_init(f, {5, 5, 40, 40}), DegenerateRoi);
  EXPECT_THROW(camshift_init(Frame(100, 100, {128, 128, 128}), {50, 50, 20, 20}), DegenerateRoi);
  const auto s = camshift_init(f, {50, 50, 20, 20});
  EXPECT_DOUBLE_EQ(*std::max_element(s.hist.begin(), s.hist.end()), 1.0);
}

TEST(Camshift, StaticTargetIsFixedPoint) {
  const Frame f = oracle::rect_frame(200, 150, 80, 60, 30, 20);
  auto s = camshift_init(f, BoundingBox::from_edges(80, 60, 110, 80));
  for (int i = 0; i < 10; ++i) {
    const auto r = camshift_step(s, f);
    ASSERT_FALSE(r.lost);
    EXPECT_NEAR(r.box.u, 95, 0.5);
    EXPECT_NEAR(r.box.v, 70, 0.5);
    EXPECT_NEAR(r.box.area(), 600, 60);
    s = r.state;
  }
}

TEST(Camshift, FollowsSlowTarget) {
  int u0 = 40;
  Frame f = oracle::rect_frame(640, 200, u0, 80, 40, 30);
  auto s = camshift_init(f, BoundingBox::from_edges(u0, 80, u0 + 40, 110));
  int lost = 0;
  for (int k = 1; k <= 250; ++k) {
    u0 = 40 + 2 * k;
    f = oracle::rect_frame(640, 200, u0, 80, 40, 30);
    const auto r = camshift_step(s, f);
    lost += r.lost;
    s = r.state;
    EXPECT_NEAR(r.box.u, u0 + 20, 3) << "frame " << k;
  }
  EXPECT_EQ(lost, 0);
}

TEST(Camshift, LostWhenTargetRemoved) {
  const Frame f = oracle::rect_frame(200, 150, 80, 60, 30, 20);
  const auto s = camshift_init(f, BoundingBox::from_edges(80, 60, 110, 80));
  const auto r = camshift_step(s, Frame(200, 150, {128, 128, 128}));
  EXPECT_TRUE(r.lost);
  EXPECT_EQ(r.confidence, 0);
}

TEST(Selector, DetectThenTrackThenRecover) {
  const Frame with = oracle::rect_frame(200, 150, 80, 60, 30, 20);
  const Frame without(200, 150, {128, 128, 128});
  SelectorState st;
  const ColorBlobDetector det;
  ASSERT_TRUE(target_select(st, with, det));
  EXPECT_EQ(st.mode, SelectorMode::Track);
  EXPECT_EQ(st.detector_calls, 1);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(target_select(st, with, det));
  EXPECT_EQ(st.detector_calls, 1);

  // two lost frames keep tracking, the third reverts to detection
  EXPECT_FALSE(target_select(st, without, det));
  EXPECT_FALSE(target_select(st, without, det));
  EXPECT_EQ(st.mode, SelectorMode::Track);
  EXPECT_FALSE(target_select(st, without, det));
  EXPECT_EQ(st.mode, SelectorMode::Detect);
  EXPECT_EQ(st.loss_events, 1);

  EXPECT_FALSE(target_select(st, without, det));
  EXPECT_EQ(st.detector_calls, 2);
  EXPECT_TRUE(target_select(st, with, det));
  EXPECT_EQ(st.mode, SelectorMode::Track);
}

TEST(Selector, ShortOcclusionDoesNotReset) {
  const Frame with = oracle::rect_frame(200, 150, 80, 60, 30, 20);
  const Frame without(200, 150, {128, 128, 128});
  SelectorState st;
  const ColorBlobDetector det;
  target_select(st, with, det);
  target_select(st, without, det);
  target_select(st, without, det);
  EXPECT_TRUE(target_select(st, with, det));
  EXPECT_EQ(st.loss_count, 0);
  EXPECT_EQ(st.loss_events, 0);
  EXPECT_EQ(st.detector_calls, 1);
}

TEST(Selector, FusesDetections) {
  const Frame f = oracle::rect_frame(200, 150, 10, 10, 40, 40);
  FixedDetector det{{{20, 20, 10, 10}, {40, 40, 10, 10}}};
  SelectorState st;
  const auto b = target_select(st, f, det);
  ASSERT_TRUE(b);
  EXPECT_EQ(*b, BoundingBox::from_edges(15, 15, 45, 45));
  EXPECT_EQ(det.calls, 1);
}

TEST(DistanceVector, Example) {
  const auto e = distance_vector({300, 250, 40, 20}, CameraIntrinsics{});
  EXPECT_DOUBLE_EQ(e.e_u, 20);
  EXPECT_DOUBLE_EQ(e.e_v, -10);
  EXPECT_DOUBLE_EQ(e.area, 800);
}

TEST(Crop, DarkCarOnBrightGround) {
  const Frame f = oracle::rect_frame(160, 120, 50, 40, 40, 25, {60, 10, 10}, {200, 200, 200});
  const auto b = crop_roi(f);
  ASSERT_TRUE(b);
  EXPECT_EQ(*b, BoundingBox::from_edges(50, 40, 90, 65));
}

TEST(Crop, RenderedCarAgainstColourTruth) {
  for (double lateral : {-2.0, 0.0, 1.5}) {
    const Frame f = car_view(-15, lateral);
    const auto truth = *oracle::pixel_extent(f, oracle::is_red);
    const auto got = crop_roi(f);
    ASSERT_TRUE(got);
    EXPECT_GE(iou(*got, truth), 0.8) << "lateral " << lateral;
  }
}
