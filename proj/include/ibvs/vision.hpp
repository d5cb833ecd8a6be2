#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "camera.hpp"

namespace ibvs {

template <class T> struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  T& operator()(int u, int v) { return data[std::size_t(v) * width + u]; }
  T operator()(int u, int v) const { return data[std::size_t(v) * width + u]; }
  std::size_t size() const { return data.size(); }
};

using GrayImage = Image<std::uint8_t>;
using BinaryImage = Image<std::uint8_t>;  // 0 or 1
using Histogram256 = std::array<std::uint64_t, 256>;

/// Axis-aligned box in continuous pixel coordinates; pixel (i, j) covers [i, i+1) x [j, j+1).
struct BoundingBox {
  double u = 0;  // centroid
  double v = 0;
  double w = 0;
  double h = 0;

  double left() const { return u - 0.5 * w; }
  double right() const { return u + 0.5 * w; }
  double top() const { return v - 0.5 * h; }
  double bottom() const { return v + 0.5 * h; }
  double area() const { return w * h; }

  static BoundingBox from_edges(double l, double t, double r, double b) {
    return {0.5 * (l + r), 0.5 * (t + b), r - l, b - t};
  }
  bool contains(double pu, double pv) const {
    return pu >= left() && pu <= right() && pv >= top() && pv <= bottom();
  }
  bool operator==(const BoundingBox&) const = default;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0 || ih <= 0) return 0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

inline BoundingBox clip_box(const BoundingBox& b, int width, int height) {
  return BoundingBox::from_edges(std::clamp(b.left(), 0.0, double(width)), std::clamp(b.top(), 0.0, double(height)),
                                 std::clamp(b.right(), 0.0, double(width)), std::clamp(b.bottom(), 0.0, double(height)));
}

// ---------------------------------------------------------------------------
// Segmentation

/// BT.601 luma, rounded half up, in integer arithmetic.
inline GrayImage to_grayscale(const Frame& f) {
  GrayImage g(f.width, f.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const unsigned r = f.pixels[3 * i], gr = f.pixels[3 * i + 1], b = f.pixels[3 * i + 2];
    g.data[i] = std::uint8_t((299 * r + 587 * gr + 114 * b + 500) / 1000);
  }
  return g;
}

inline Histogram256 histogram(const GrayImage& g) {
  Histogram256 h{};
  for (auto p : g.data) ++h[p];
  return h;
}

struct EmptyHistogram : std::invalid_argument {
  EmptyHistogram() : std::invalid_argument("bht_threshold: empty histogram") {}
};

/// Balanced histogram thresholding. Bins [0, t] form the lower class.
/// Equal sides trim both ends, so symmetric histograms stay centred.
inline int bht_threshold(const Histogram256& h) {
  int is = 0, ie = 255;
  while (is < 256 && h[is] == 0) ++is;
  if (is == 256) throw EmptyHistogram();
  while (h[ie] == 0) --ie;
  int im = (is + ie) / 2;
  std::int64_t wl = 0, wr = 0;
  for (int i = is; i <= im; ++i) wl += std::int64_t(h[i]);
  for (int i = im + 1; i <= ie; ++i) wr += std::int64_t(h[i]);
  while (is < ie) {
    if (wl > wr) {
      wl -= std::int64_t(h[is++]);
    } else if (wr > wl) {
      wr -= std::int64_t(h[ie--]);
    } else {
      wl -= std::int64_t(h[is++]);
      wr -= std::int64_t(h[ie--]);
    }
    const int nm = (is + ie) / 2;
    while (im < nm) {
      ++im;
      wl += std::int64_t(h[im]);
      wr -= std::int64_t(h[im]);
    }
    while (im > nm) {
      wl -= std::int64_t(h[im]);
      wr += std::int64_t(h[im]);
      --im;
    }
  }
  return im;
}

enum class Polarity { Above, Below };

inline BinaryImage binarize(const GrayImage& g, int threshold, Polarity pol) {
  BinaryImage b(g.width, g.height);
  for (std::size_t i = 0; i < g.size(); ++i)
    b.data[i] = pol == Polarity::Above ? g.data[i] > threshold : g.data[i] <= threshold;
  return b;
}

struct BlobStats {
  int label = 0;
  std::int64_t area = 0;
  double cu = 0, cv = 0;  // centroid of pixel centres
  int umin = 0, vmin = 0, umax = 0, vmax = 0;
  double mean_intensity = 0;

  BoundingBox box() const { return BoundingBox::from_edges(umin, vmin, umax + 1.0, vmax + 1.0); }
};

struct Labeling {
  Image<int> labels;  // 0 = background, blobs numbered from 1
  std::vector<BlobStats> blobs;
};

namespace detail {
inline int uf_find(std::vector<int>& p, int x) {
  while (p[x] != x) {
    p[x] = p[p[x]];
    x = p[x];
  }
  return x;
}
}  // namespace detail

/// Two-pass 8-connected labeling with union-find. `gray` supplies mean intensity when given.
inline Labeling label_components(const BinaryImage& img, const GrayImage* gray = nullptr) {
  const int w = img.width, h = img.height;
  Labeling out;
  out.labels = Image<int>(w, h, 0);
  std::vector<int> parent{0};
  auto& lab = out.labels;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      if (!img(u, v)) continue;
      int best = 0;
      const int nb[4][2] = {{-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
      for (auto& d : nb) {
        const int x = u + d[0], y = v + d[1];
        if (x < 0 || y < 0 || x >= w) continue;
        const int l = lab(x, y);
        if (!l) continue;
        if (!best) {
          best = detail::uf_find(parent, l);
        } else {
          const int a = detail::uf_find(parent, l);
          if (a != best) {
            const int lo = std::min(a, best), hi = std::max(a, best);
            parent[hi] = lo;
            best = lo;
          }
        }
      }
      if (!best) {
        best = int(parent.size());
        parent.push_back(best);
      }
      lab(u, v) = best;
    }

  // compact labels in raster order of first appearance
  std::vector<int> remap(parent.size(), 0);
  int next = 0;
  for (auto& l : lab.data) {
    if (!l) continue;
    const int root = detail::uf_find(parent, l);
    if (!remap[root]) remap[root] = ++next;
    l = remap[root];
  }
  out.blobs.resize(next);
  std::vector<double> su(next, 0), sv(next, 0), si(next, 0);
  for (int i = 0; i < next; ++i) {
    auto& b = out.blobs[i];
    b.label = i + 1;
    b.umin = w;
    b.vmin = h;
    b.umax = -1;
    b.vmax = -1;
  }
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const int l = lab(u, v);
      if (!l) continue;
      auto& b = out.blobs[l - 1];
      ++b.area;
      su[l - 1] += u + 0.5;
      sv[l - 1] += v + 0.5;
      if (gray) si[l - 1] += (*gray)(u, v);
      b.umin = std::min(b.umin, u);
      b.umax = std::max(b.umax, u);
      b.vmin = std::min(b.vmin, v);
      b.vmax = std::max(b.vmax, v);
    }
  for (int i = 0; i < next; ++i) {
    auto& b = out.blobs[i];
    b.cu = su[i] / b.area;
    b.cv = sv[i] / b.area;
    b.mean_intensity = gray ? si[i] / b.area : 0;
  }
  return out;
}

struct BlobCriteria {
  std::int64_t min_area = 25;
  std::int64_t max_area = std::numeric_limits<std::int64_t>::max();
  double min_intensity = 0;
  double max_intensity = 255;

  bool accepts(const BlobStats& b) const {
    return b.area >= min_area && b.area <= max_area && b.mean_intensity >= min_intensity &&
           b.mean_intensity <= max_intensity;
  }
};

/// Largest passing blob; ties go to the smaller centroid row, then column.
inline std::optional<BoundingBox> select_blob(const std::vector<BlobStats>& blobs, const BlobCriteria& c) {
  const BlobStats* best = nullptr;
  for (const auto& b : blobs) {
    if (!c.accepts(b)) continue;
    if (!best || b.area > best->area ||
        (b.area == best->area && (b.cv < best->cv || (b.cv == best->cv && b.cu < best->cu))))
      best = &b;
  }
  if (!best) return std::nullopt;
  return best->box();
}

struct CropConfig {
  Polarity polarity = Polarity::Below;
  BlobCriteria criteria{};
};

/// Grayscale, BHT, binarize, label, select.
inline std::optional<BoundingBox> crop_roi(const Frame& f, const CropConfig& cfg = {}) {
  const GrayImage g = to_grayscale(f);
  const int t = bht_threshold(histogram(g));
  const BinaryImage b = binarize(g, t, cfg.polarity);
  return select_blob(label_components(b, &g).blobs, cfg.criteria);
}

// ---------------------------------------------------------------------------
// Detection

template <class D>
concept Detector = requires(const D& d, const Frame& f) {
  { d.detect(f) } -> std::convertible_to<std::vector<BoundingBox>>;
};

/// Red-dominance blob detector: R - max(G, B) >= margin, then labeling.
struct ColorBlobDetector {
  int margin = 60;
  BlobCriteria criteria{};

  std::vector<BoundingBox> detect(const Frame& f) const {
    GrayImage dom(f.width, f.height);
    for (std::size_t i = 0; i < dom.size(); ++i) {
      const int r = f.pixels[3 * i], g = f.pixels[3 * i + 1], b = f.pixels[3 * i + 2];
      dom.data[i] = std::uint8_t(std::clamp(r - std::max(g, b), 0, 255));
    }
    const BinaryImage bin = binarize(dom, margin - 1, Polarity::Above);
    std::vector<BoundingBox> out;
    for (const auto& blob : label_components(bin, &dom).blobs)
      if (blob.area >= criteria.min_area && blob.area <= criteria.max_area) out.push_back(blob.box());
    return out;
  }
};

/// The cropping pipeline behind the detector interface.
struct CropDetector {
  CropConfig config{};

  std::vector<BoundingBox> detect(const Frame& f) const {
    auto b = crop_roi(f, config);
    if (!b) return {};
    return {*b};
  }
};

static_assert(Detector<ColorBlobDetector>);
static_assert(Detector<CropDetector>);

template <class T> auto detect(const Frame& f, const T& detector) { return detector.detect(f); }

enum class FuseMode { Maximum, Average };

inline std::optional<BoundingBox> fuse_boxes(const std::vector<BoundingBox>& boxes, FuseMode mode) {
  if (boxes.empty()) return std::nullopt;
  if (mode == FuseMode::Maximum) {
    double l = boxes[0].left(), t = boxes[0].top(), r = boxes[0].right(), b = boxes[0].bottom();
    for (const auto& x : boxes) {
      l = std::min(l, x.left());
      t = std::min(t, x.top());
      r = std::max(r, x.right());
      b = std::max(b, x.bottom());
    }
    return BoundingBox::from_edges(l, t, r, b);
  }
  BoundingBox m{};
  for (const auto& x : boxes) {
    m.u += x.u;
    m.v += x.v;
    m.w += x.w;
    m.h += x.h;
  }
  const double n = double(boxes.size());
  return BoundingBox{m.u / n, m.v / n, m.w / n, m.h / n};
}

// ---------------------------------------------------------------------------
// CAMShift

struct Hsv {
  double h = 0;  // degrees [0, 360)
  double s = 0;  // [0, 1]
  double v = 0;  // [0, 1]
};

inline Hsv to_hsv(Rgb c) {
  const double r = c.r / 255.0, g = c.g / 255.0, b = c.b / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  Hsv o;
  o.v = mx;
  o.s = mx > 0 ? d / mx : 0;
  if (d <= 0) return o;
  if (mx == r) o.h = 60 * std::fmod((g - b) / d, 6.0);
  else if (mx == g) o.h = 60 * ((b - r) / d + 2);
  else o.h = 60 * ((r - g) / d + 4);
  if (o.h < 0) o.h += 360;
  return o;
}

struct CamshiftConfig {
  int bins = 16;
  double min_saturation = 0.2;
  double min_value = 0.1;
  int max_iterations = 20;
  double epsilon = 1.0;  // px
  double min_window = 8;
  double loss_threshold = 0.05;
};

/// Hue bin of a pixel, or -1 when saturation/value gating removes it.
inline int hue_bin(Rgb c, const CamshiftConfig& cfg) {
  const Hsv x = to_hsv(c);
  if (x.s < cfg.min_saturation || x.v < cfg.min_value) return -1;
  return std::min(cfg.bins - 1, int(x.h / 360.0 * cfg.bins));
}

struct TrackerState {
  std::vector<double> hist;  // peak normalised to 1
  BoundingBox window;
  double aspect = 1;  // w / h of the initial roi
  double confidence = 1;
};

struct DegenerateRoi : std::invalid_argument {
  DegenerateRoi() : std::invalid_argument("camshift_init: degenerate roi") {}
};

namespace detail {
struct PixelRect {
  int u0, v0, u1, v1;  // inclusive-exclusive
};
inline PixelRect pixel_rect(const BoundingBox& b, int width, int height) {
  return {std::clamp(int(std::lround(b.left())), 0, width), std::clamp(int(std::lround(b.top())), 0, height),
          std::clamp(int(std::lround(b.right())), 0, width), std::clamp(int(std::lround(b.bottom())), 0, height)};
}
}  // namespace detail

inline TrackerState camshift_init(const Frame& f, const BoundingBox& roi, const CamshiftConfig& cfg = {}) {
  if (roi.w * roi.h < 16 || roi.left() < -0.5 || roi.top() < -0.5 || roi.right() > f.width + 0.5 ||
      roi.bottom() > f.height + 0.5)
    throw DegenerateRoi();
  TrackerState s;
  s.hist.assign(cfg.bins, 0.0);
  const auto r = detail::pixel_rect(roi, f.width, f.height);
  for (int v = r.v0; v < r.v1; ++v)
    for (int u = r.u0; u < r.u1; ++u) {
      const int b = hue_bin(f.at(u, v), cfg);
      if (b >= 0) s.hist[b] += 1;
    }
  const double peak = *std::max_element(s.hist.begin(), s.hist.end());
  if (peak <= 0) throw DegenerateRoi();
  for (auto& x : s.hist) x /= peak;
  s.window = roi;
  s.aspect = roi.w / roi.h;
  return s;
}

/// Per-pixel probability in [0, 255] from the hue histogram.
inline Image<std::uint8_t> back_project(const Frame& f, const std::vector<double>& hist, const CamshiftConfig& cfg,
                                        const detail::PixelRect& r) {
  Image<std::uint8_t> p(f.width, f.height, 0);
  for (int v = r.v0; v < r.v1; ++v)
    for (int u = r.u0; u < r.u1; ++u) {
      const int b = hue_bin(f.at(u, v), cfg);
      if (b >= 0) p(u, v) = std::uint8_t(std::lround(255.0 * hist[b]));
    }
  return p;
}

struct TrackResult {
  TrackerState state;
  BoundingBox box;  // object estimate, half the window's linear size
  double confidence = 0;
  bool lost = false;
};

inline TrackResult camshift_step(const TrackerState& in, const Frame& f, const CamshiftConfig& cfg = {}) {
  TrackerState s = in;
  BoundingBox win = s.window;
  // Back-project lazily over the region the window can reach this frame.
  const double reach = 2 * cfg.max_iterations * std::max(win.w, win.h);
  const auto area = detail::pixel_rect(
      BoundingBox{win.u, win.v, win.w + reach, win.h + reach}, f.width, f.height);
  const auto prob = back_project(f, s.hist, cfg, area);

  double m00 = 0;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const auto r = detail::pixel_rect(win, f.width, f.height);
    double m10 = 0, m01 = 0;
    m00 = 0;
    for (int v = r.v0; v < r.v1; ++v)
      for (int u = r.u0; u < r.u1; ++u) {
        const double p = prob(u, v);
        m00 += p;
        m10 += p * (u + 0.5);
        m01 += p * (v + 0.5);
      }
    if (m00 <= 0) break;
    const double nu = m10 / m00, nv = m01 / m00;
    const double move = std::hypot(nu - win.u, nv - win.v);
    win.u = nu;
    win.v = nv;
    if (move < cfg.epsilon) break;
  }

  TrackResult out;
  const double conf = m00 / (255.0 * std::max(1.0, win.w * win.h));
  if (m00 <= 0 || conf < cfg.loss_threshold) {
    out.state = in;
    out.state.confidence = m00 > 0 ? conf : 0;
    out.box = in.window;
    out.confidence = out.state.confidence;
    out.lost = true;
    return out;
  }

  const double side = 2 * std::sqrt(m00 / 255.0);
  const double sa = std::sqrt(s.aspect);
  win.w = std::max(cfg.min_window, side * sa);
  win.h = std::max(cfg.min_window, side / sa);
  win = clip_box(win, f.width, f.height);
  if (win.w < cfg.min_window || win.h < cfg.min_window) {
    // pinned against an edge: keep the floor size inside the image
    const double w = std::max(cfg.min_window, win.w), h = std::max(cfg.min_window, win.h);
    const double u = std::clamp(win.u, w / 2, f.width - w / 2), v = std::clamp(win.v, h / 2, f.height - h / 2);
    win = {u, v, w, h};
  }
  s.window = win;
  s.confidence = conf;
  out.state = s;
  out.box = BoundingBox{win.u, win.v, 0.5 * win.w, 0.5 * win.h};
  out.confidence = conf;
  return out;
}

// ---------------------------------------------------------------------------
// Detect/track selector

enum class SelectorMode { Detect, Track };

struct SelectorConfig {
  FuseMode fuse = FuseMode::Maximum;
  int n_loss = 3;
  CamshiftConfig camshift{};
};

struct SelectorState {
  SelectorMode mode = SelectorMode::Detect;
  int loss_count = 0;
  std::optional<TrackerState> tracker;
  std::int64_t detector_calls = 0;
  std::int64_t loss_events = 0;
  double confidence = 0;
};

/// One frame of detect/track switching. Returns the target box, if any.
template <Detector D>
std::optional<BoundingBox> target_select(SelectorState& st, const Frame& f, const D& detector,
                                         const SelectorConfig& cfg = {}) {
  if (st.mode == SelectorMode::Detect) {
    ++st.detector_calls;
    const auto fused = fuse_boxes(detector.detect(f), cfg.fuse);
    if (!fused) {
      st.confidence = 0;
      return std::nullopt;
    }
    try {
      st.tracker = camshift_init(f, clip_box(*fused, f.width, f.height), cfg.camshift);
    } catch (const DegenerateRoi&) {
      st.confidence = 0;
      return std::nullopt;
    }
    st.mode = SelectorMode::Track;
    st.loss_count = 0;
    st.confidence = 1;
    return fused;
  }

  auto r = camshift_step(*st.tracker, f, cfg.camshift);
  st.tracker = r.state;
  st.confidence = r.confidence;
  if (r.lost) {
    if (++st.loss_count >= cfg.n_loss) {
      st.mode = SelectorMode::Detect;
      st.tracker.reset();
      st.loss_count = 0;
      ++st.loss_events;
    }
    return std::nullopt;
  }
  st.loss_count = 0;
  return r.box;
}

struct VisionError {
  double e_u = 0;
  double e_v = 0;
  double area = 0;
};

inline VisionError distance_vector(const BoundingBox& b, const CameraIntrinsics& k) {
  return {k.width / 2.0 - b.u, k.height / 2.0 - b.v, b.w * b.h};
}

}  // namespace ibvs
