#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "densr/bicubic.hpp"
#include "densr/image.hpp"
#include "densr/rng.hpp"
#include "densr/tensor.hpp"

namespace densr {
namespace dataset {

// Semantic landmark slots. Indices >= kContourStart lie on the face oval.
inline constexpr int kLeftCheek = 0;
inline constexpr int kRightCheek = 1;
inline constexpr int kJawCenter = 2;
inline constexpr int kNoseTip = 3;
inline constexpr int kMouthCenter = 4;
inline constexpr int kLeftEye = 5;
inline constexpr int kRightEye = 6;
inline constexpr int kContourStart = 7;

// Toy parsing taxonomy. The nose is rendered as shaded skin, so it belongs
// to the skin class.
inline constexpr int kClassBackground = 0;
inline constexpr int kClassSkin = 1;
inline constexpr int kClassEye = 2;
inline constexpr int kClassMouth = 3;
inline constexpr int kToyParsingClasses = 4;

inline constexpr int kFaceSize = 128;

/// Consecutive seeds in a group of this size render the same identity with
/// pose/color jitter; the identity embedder's pretraining relies on it.
inline constexpr std::uint64_t kVariantsPerIdentity = 8;

struct Point {
  double x = 0, y = 0;
};

template <class S>
struct FaceRecord {
  Tensor<S> image;            // [3,128,128] in [0,1]
  std::vector<Point> landmarks;
  Tensor<int> parsing;        // [128,128] labels in [0, num_classes)
  int num_parsing_classes = kToyParsingClasses;
  std::uint64_t identity = 0;  // seed / kVariantsPerIdentity
};

template <class S>
struct MaskTemplate {
  Tensor<S> rgba;  // [4,h,w], channel 3 is alpha in [0,1]
  Point anchor_left_cheek, anchor_right_cheek, anchor_jaw;
  std::string id = "custom";

  int height() const { return rgba.shape[1]; }
  int width() const { return rgba.shape[2]; }

  void validate() const {
    if (rgba.rank() != 3 || rgba.shape[0] != 4)
      throw std::invalid_argument("mask template must be [4,h,w]");
    const int h = height(), w = width();
    for (const Point* p : {&anchor_left_cheek, &anchor_right_cheek, &anchor_jaw})
      if (p->x < 0 || p->x > w - 1 || p->y < 0 || p->y > h - 1)
        throw std::invalid_argument("mask anchor outside template bounds");
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
      const S a = rgba.ptr()[3 * static_cast<std::int64_t>(h) * w + i];
      if (a < S(0) || a > S(1)) throw std::invalid_argument("mask alpha outside [0,1]");
    }
  }

  /// Procedural surgical-style template: rounded body, pleat shading, soft
  /// 2 px alpha falloff at the border.
  static MaskTemplate surgical(int w = 64, int h = 44) {
    MaskTemplate t;
    t.id = "surgical-v1";
    t.rgba = Tensor<S>({4, h, w});
    const double rx = w / 2.0, ry = h / 2.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // superellipse body, flat top
        const double nx = (x - rx + 0.5) / (rx - 1.0);
        const double ny = (y - ry + 0.5) / (ry - 1.0);
        const double d = std::pow(std::abs(nx), 3.0) + std::pow(std::abs(std::max(ny, -0.6 * std::abs(ny))), 2.2);
        double alpha = 0.0;
        if (d <= 1.0) {
          const double edge = 1.0 - d;
          alpha = std::min(1.0, edge * 8.0);
        }
        double r = 0.45, g = 0.62, b = 0.85;
        const int pleat = (y * 4) / h;
        if (pleat % 2 == 1) {
          r *= 0.88;
          g *= 0.88;
          b *= 0.92;
        }
        t.rgba.at3(0, y, x) = static_cast<S>(r);
        t.rgba.at3(1, y, x) = static_cast<S>(g);
        t.rgba.at3(2, y, x) = static_cast<S>(b);
        t.rgba.at3(3, y, x) = static_cast<S>(alpha);
      }
    t.anchor_left_cheek = {1.5, h * 0.3};
    t.anchor_right_cheek = {w - 2.5, h * 0.3};
    t.anchor_jaw = {w / 2.0, h - 1.5};
    t.validate();
    return t;
  }

  /// Fully transparent template (identity compositing); test fixture.
  static MaskTemplate transparent(int w = 64, int h = 44) {
    MaskTemplate t = surgical(w, h);
    t.id = "transparent";
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.rgba.at3(3, y, x) = S(0);
    return t;
  }
};

// ---------------------------------------------------------------------------
// Procedural toy faces
// ---------------------------------------------------------------------------

namespace facedet {

struct Geometry {
  double cx, cy;           // face center
  double ax, ay;           // face half-axes
  double eye_dx, eye_dy, eye_r;
  double nose_len, nose_w;
  double mouth_dy, mouth_rx, mouth_ry;
  double skin[3], iris[3], mouth_rgb[3], bg[3];
  double brightness;
};

inline Geometry sample_geometry(std::uint64_t seed) {
  Pcg32 id_rng(seed / kVariantsPerIdentity, 0xfaceull);
  Pcg32 var_rng(seed, 0x7a12ull);

  Geometry g;
  // identity-determined appearance
  g.ax = id_rng.uniform(32, 40);
  g.ay = id_rng.uniform(44, 52);
  g.eye_dx = id_rng.uniform(14, 20);
  g.eye_dy = id_rng.uniform(10, 16);
  g.eye_r = id_rng.uniform(3.5, 5.5);
  g.nose_len = id_rng.uniform(8, 14);
  g.nose_w = id_rng.uniform(3, 5);
  g.mouth_dy = id_rng.uniform(22, 30);
  g.mouth_rx = id_rng.uniform(9, 15);
  g.mouth_ry = id_rng.uniform(3, 5);
  g.skin[0] = id_rng.uniform(0.65, 0.85);
  g.skin[1] = g.skin[0] * id_rng.uniform(0.75, 0.85);
  g.skin[2] = g.skin[1] * id_rng.uniform(0.75, 0.85);
  for (double& v : g.iris) v = id_rng.uniform(0.05, 0.45);
  g.mouth_rgb[0] = id_rng.uniform(0.55, 0.75);
  g.mouth_rgb[1] = id_rng.uniform(0.15, 0.3);
  g.mouth_rgb[2] = id_rng.uniform(0.2, 0.35);
  for (double& v : g.bg) v = id_rng.uniform(0.1, 0.5);

  // per-sample jitter
  g.cx = 64 + var_rng.uniform(-3, 3);
  g.cy = 64 + var_rng.uniform(-3, 3);
  const double s = var_rng.uniform(0.95, 1.05);
  g.ax *= s;
  g.ay *= s;
  g.eye_dx *= s;
  g.eye_dy *= s;
  g.eye_r *= s;
  g.nose_len *= s;
  g.nose_w *= s;
  g.mouth_dy *= s;
  g.mouth_rx *= s;
  g.mouth_ry *= s;
  g.brightness = var_rng.uniform(-0.05, 0.05);
  return g;
}

inline bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

inline bool in_nose(double x, double y, const Geometry& g) {
  if (y < g.cy - 2 || y > g.cy + g.nose_len) return false;
  const double frac = (y - (g.cy - 2)) / (g.nose_len + 2);
  const double half = 0.5 * (1.0 + frac * (g.nose_w - 1.0));
  return std::abs(x - g.cx) <= half;
}

inline int classify(double x, double y, const Geometry& g) {
  if (in_ellipse(x, y, g.cx - g.eye_dx, g.cy - g.eye_dy, g.eye_r, g.eye_r) ||
      in_ellipse(x, y, g.cx + g.eye_dx, g.cy - g.eye_dy, g.eye_r, g.eye_r))
    return kClassEye;
  if (in_ellipse(x, y, g.cx, g.cy + g.mouth_dy, g.mouth_rx, g.mouth_ry)) return kClassMouth;
  if (in_ellipse(x, y, g.cx, g.cy, g.ax, g.ay)) return kClassSkin;
  return kClassBackground;
}

}  // namespace facedet

/// Deterministic procedural face with exactly consistent landmarks and
/// parsing. Seeds within a group of kVariantsPerIdentity share an identity.
template <class S>
FaceRecord<S> make_toy_face(std::uint64_t seed, int num_landmarks = 81,
                            int num_parsing_classes = kToyParsingClasses) {
  if (num_landmarks < 5) throw std::invalid_argument("make_toy_face: need at least 5 landmarks");
  if (num_parsing_classes < 2) throw std::invalid_argument("make_toy_face: need at least 2 classes");

  const auto g = facedet::sample_geometry(seed);
  const int n = kFaceSize;

  FaceRecord<S> rec;
  rec.identity = seed / kVariantsPerIdentity;
  rec.num_parsing_classes = num_parsing_classes;
  rec.image = Tensor<S>({3, n, n});
  rec.parsing = Tensor<int>({n, n});

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double px = x, py = y;
      const int cls = facedet::classify(px, py, g);
      double rgb[3];
      switch (cls) {
        case kClassEye:
          for (int c = 0; c < 3; ++c) rgb[c] = g.iris[c];
          break;
        case kClassMouth:
          for (int c = 0; c < 3; ++c) rgb[c] = g.mouth_rgb[c];
          break;
        case kClassSkin: {
          // radial shading plus a darker nose wedge (still skin class)
          const double dx = (px - g.cx) / g.ax, dy = (py - g.cy) / g.ay;
          double shade = 1.0 - 0.15 * (dx * dx + dy * dy);
          if (facedet::in_nose(px, py, g)) shade *= 0.82;
          for (int c = 0; c < 3; ++c) rgb[c] = g.skin[c] * shade;
          break;
        }
        default:
          for (int c = 0; c < 3; ++c) rgb[c] = g.bg[c] * (0.8 + 0.4 * py / n);
      }
      const int stored = std::min(cls, num_parsing_classes - 1);
      rec.parsing.at2(y, x) = stored;
      for (int c = 0; c < 3; ++c) {
        double v = rgb[c] + g.brightness;
        rec.image.at3(c, y, x) = static_cast<S>(v < 0 ? 0 : (v > 1 ? 1 : v));
      }
    }

  auto clamp_pt = [n](double x, double y) {
    return Point{std::clamp(x, 1.0, n - 2.0), std::clamp(y, 1.0, n - 2.0)};
  };
  rec.landmarks.resize(static_cast<std::size_t>(num_landmarks));
  rec.landmarks[kLeftCheek] = clamp_pt(g.cx - 0.85 * g.ax, g.cy + 0.30 * g.ay);
  rec.landmarks[kRightCheek] = clamp_pt(g.cx + 0.85 * g.ax, g.cy + 0.30 * g.ay);
  rec.landmarks[kJawCenter] = clamp_pt(g.cx, g.cy + 0.92 * g.ay);
  rec.landmarks[kNoseTip] = clamp_pt(g.cx, g.cy + g.nose_len - 1.0);
  if (num_landmarks > kMouthCenter) rec.landmarks[kMouthCenter] = clamp_pt(g.cx, g.cy + g.mouth_dy);
  if (num_landmarks > kLeftEye) rec.landmarks[kLeftEye] = clamp_pt(g.cx - g.eye_dx, g.cy - g.eye_dy);
  if (num_landmarks > kRightEye) rec.landmarks[kRightEye] = clamp_pt(g.cx + g.eye_dx, g.cy - g.eye_dy);
  const int rest = num_landmarks - kContourStart;
  for (int i = 0; i < rest; ++i) {
    const double th = 2.0 * 3.14159265358979323846 * i / rest;
    rec.landmarks[static_cast<std::size_t>(kContourStart + i)] =
        clamp_pt(g.cx + 0.98 * g.ax * std::cos(th), g.cy + 0.98 * g.ay * std::sin(th));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Mask overlay
// ---------------------------------------------------------------------------

struct Affine {
  // [x';y'] = A [x;y] + t
  double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;

  Point apply(const Point& p) const { return {a * p.x + b * p.y + c, d * p.x + e * p.y + f}; }
};

/// Closed-form affine from three point correspondences. Throws when the
/// source triple is collinear (singular system).
inline Affine solve_affine(const Point src[3], const Point dst[3]) {
  const double det = src[0].x * (src[1].y - src[2].y) - src[0].y * (src[1].x - src[2].x) +
                     (src[1].x * src[2].y - src[2].x * src[1].y);
  if (std::abs(det) < 1e-8)
    throw std::invalid_argument("degenerate (collinear) anchor triple: affine system is singular");
  auto cramer = [&](double r0, double r1, double r2, double out[3]) {
    out[0] = (r0 * (src[1].y - src[2].y) - src[0].y * (r1 - r2) + (r1 * src[2].y - r2 * src[1].y)) / det;
    out[1] = (src[0].x * (r1 - r2) - r0 * (src[1].x - src[2].x) + (src[1].x * r2 - src[2].x * r1)) / det;
    out[2] = (src[0].x * (src[1].y * r2 - src[2].y * r1) - src[0].y * (src[1].x * r2 - src[2].x * r1) +
              r0 * (src[1].x * src[2].y - src[2].x * src[1].y)) /
             det;
  };
  Affine m;
  double row[3];
  cramer(dst[0].x, dst[1].x, dst[2].x, row);
  m.a = row[0];
  m.b = row[1];
  m.c = row[2];
  cramer(dst[0].y, dst[1].y, dst[2].y, row);
  m.d = row[0];
  m.e = row[1];
  m.f = row[2];
  return m;
}

/// Warps the template onto the face via the anchor-landmark affine and
/// alpha-composites: out = alpha * mask + (1 - alpha) * face.
template <class S>
Tensor<S> overlay_mask(const FaceRecord<S>& face, const MaskTemplate<S>& tmpl) {
  tmpl.validate();
  if (face.landmarks.size() < 3)
    throw std::invalid_argument("overlay_mask: face needs cheek/jaw landmarks");

  const Point src[3] = {tmpl.anchor_left_cheek, tmpl.anchor_right_cheek, tmpl.anchor_jaw};
  const Point dst[3] = {face.landmarks[kLeftCheek], face.landmarks[kRightCheek],
                        face.landmarks[kJawCenter]};
  const Affine fwd = solve_affine(src, dst);

  const double det = fwd.a * fwd.e - fwd.b * fwd.d;
  if (std::abs(det) < 1e-10)
    throw std::invalid_argument("degenerate face anchor triple: affine not invertible");
  // inverse map face -> template
  const double ia = fwd.e / det, ib = -fwd.b / det, id = -fwd.d / det, ie = fwd.a / det;

  const int th = tmpl.height(), tw = tmpl.width();
  const int n = face.image.shape[1];
  Tensor<S> out = face.image;

  auto sample = [&](int ch, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto cl = [&](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    const double v00 = tmpl.rgba.at3(ch, cl(y0, th), cl(x0, tw));
    const double v01 = tmpl.rgba.at3(ch, cl(y0, th), cl(x0 + 1, tw));
    const double v10 = tmpl.rgba.at3(ch, cl(y0 + 1, th), cl(x0, tw));
    const double v11 = tmpl.rgba.at3(ch, cl(y0 + 1, th), cl(x0 + 1, tw));
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
  };

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double rx = x - fwd.c, ry = y - fwd.f;
      const double qx = ia * rx + ib * ry, qy = id * rx + ie * ry;
      if (qx < -0.5 || qx >= tw - 0.5 || qy < -0.5 || qy >= th - 0.5) continue;
      const double alpha = sample(3, qx, qy);
      if (alpha <= 0) continue;
      for (int c = 0; c < 3; ++c) {
        const double m = sample(c, qx, qy);
        const double v = alpha * m + (1 - alpha) * static_cast<double>(out.at3(c, y, x));
        out.at3(c, y, x) = static_cast<S>(v < 0 ? 0 : (v > 1 ? 1 : v));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Landmark heatmaps / parsing targets
// ---------------------------------------------------------------------------

/// K unnormalized Gaussian bumps, peak 1 at each landmark after scaling
/// coordinates from (src_w, src_h) pixel space to the target size.
template <class S>
Tensor<S> render_landmark_heatmaps(const std::vector<Point>& landmarks, int src_w, int src_h,
                                   int out_h, int out_w, double sigma) {
  if (sigma <= 0) throw std::invalid_argument("heatmap sigma must be positive");
  const int k = static_cast<int>(landmarks.size());
  Tensor<S> out({k, out_h, out_w});
  const double sx = static_cast<double>(out_w) / src_w;
  const double sy = static_cast<double>(out_h) / src_h;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < k; ++i) {
    const double lx = (landmarks[static_cast<std::size_t>(i)].x + 0.5) * sx - 0.5;
    const double ly = (landmarks[static_cast<std::size_t>(i)].y + 0.5) * sy - 0.5;
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const double d2 = (x - lx) * (x - lx) + (y - ly) * (y - ly);
        out.at3(i, y, x) = static_cast<S>(std::exp(-d2 * inv));
      }
  }
  return out;
}

template <class S>
Tensor<S> render_landmark_heatmaps(const std::vector<Point>& landmarks, int size, double sigma) {
  return render_landmark_heatmaps<S>(landmarks, size, size, size, size, sigma);
}

/// One-hot encodes labels and box-averages down to (out, out); per-pixel
/// probabilities sum to exactly 1.
template <class S>
Tensor<S> parsing_probability_maps(const Tensor<int>& labels, int num_classes, int out) {
  const int h = labels.shape[0], w = labels.shape[1];
  if (h % out != 0 || w % out != 0)
    throw std::invalid_argument("parsing map size must be divisible by target size");
  const int bh = h / out, bw = w / out;
  Tensor<S> maps({num_classes, out, out});
  const S norm = S(1) / static_cast<S>(bh * bw);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cls = labels.at2(y, x);
      if (cls < 0 || cls >= num_classes) throw std::invalid_argument("parsing label out of range");
      maps.at3(cls, y / bh, x / bw) += norm;
    }
  return maps;
}

// ---------------------------------------------------------------------------
// Paired samples
// ---------------------------------------------------------------------------

template <class S>
struct PairedSample {
  Tensor<S> lr_masked;     // [3, 128/scale, 128/scale]
  Tensor<S> lr_clean;
  Tensor<S> hr_clean;      // [3,128,128]
  Tensor<S> gamma_gt;      // [3, lr, lr], |lr_masked - lr_clean|
  Tensor<S> landmarks_gt;  // [K, prior, prior]
  Tensor<S> parsing_gt;    // [C_p, prior, prior]
  int scale = 4;
};

struct SampleConfig {
  int scale = 4;
  double heatmap_sigma = 1.5;
  int prior_size = 32;
};

template <class S>
PairedSample<S> make_sample(const FaceRecord<S>& face, const MaskTemplate<S>& tmpl,
                            const SampleConfig& cfg) {
  PairedSample<S> s;
  s.scale = cfg.scale;
  s.hr_clean = face.image;
  Tensor<S> hr_masked = overlay_mask(face, tmpl);
  s.lr_masked = degrade(hr_masked, cfg.scale);
  s.lr_clean = degrade(face.image, cfg.scale);
  s.gamma_gt = Tensor<S>(s.lr_masked.shape);
  for (std::int64_t i = 0; i < s.gamma_gt.numel(); ++i)
    s.gamma_gt[i] = std::abs(s.lr_masked[i] - s.lr_clean[i]);
  s.landmarks_gt = render_landmark_heatmaps<S>(face.landmarks, kFaceSize, kFaceSize,
                                               cfg.prior_size, cfg.prior_size, cfg.heatmap_sigma);
  s.parsing_gt = parsing_probability_maps<S>(face.parsing, face.num_parsing_classes, cfg.prior_size);
  return s;
}

// ---------------------------------------------------------------------------
// On-disk dataset
// ---------------------------------------------------------------------------

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetMeta {
  int format_version = kDatasetFormatVersion;
  std::uint64_t seed = 0;
  int count = 0;
  int scale = 4;
  int num_landmarks = 81;
  int num_parsing_classes = kToyParsingClasses;
  double heatmap_sigma = 1.5;
  int prior_size = 32;
  std::string template_id = "surgical-v1";
};

inline nlohmann::json meta_to_json(const DatasetMeta& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["kind"] = "densr-dataset";
  j["seed"] = m.seed;
  j["count"] = m.count;
  j["scale"] = m.scale;
  j["num_landmarks"] = m.num_landmarks;
  j["num_parsing_classes"] = m.num_parsing_classes;
  j["heatmap_sigma"] = m.heatmap_sigma;
  j["prior_size"] = m.prior_size;
  j["template"] = m.template_id;
  return j;
}

template <class S>
struct Dataset {
  DatasetMeta meta;
  std::vector<PairedSample<S>> samples;
};

inline std::string sample_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return buf;
}

template <class S>
void write_dataset(const std::vector<PairedSample<S>>& samples, const std::string& dir,
                   const DatasetMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j = meta_to_json(meta);
  j["count"] = static_cast<int>(samples.size());
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = sample_dir_name(static_cast<int>(i));
    const fs::path sd = fs::path(dir) / name;
    fs::create_directories(sd);
    const auto& s = samples[i];
    io::write_png((sd / "lr_masked.png").string(), s.lr_masked);
    io::write_png((sd / "lr_clean.png").string(), s.lr_clean);
    io::write_png((sd / "hr_clean.png").string(), s.hr_clean);
    io::write_raw_tensor((sd / "gamma.raw").string(), s.gamma_gt);
    io::write_raw_tensor((sd / "landmarks.raw").string(), s.landmarks_gt);
    io::write_raw_tensor((sd / "parsing.raw").string(), s.parsing_gt);
    list.push_back({{"id", name}, {"scale", s.scale}});
  }
  j["samples"] = list;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << j.dump(2) << "\n";
}

template <class S>
Dataset<S> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("missing dataset manifest: " + mpath.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt dataset manifest: " + std::string(e.what()));
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kDatasetFormatVersion)
    throw std::runtime_error("unsupported dataset format version in " + mpath.string());

  Dataset<S> ds;
  ds.meta.format_version = j["format_version"].get<int>();
  ds.meta.seed = j.value("seed", std::uint64_t(0));
  ds.meta.scale = j.value("scale", 4);
  ds.meta.num_landmarks = j.value("num_landmarks", 81);
  ds.meta.num_parsing_classes = j.value("num_parsing_classes", kToyParsingClasses);
  ds.meta.heatmap_sigma = j.value("heatmap_sigma", 1.5);
  ds.meta.prior_size = j.value("prior_size", 32);
  ds.meta.template_id = j.value("template", std::string("surgical-v1"));
  ds.meta.count = j.value("count", 0);

  for (const auto& rec : j["samples"]) {
    const fs::path sd = fs::path(dir) / rec["id"].get<std::string>();
    PairedSample<S> s;
    s.scale = rec.value("scale", ds.meta.scale);
    s.lr_masked = io::read_png<S>((sd / "lr_masked.png").string());
    s.lr_clean = io::read_png<S>((sd / "lr_clean.png").string());
    s.hr_clean = io::read_png<S>((sd / "hr_clean.png").string());
    s.gamma_gt = io::read_raw_tensor<S>((sd / "gamma.raw").string());
    s.landmarks_gt = io::read_raw_tensor<S>((sd / "landmarks.raw").string());
    s.parsing_gt = io::read_raw_tensor<S>((sd / "parsing.raw").string());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// Hash of the manifest contents; identical seeds and config give identical
/// hashes.
inline std::uint64_t manifest_hash(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("missing dataset manifest in " + dir);
  nlohmann::json j;
  in >> j;
  const std::string dump = j.dump();
  return fnv1a(dump.data(), dump.size());
}

/// Deterministic synthesis of `count` paired samples; sample i uses face
/// seed base_seed + i.
template <class S>
std::vector<PairedSample<S>> synthesize_dataset(std::uint64_t base_seed, int count,
                                                const SampleConfig& cfg, int num_landmarks = 81,
                                                int num_parsing_classes = kToyParsingClasses,
                                                const MaskTemplate<S>* tmpl = nullptr) {
  MaskTemplate<S> def = MaskTemplate<S>::surgical();
  const MaskTemplate<S>& t = tmpl ? *tmpl : def;
  std::vector<PairedSample<S>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    FaceRecord<S> face = make_toy_face<S>(base_seed + static_cast<std::uint64_t>(i), num_landmarks,
                                          num_parsing_classes);
    out.push_back(make_sample(face, t, cfg));
  }
  return out;
}

}  // namespace dataset
}  // namespace densr
