#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dunet/common.hpp"
#include "dunet/heatmap.hpp"
#include "dunet/png_io.hpp"
#include "dunet/pts.hpp"
#include "dunet/random.hpp"
#include "dunet/tensor.hpp"
#include "dunet/transform.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------
//
// A sample is a 128x128 RGB image in [0,1] plus pixel-frame landmark
// coordinates.  Sources:
//   * generate()            procedural face-like patterns, seeded;
//   * load_pts_dataset()    directory of PNG + same-stem .pts files;
//   * load_manifest_dataset() JSON manifest listing (image, pts) path pairs.
// Non-128x128 inputs are cropped from the landmark bounding box expanded by
// 25% per side and rescaled; landmarks follow the same affine map.

using Landmarks = std::vector<std::array<double, 2>>;

constexpr int kImageSize = 128;

struct Sample {
  Tensor<float> image;  // (1, 3, 128, 128)
  Landmarks landmarks;
  std::string id;
};

using Dataset = std::vector<Sample>;

// Landmarks may sit moderately outside the frame after augmentation, but a
// quarter-frame margin is the contract every consumer can rely on.
inline void check_landmark_bounds(const Landmarks& pts) {
  constexpr double lo = -32.0, hi = 160.0;
  for (const auto& p : pts) {
    if (!(p[0] >= lo && p[0] < hi && p[1] >= lo && p[1] < hi)) {
      throw NumericError("sample landmarks escaped the [-32,160) frame margin");
    }
  }
}

// ---------------------------------------------------------------------------
// Mirror pairings
// ---------------------------------------------------------------------------

// Toy 5-point layout: {left eye, right eye, nose tip, left/right mouth corner}.
inline std::vector<std::pair<int, int>> toy5_flip_pairs() {
  return {{0, 1}, {3, 4}};
}

// Standard 68-point mirror table (jaw, brows, nose base, eyes, outer/inner lips).
inline std::vector<std::pair<int, int>> ibug68_flip_pairs() {
  return {{0, 16},  {1, 15},  {2, 14},  {3, 13},  {4, 12},  {5, 11},  {6, 10},
          {7, 9},   {17, 26}, {18, 25}, {19, 24}, {20, 23}, {21, 22}, {31, 35},
          {32, 34}, {36, 45}, {37, 44}, {38, 43}, {39, 42}, {40, 47}, {41, 46},
          {48, 54}, {49, 53}, {50, 52}, {55, 59}, {56, 58}, {60, 64}, {61, 63},
          {65, 67}};
}

inline std::vector<std::pair<int, int>> flip_pairs_for(int n_landmarks) {
  if (n_landmarks == 5) return toy5_flip_pairs();
  if (n_landmarks == 68) return ibug68_flip_pairs();
  throw ConfigError("no built-in mirror table for " + std::to_string(n_landmarks) +
                    " landmarks; supply a pairs file");
}

// Text format: one "i j" pair per line; blank lines and '#' comments allowed.
inline std::vector<std::pair<int, int>> parse_flip_pairs(std::istream& is) {
  std::vector<std::pair<int, int>> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    int a, b;
    if (!(ls >> a)) continue;  // blank / comment-only line
    if (!(ls >> b)) throw ParseError("flip pairs: expected two indices", lineno);
    int extra;
    if (ls >> extra) throw ParseError("flip pairs: more than two indices", lineno);
    if (a < 0 || b < 0 || a == b) {
      throw ParseError("flip pairs: indices must be distinct and non-negative", lineno);
    }
    pairs.emplace_back(a, b);
  }
  return pairs;
}

inline std::vector<std::pair<int, int>> load_flip_pairs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("flip pairs: cannot open " + path);
  return parse_flip_pairs(is);
}

// ---------------------------------------------------------------------------
// Procedural generator
// ---------------------------------------------------------------------------

struct SynthConfig {
  int n_landmarks = 5;  // 5 or 68
  std::uint64_t seed = 0;
  double shape_jitter = 1.0;   // scales every geometric variation below
  double texture_noise = 0.05; // per-pixel uniform noise amplitude
  double occluder_prob = 0.3;  // chance of random occluding rectangles
};

namespace detail {

// All analytic coordinates of one rendered face.  Landmark ground truth is
// read straight from these fields, and the rasteriser draws from the same
// fields, so the two agree by construction.
struct FaceGeom {
  double cx, cy;        // head centre
  double ax, ay;        // head semi-axes
  double eye_lx, eye_rx, eye_y;
  double eye_ax, eye_ay;  // eye semi-axes (sclera)
  double pupil_r;
  double brow_dy;       // brow centre height above eye centre
  double nose_top_x, nose_top_y;
  double nose_x, nose_y;   // tip (centre of wedge base)
  double nose_hw;          // wedge base half-width
  double mouth_x, mouth_y;
  double mouth_hw, mouth_hh;
};

inline FaceGeom make_face_geom(double jit, Rng& rng) {
  auto u = [&](double half) { return rng.uniform(-half, half) * jit; };
  FaceGeom g;
  // Base centre sits on the frame's mirror axis ((size-1)/2), so the
  // zero-jitter face is exactly symmetric under the flip augmentation.
  g.cx = 63.5 + u(6.0);
  g.cy = 63.5 + u(6.0);
  g.ax = 42.0 * (1.0 + u(0.12));
  g.ay = 52.0 * (1.0 + u(0.12));
  const double exo = 18.0 * (1.0 + u(0.15));
  const double eyo = 14.0 * (1.0 + u(0.15));
  g.eye_lx = g.cx - exo;
  g.eye_rx = g.cx + exo;
  g.eye_y = g.cy - eyo;
  g.eye_ax = 5.5 * (1.0 + u(0.15));
  g.eye_ay = 3.2 * (1.0 + u(0.15));
  g.pupil_r = 1.9 * (1.0 + u(0.15));
  g.brow_dy = 8.0 * (1.0 + u(0.2));
  g.nose_x = g.cx + u(2.0);
  g.nose_y = g.cy + 10.0 * (1.0 + u(0.2));
  g.nose_top_x = g.cx + u(1.5);
  g.nose_top_y = g.cy - 10.0 * (1.0 + u(0.2));
  g.nose_hw = 6.0 * (1.0 + u(0.2));
  g.mouth_x = g.cx + u(3.0);
  g.mouth_y = g.cy + 28.0 * (1.0 + u(0.12));
  g.mouth_hw = 11.0 * (1.0 + u(0.2));
  g.mouth_hh = 3.0 * (1.0 + u(0.25));
  return g;
}

// Coverage-weighted paint: alpha from a 2x2 sub-pixel sample of `inside`.
template <typename F>
void paint(Tensor<float>& img, double x0, double y0, double x1, double y1,
           const std::array<float, 3>& rgb, F&& inside) {
  const int w = img.w(), h = img.h();
  const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int px1 = std::min(w - 1, static_cast<int>(std::ceil(x1)));
  const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int py1 = std::min(h - 1, static_cast<int>(std::ceil(y1)));
  constexpr double off[2] = {-0.25, 0.25};
  for (int y = py0; y <= py1; ++y) {
    for (int x = px0; x <= px1; ++x) {
      int hits = 0;
      for (double dy : off) {
        for (double dx : off) {
          if (inside(x + dx, y + dy)) ++hits;
        }
      }
      if (hits == 0) continue;
      const float a = static_cast<float>(hits) / 4.0f;
      for (int c = 0; c < 3; ++c) {
        float& v = img.at(0, c, y, x);
        v = (1.0f - a) * v + a * rgb[c];
      }
    }
  }
}

inline void paint_ellipse(Tensor<float>& img, double cx, double cy, double ax,
                          double ay, const std::array<float, 3>& rgb) {
  paint(img, cx - ax, cy - ay, cx + ax, cy + ay, rgb, [&](double x, double y) {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  });
}

inline void paint_rect(Tensor<float>& img, double cx, double cy, double hw,
                       double hh, const std::array<float, 3>& rgb) {
  paint(img, cx - hw, cy - hh, cx + hw, cy + hh, rgb, [&](double x, double y) {
    return std::abs(x - cx) <= hw && std::abs(y - cy) <= hh;
  });
}

inline void paint_triangle(Tensor<float>& img, std::array<double, 2> a,
                           std::array<double, 2> b, std::array<double, 2> c,
                           const std::array<float, 3>& rgb) {
  const double x0 = std::min({a[0], b[0], c[0]}), x1 = std::max({a[0], b[0], c[0]});
  const double y0 = std::min({a[1], b[1], c[1]}), y1 = std::max({a[1], b[1], c[1]});
  auto edge = [](const std::array<double, 2>& p, const std::array<double, 2>& q,
                 double x, double y) {
    return (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
  };
  paint(img, x0, y0, x1, y1, rgb, [&](double x, double y) {
    const double e0 = edge(a, b, x, y), e1 = edge(b, c, x, y), e2 = edge(c, a, x, y);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  });
}

inline Tensor<float> render_face(const FaceGeom& g, const SynthConfig& cfg, Rng& rng) {
  Tensor<float> img(1, 3, kImageSize, kImageSize);
  // Background: dark grey with a mild per-sample tint.
  const std::array<float, 3> bg = {static_cast<float>(0.20 + rng.uniform(-0.05, 0.05)),
                                   static_cast<float>(0.20 + rng.uniform(-0.05, 0.05)),
                                   static_cast<float>(0.20 + rng.uniform(-0.05, 0.05))};
  for (int c = 0; c < 3; ++c) {
    std::fill_n(img.data() + static_cast<std::size_t>(c) * img.plane(), img.plane(),
                bg[c]);
  }
  const float skin_jit = static_cast<float>(rng.uniform(-0.06, 0.06));
  const std::array<float, 3> skin = {0.85f + skin_jit, 0.71f + skin_jit,
                                     0.60f + skin_jit};
  const std::array<float, 3> dark = {0.10f, 0.08f, 0.08f};
  const std::array<float, 3> white = {0.95f, 0.95f, 0.93f};
  const std::array<float, 3> nose_shade = {0.70f + skin_jit, 0.55f + skin_jit,
                                           0.45f + skin_jit};
  const std::array<float, 3> lip = {0.62f, 0.22f, 0.22f};

  paint_ellipse(img, g.cx, g.cy, g.ax, g.ay, skin);
  // Brows: dark bars above the eyes.
  paint_rect(img, g.eye_lx, g.eye_y - g.brow_dy, 7.0, 1.4, dark);
  paint_rect(img, g.eye_rx, g.eye_y - g.brow_dy, 7.0, 1.4, dark);
  // Eyes: sclera ellipse + pupil.
  paint_ellipse(img, g.eye_lx, g.eye_y, g.eye_ax, g.eye_ay, white);
  paint_ellipse(img, g.eye_rx, g.eye_y, g.eye_ax, g.eye_ay, white);
  paint_ellipse(img, g.eye_lx, g.eye_y, g.pupil_r, g.pupil_r, dark);
  paint_ellipse(img, g.eye_rx, g.eye_y, g.pupil_r, g.pupil_r, dark);
  // Nose wedge: apex at the bridge, base centred on the tip.
  paint_triangle(img, {g.nose_top_x, g.nose_top_y}, {g.nose_x - g.nose_hw, g.nose_y},
                 {g.nose_x + g.nose_hw, g.nose_y}, nose_shade);
  // Mouth bar.
  paint_rect(img, g.mouth_x, g.mouth_y, g.mouth_hw, g.mouth_hh, lip);

  // Occluding rectangles (ground truth stays at the occluded position).
  if (rng.bernoulli(cfg.occluder_prob)) {
    const int count = rng.bernoulli(0.3) ? 2 : 1;
    for (int i = 0; i < count; ++i) {
      const double ox = rng.uniform(20.0, 108.0);
      const double oy = rng.uniform(20.0, 108.0);
      const double ohw = rng.uniform(5.0, 14.0);
      const double ohh = rng.uniform(5.0, 14.0);
      const std::array<float, 3> oc = {static_cast<float>(rng.uniform()),
                                       static_cast<float>(rng.uniform()),
                                       static_cast<float>(rng.uniform())};
      paint_rect(img, ox, oy, ohw, ohh, oc);
    }
  }

  if (cfg.texture_noise > 0.0) {
    for (auto& v : img.vec()) {
      v = std::min(1.0f, std::max(0.0f, v + static_cast<float>(rng.uniform(
                                                -cfg.texture_noise, cfg.texture_noise))));
    }
  }
  return img;
}

inline Landmarks landmarks_5(const FaceGeom& g) {
  return {{g.eye_lx, g.eye_y},
          {g.eye_rx, g.eye_y},
          {g.nose_x, g.nose_y},
          {g.mouth_x - g.mouth_hw, g.mouth_y},
          {g.mouth_x + g.mouth_hw, g.mouth_y}};
}

// Standard 68-slot layout: 0-16 jaw, 17-26 brows, 27-35 nose, 36-47 eyes,
// 48-67 lips.  Points sit on the same analytic part outlines the rasteriser
// draws.
inline Landmarks landmarks_68(const FaceGeom& g) {
  Landmarks p;
  p.reserve(68);
  for (int i = 0; i < 17; ++i) {  // jaw: lower head-ellipse arc, left to right
    const double th = M_PI - i * (M_PI / 16.0);
    p.push_back({g.cx + g.ax * std::cos(th), g.cy + g.ay * std::sin(th)});
  }
  auto brow = [&](double ex) {
    const double arc[5] = {0.0, 1.2, 1.6, 1.2, 0.0};
    for (int j = 0; j < 5; ++j) {
      p.push_back({ex + (j - 2) * 3.3, g.eye_y - g.brow_dy - arc[j]});
    }
  };
  brow(g.eye_lx);
  brow(g.eye_rx);
  for (int j = 0; j < 4; ++j) {  // nose bridge, top to tip
    const double t = j / 3.0;
    p.push_back({g.nose_top_x + t * (g.nose_x - g.nose_top_x),
                 g.nose_top_y + t * (g.nose_y - 3.0 - g.nose_top_y)});
  }
  {  // nose base
    const double dip[5] = {0.0, 0.8, 1.2, 0.8, 0.0};
    for (int j = 0; j < 5; ++j) {
      p.push_back({g.nose_x + (j - 2) * (g.nose_hw / 2.0), g.nose_y + dip[j]});
    }
  }
  auto eye = [&](double ex) {
    const double a = g.eye_ax, b = g.eye_ay;
    p.push_back({ex - a, g.eye_y});
    p.push_back({ex - a / 2.0, g.eye_y - 0.9 * b});
    p.push_back({ex + a / 2.0, g.eye_y - 0.9 * b});
    p.push_back({ex + a, g.eye_y});
    p.push_back({ex + a / 2.0, g.eye_y + 0.9 * b});
    p.push_back({ex - a / 2.0, g.eye_y + 0.9 * b});
  };
  eye(g.eye_lx);
  eye(g.eye_rx);
  for (int j = 0; j < 12; ++j) {  // outer lip, from the left corner over the top
    const double th = M_PI + j * (M_PI / 6.0);
    p.push_back({g.mouth_x + g.mouth_hw * std::cos(th),
                 g.mouth_y + (g.mouth_hh + 1.0) * std::sin(th)});
  }
  for (int j = 0; j < 8; ++j) {  // inner lip
    const double th = M_PI + j * (M_PI / 4.0);
    p.push_back({g.mouth_x + 0.7 * g.mouth_hw * std::cos(th),
                 g.mouth_y + 0.5 * g.mouth_hh * std::sin(th)});
  }
  return p;
}

}  // namespace detail

inline Sample generate_sample(const SynthConfig& cfg, std::uint64_t index) {
  if (cfg.n_landmarks != 5 && cfg.n_landmarks != 68) {
    throw ConfigError("generator supports 5 or 68 landmarks");
  }
  // Per-sample stream: splitmix of (seed, index), so sample i is the same
  // whatever subset of the dataset is materialised.
  std::uint64_t z = cfg.seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  Rng rng(z ^ (z >> 31));
  const auto geom = detail::make_face_geom(cfg.shape_jitter, rng);
  Sample s;
  s.image = detail::render_face(geom, cfg, rng);
  s.landmarks =
      cfg.n_landmarks == 5 ? detail::landmarks_5(geom) : detail::landmarks_68(geom);
  s.id = "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(index);
  check_landmark_bounds(s.landmarks);
  return s;
}

inline Dataset generate(const SynthConfig& cfg, int n) {
  if (n < 0) throw ConfigError("generate: negative sample count");
  Dataset ds;
  ds.reserve(n);
  for (int i = 0; i < n; ++i) ds.push_back(generate_sample(cfg, i));
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

inline Sample apply_augmentation(const Sample& s, const TransformSpec& t) {
  Sample out;
  out.image = apply_to_image(t, s.image);
  out.landmarks = apply_to_landmarks(t, s.landmarks);
  out.id = s.id;
  check_landmark_bounds(out.landmarks);
  return out;
}

// Random flip (p=1/2), rotation U(-40, 40) degrees, scale U(0.8, 1.2), all
// about the frame centre; draws happen in exactly that order.  Returns the
// transformed sample together with the spec that produced it, so callers can
// re-derive either side of the pair.
inline std::pair<Sample, TransformSpec> augment(
    const Sample& s, const std::vector<std::pair<int, int>>& flip_pairs, Rng& rng) {
  const bool flip = rng.bernoulli(0.5);
  const double rot = rng.uniform(-40.0, 40.0);
  const double scl = rng.uniform(0.8, 1.2);
  TransformSpec t = TransformSpec::centred_transform(s.image.w(), s.image.h(), rot,
                                                     scl, flip, flip_pairs);
  return {apply_augmentation(s, t), std::move(t)};
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

// Crop-and-rescale to out_size x out_size from the landmark bounding box
// expanded by `expand` of its width/height on each side.  The box centre maps
// to the frame centre; landmarks follow the same affine map as the pixels.
inline Sample crop_to_face(const Tensor<float>& img, const Landmarks& pts,
                           const std::string& id, int out_size = kImageSize,
                           double expand = 0.25) {
  if (pts.empty()) throw ConfigError("crop_to_face: empty landmark set");
  double x0 = pts[0][0], x1 = pts[0][0], y0 = pts[0][1], y1 = pts[0][1];
  for (const auto& p : pts) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  const double w = x1 - x0, h = y1 - y0;
  if (w <= 0.0 || h <= 0.0) throw ConfigError("crop_to_face: degenerate bounding box");
  const double ex0 = x0 - expand * w, ew = w * (1.0 + 2.0 * expand);
  const double ey0 = y0 - expand * h, eh = h * (1.0 + 2.0 * expand);
  const double sx = out_size / ew, sy = out_size / eh;
  const TransformSpec t = TransformSpec::from_affine(
      img.w(), img.h(), {sx, 0.0, -sx * ex0, 0.0, sy, -sy * ey0});
  Sample s;
  s.image = apply_to_image(t, img, out_size, out_size);
  s.landmarks = apply_to_landmarks(t, pts);
  s.id = id;
  check_landmark_bounds(s.landmarks);
  return s;
}

namespace detail {

inline Sample make_sample(const Tensor<float>& img, const Landmarks& pts,
                          const std::string& id) {
  if (img.h() == kImageSize && img.w() == kImageSize) {
    Sample s{img, pts, id};
    check_landmark_bounds(s.landmarks);
    return s;
  }
  return crop_to_face(img, pts, id);
}

}  // namespace detail

// Pairs every PNG in `dir` with its same-stem .pts file.  Files without a
// partner, or whose landmark count disagrees with the first loaded sample,
// are skipped with a warning on `warn`; malformed .pts files are errors.
inline Dataset load_pts_dataset(const std::string& dir,
                                std::ostream& warn = std::cerr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("dataset: not a directory: " + dir);
  std::vector<fs::path> pngs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      pngs.push_back(e.path());
    }
  }
  std::sort(pngs.begin(), pngs.end());
  Dataset ds;
  std::size_t expected = 0;
  for (const auto& png : pngs) {
    fs::path pts_path = png;
    pts_path.replace_extension(".pts");
    if (!fs::exists(pts_path)) {
      warn << "warning: skipping " << png.string() << ": no matching .pts file\n";
      continue;
    }
    const auto pts = read_pts(pts_path.string());
    if (expected == 0) expected = pts.size();
    if (pts.size() != expected) {
      warn << "warning: skipping " << png.string() << ": " << pts.size()
           << " landmarks, dataset has " << expected << "\n";
      continue;
    }
    ds.push_back(detail::make_sample(read_png_rgb(png.string()), pts,
                                     png.stem().string()));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Manifest round trip
// ---------------------------------------------------------------------------
//
// save_dataset() writes imgs/<id>.png, pts/<id>.pts and a manifest.json whose
// entries are paths relative to the manifest's own directory.

inline std::string save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "imgs");
  fs::create_directories(fs::path(dir) / "pts");
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& s : ds) {
    const std::string img_rel = "imgs/" + s.id + ".png";
    const std::string pts_rel = "pts/" + s.id + ".pts";
    write_png_rgb((fs::path(dir) / img_rel).string(), s.image);
    write_pts((fs::path(dir) / pts_rel).string(), s.landmarks);
    manifest.push_back({{"image", img_rel}, {"pts", pts_rel}});
  }
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ofstream os(manifest_path);
  if (!os) throw IoError("dataset: cannot write " + manifest_path);
  os << manifest.dump(2) << "\n";
  return manifest_path;
}

inline Dataset load_manifest_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream is(manifest_path);
  if (!is) throw IoError("dataset: cannot open " + manifest_path);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (!manifest.is_array()) throw ParseError("manifest: expected a JSON array");
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset ds;
  for (const auto& entry : manifest) {
    if (!entry.contains("image") || !entry.contains("pts")) {
      throw ParseError("manifest: entry missing image/pts path");
    }
    const fs::path img_path = base / entry["image"].get<std::string>();
    const fs::path pts_path = base / entry["pts"].get<std::string>();
    ds.push_back(detail::make_sample(read_png_rgb(img_path.string()),
                                     read_pts(pts_path.string()),
                                     img_path.stem().string()));
  }
  return ds;
}

// Stack selected samples into one NCHW batch.
inline Tensor<float> make_batch(const Dataset& ds, const std::vector<int>& idx) {
  if (idx.empty()) throw ShapeError("batch", "make_batch: empty index list");
  const int h = ds.at(idx[0]).image.h(), w = ds.at(idx[0]).image.w();
  Tensor<float> batch(static_cast<int>(idx.size()), 3, h, w);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& img = ds.at(idx[i]).image;
    if (img.h() != h || img.w() != w) {
      throw ShapeError("height", "make_batch: mixed sample resolutions");
    }
    std::copy(img.data(), img.data() + img.sample_stride(),
              batch.sample(static_cast<int>(i)));
  }
  return batch;
}

}  // namespace dunet
