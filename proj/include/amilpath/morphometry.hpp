#pragma once
// Nucleus segmentation and per-nucleus shape measurement on RGB patches.
//
// The default segmenter is classical: project onto the hematoxylin axis by
// stain deconvolution, Otsu-threshold, fill holes, split touching nuclei
// with a distance-transform watershed, and drop specks. It hides behind an
// interface so a learned segmenter can be swapped in.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/image.hpp"

namespace amilpath {

// One segmented nucleus: a binary window at an offset inside the patch.
struct NucleusMask {
  int64_t x0 = 0, y0 = 0;
  int64_t width = 0, height = 0;
  std::vector<uint8_t> mask;  // row-major, 1 = nucleus

  bool at(int64_t x, int64_t y) const {
    return mask[static_cast<size_t>(y * width + x)] != 0;
  }
  int64_t area() const {
    int64_t a = 0;
    for (uint8_t v : mask) a += v;
    return a;
  }
};

struct NucleusShape {
  double area = 0.0;        // px^2
  double major_axis = 0.0;  // full axis lengths of the moment ellipse, px
  double minor_axis = 0.0;
  double orientation = 0.0;  // degrees in [-90, 90), axial
  bool orientation_defined = false;
  double circumference = 0.0;  // px
  double circularity = 0.0;    // 4*pi*A / P^2
  double rectangularity = 0.0;  // A / min rotated bounding box
  bool degenerate_minor = false;  // 1 px floor applied
};

namespace morpho {

constexpr int64_t kMinNucleusArea = 40;   // px^2; smaller components are specks
// Watershed markers: dist >= level*max. Calibrated on rasterized disks:
// pixel quantization inflates the saddle depth of two r=16 disks 1.5r apart
// to ~0.71*max (continuum value 0.66), so the level must clear 0.71 while
// staying low enough that mildly elongated single nuclei keep one core.
constexpr double kMarkerLevel = 0.75;
constexpr double kMinStainSeparation = 0.15;  // OD units; below it: no nuclei
constexpr double kChordTolerance = 0.5;   // px; contour polygonization slack

// Optical density of one channel; +1 keeps pure white at exactly zero.
inline double optical_density(uint8_t v) {
  return -std::log10((static_cast<double>(v) + 1.0) / 256.0);
}

// Hematoxylin concentration per pixel (Ruifrok-Johnston stain separation
// with the standard H&E matrix).
inline std::vector<double> hematoxylin_image(const ImageRgb& img) {
  // Rows: hematoxylin, eosin, residual; each a unit RGB absorption vector.
  static const double stains[3][3] = {{0.650, 0.704, 0.286},
                                      {0.072, 0.990, 0.105},
                                      {0.268, 0.570, 0.776}};
  double m[3][3];
  for (int i = 0; i < 3; ++i) {
    double n = std::sqrt(stains[i][0] * stains[i][0] + stains[i][1] * stains[i][1] +
                         stains[i][2] * stains[i][2]);
    for (int j = 0; j < 3; ++j) m[i][j] = stains[i][j] / n;
  }
  // Invert the 3x3 by adjugate; the H&E matrix is well conditioned.
  double inv[3][3];
  double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  require(std::abs(det) > 1e-9, "stain matrix is singular");
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[1][0] = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[0][1] = -(m[0][1] * m[2][2] - m[0][2] * m[2][1]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[2][1] = -(m[0][0] * m[2][1] - m[0][1] * m[2][0]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][2] = -(m[0][0] * m[1][2] - m[0][2] * m[1][0]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;

  std::vector<double> h(static_cast<size_t>(img.width() * img.height()));
  for (int64_t y = 0; y < img.height(); ++y)
    for (int64_t x = 0; x < img.width(); ++x) {
      Rgb c = img.at(x, y);
      double od[3] = {optical_density(c.r), optical_density(c.g), optical_density(c.b)};
      // First row of the inverse maps OD to hematoxylin concentration.
      double v = inv[0][0] * od[0] + inv[1][0] * od[1] + inv[2][0] * od[2];
      h[static_cast<size_t>(y * img.width() + x)] = std::max(v, 0.0);
    }
  return h;
}

// Otsu's threshold over a 256-bin histogram of [lo, hi]. Returns the bin
// midpoint maximizing between-class variance.
inline double otsu_threshold(const std::vector<double>& values, double lo, double hi) {
  require(hi > lo, "empty value range");
  constexpr int kBins = 256;
  std::array<int64_t, kBins> hist{};
  double scale = kBins / (hi - lo);
  for (double v : values) {
    int b = static_cast<int>((v - lo) * scale);
    hist[static_cast<size_t>(std::clamp(b, 0, kBins - 1))]++;
  }
  int64_t total = static_cast<int64_t>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * static_cast<double>(hist[static_cast<size_t>(b)]);
  double sum_bg = 0.0, best_var = -1.0;
  int64_t n_bg = 0;
  // The criterion plateaus across every empty bin between two modes; the
  // tied maxima are averaged so the cut lands mid-gap instead of hugging
  // one of the modes.
  double best_sum = 0.0;
  int best_count = 0;
  for (int b = 0; b < kBins; ++b) {
    n_bg += hist[static_cast<size_t>(b)];
    if (n_bg == 0) continue;
    int64_t n_fg = total - n_bg;
    if (n_fg == 0) break;
    sum_bg += b * static_cast<double>(hist[static_cast<size_t>(b)]);
    double mean_bg = sum_bg / static_cast<double>(n_bg);
    double mean_fg = (sum_all - sum_bg) / static_cast<double>(n_fg);
    double between = static_cast<double>(n_bg) * static_cast<double>(n_fg) *
                     (mean_bg - mean_fg) * (mean_bg - mean_fg);
    if (between > best_var) {
      best_var = between;
      best_sum = b;
      best_count = 1;
    } else if (between == best_var) {
      best_sum += b;
      best_count++;
    }
  }
  require(best_count > 0, "otsu threshold needs values on both sides of a bin edge");
  return lo + (best_sum / best_count + 1.0) / scale;
}

// Flood-fills 0-pixels reachable from the border; unreachable 0-pixels are
// holes and become foreground.
inline void fill_holes(std::vector<uint8_t>& fg, int64_t w, int64_t h) {
  std::vector<uint8_t> outside(fg.size(), 0);
  std::vector<int64_t> stack;
  auto push = [&](int64_t x, int64_t y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    size_t i = static_cast<size_t>(y * w + x);
    if (fg[i] || outside[i]) return;
    outside[i] = 1;
    stack.push_back(y * w + x);
  };
  for (int64_t x = 0; x < w; ++x) {
    push(x, 0);
    push(x, h - 1);
  }
  for (int64_t y = 0; y < h; ++y) {
    push(0, y);
    push(w - 1, y);
  }
  while (!stack.empty()) {
    int64_t p = stack.back();
    stack.pop_back();
    int64_t x = p % w, y = p / w;
    push(x + 1, y);
    push(x - 1, y);
    push(x, y + 1);
    push(x, y - 1);
  }
  for (size_t i = 0; i < fg.size(); ++i)
    if (!fg[i] && !outside[i]) fg[i] = 1;
}

// One row/column pass of the exact squared-distance transform (lower
// envelope of parabolas). f holds per-cell squared sources, d the result.
inline void edt_pass(const std::vector<double>& f, std::vector<double>& d, int n) {
  constexpr double kInf = 1e18;
  std::vector<int> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      int p = v[static_cast<size_t>(k)];
      s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
          (2.0 * (q - p));
      if (s <= z[static_cast<size_t>(k)] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    double dq = q - v[static_cast<size_t>(k)];
    d[static_cast<size_t>(q)] = dq * dq + f[static_cast<size_t>(v[static_cast<size_t>(k)])];
  }
}

// Exact Euclidean distance to the nearest background pixel. The window is
// padded with one background ring so nuclei clipped by the patch edge do
// not grow fake depth there. Exactness matters: the watershed markers sit
// at a fixed fraction of the peak depth, and chamfer bias can push a
// genuine saddle above it.
inline std::vector<double> distance_transform(const std::vector<uint8_t>& fg, int64_t w,
                                              int64_t h) {
  constexpr double kInf = 1e18;
  int64_t pw = w + 2, ph = h + 2;
  std::vector<double> grid(static_cast<size_t>(pw * ph), 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      grid[static_cast<size_t>((y + 1) * pw + (x + 1))] =
          fg[static_cast<size_t>(y * w + x)] ? kInf : 0.0;

  std::vector<double> f(static_cast<size_t>(std::max(pw, ph)));
  std::vector<double> d(f.size());
  for (int64_t y = 0; y < ph; ++y) {
    for (int64_t x = 0; x < pw; ++x) f[static_cast<size_t>(x)] = grid[static_cast<size_t>(y * pw + x)];
    edt_pass(f, d, static_cast<int>(pw));
    for (int64_t x = 0; x < pw; ++x) grid[static_cast<size_t>(y * pw + x)] = d[static_cast<size_t>(x)];
  }
  for (int64_t x = 0; x < pw; ++x) {
    for (int64_t y = 0; y < ph; ++y) f[static_cast<size_t>(y)] = grid[static_cast<size_t>(y * pw + x)];
    edt_pass(f, d, static_cast<int>(ph));
    for (int64_t y = 0; y < ph; ++y) grid[static_cast<size_t>(y * pw + x)] = d[static_cast<size_t>(y)];
  }

  std::vector<double> out(fg.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      out[static_cast<size_t>(y * w + x)] =
          std::sqrt(grid[static_cast<size_t>((y + 1) * pw + (x + 1))]);
  return out;
}

// 8-connected component labels over foreground; 0 = background.
inline int label_components(const std::vector<uint8_t>& fg, int64_t w, int64_t h,
                            std::vector<int>& labels) {
  labels.assign(fg.size(), 0);
  int next = 0;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < w * h; ++start) {
    if (!fg[static_cast<size_t>(start)] || labels[static_cast<size_t>(start)]) continue;
    ++next;
    labels[static_cast<size_t>(start)] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      int64_t p = stack.back();
      stack.pop_back();
      int64_t x = p % w, y = p / w;
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          size_t q = static_cast<size_t>(ny * w + nx);
          if (fg[q] && !labels[q]) {
            labels[q] = next;
            stack.push_back(ny * w + nx);
          }
        }
    }
  }
  return next;
}

// Splits one connected component along distance-transform basins. Markers
// are the components of {dist >= kMarkerLevel * max}; flooding descends
// from them in decreasing depth. Single marker: returned unsplit.
inline std::vector<int> watershed_split(const std::vector<uint8_t>& comp,
                                        const std::vector<double>& dist, int64_t w, int64_t h,
                                        int& n_labels) {
  double max_d = 0.0;
  for (int64_t i = 0; i < w * h; ++i)
    if (comp[static_cast<size_t>(i)]) max_d = std::max(max_d, dist[static_cast<size_t>(i)]);
  std::vector<uint8_t> core(comp.size(), 0);
  for (int64_t i = 0; i < w * h; ++i)
    core[static_cast<size_t>(i)] =
        comp[static_cast<size_t>(i)] && dist[static_cast<size_t>(i)] >= kMarkerLevel * max_d;
  std::vector<int> labels;
  n_labels = label_components(core, w, h, labels);
  if (n_labels <= 1) {
    n_labels = 1;
    for (int64_t i = 0; i < w * h; ++i)
      labels[static_cast<size_t>(i)] = comp[static_cast<size_t>(i)] ? 1 : 0;
    return labels;
  }

  // Deepest-first flood; ties broken by pixel index for determinism.
  using Entry = std::pair<double, int64_t>;
  auto cmp = [](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> heap(cmp);
  for (int64_t i = 0; i < w * h; ++i)
    if (labels[static_cast<size_t>(i)]) heap.push({dist[static_cast<size_t>(i)], i});
  while (!heap.empty()) {
    auto [d, p] = heap.top();
    heap.pop();
    int lab = labels[static_cast<size_t>(p)];
    int64_t x = p % w, y = p / w;
    for (int64_t dy = -1; dy <= 1; ++dy)
      for (int64_t dx = -1; dx <= 1; ++dx) {
        int64_t nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        size_t q = static_cast<size_t>(ny * w + nx);
        if (comp[q] && !labels[q]) {
          labels[q] = lab;
          heap.push({dist[q], ny * w + nx});
        }
      }
  }
  return labels;
}

// Moore boundary trace of the outer contour, starting from the top-left
// foreground pixel; returns pixel-center coordinates in order.
inline std::vector<std::pair<double, double>> trace_contour(const NucleusMask& m) {
  static const int dx8[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static const int dy8[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  int64_t start = -1;
  for (int64_t i = 0; i < m.width * m.height && start < 0; ++i)
    if (m.mask[static_cast<size_t>(i)]) start = i;
  require(start >= 0, "empty nucleus mask");
  int64_t sx = start % m.width, sy = start / m.width;
  auto fg = [&](int64_t x, int64_t y) {
    return x >= 0 && y >= 0 && x < m.width && y < m.height && m.at(x, y);
  };
  std::vector<std::pair<double, double>> pts;
  int64_t cx = sx, cy = sy;
  int dir = 0;  // came from the left scan: search clockwise from east
  pts.push_back({static_cast<double>(cx), static_cast<double>(cy)});
  for (size_t guard = 0; guard < m.mask.size() * 8 + 8; ++guard) {
    int found = -1;
    for (int k = 0; k < 8; ++k) {
      int cand = (dir + 6 + k) % 8;  // backtrack two steps, then clockwise
      if (fg(cx + dx8[cand], cy + dy8[cand])) {
        found = cand;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    cx += dx8[found];
    cy += dy8[found];
    dir = found;
    if (cx == sx && cy == sy) break;
    pts.push_back({static_cast<double>(cx), static_cast<double>(cy)});
  }
  return pts;
}

// Perimeter estimate: greedy chord polygonization of the traced contour
// (every contour point within kChordTolerance of its chord), plus pi for
// the half-pixel outward offset from pixel centers to the true boundary
// (a closed curve offset by 1/2 gains 2*pi*1/2 in length).
inline double contour_perimeter(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() <= 2) return M_PI + 2.0 * (pts.size() - 1);
  double length = 0.0;
  size_t anchor = 0;
  while (anchor + 1 < pts.size()) {
    size_t j = anchor + 1;
    size_t best = j;
    for (; j < pts.size(); ++j) {
      double ax = pts[anchor].first, ay = pts[anchor].second;
      double bx = pts[j].first, by = pts[j].second;
      double len = std::hypot(bx - ax, by - ay);
      bool ok = true;
      if (len > 0) {
        for (size_t k = anchor + 1; k < j && ok; ++k) {
          double cross = (bx - ax) * (pts[k].second - ay) - (by - ay) * (pts[k].first - ax);
          ok = std::abs(cross) / len <= kChordTolerance;
        }
      }
      if (!ok) break;
      best = j;
    }
    length += std::hypot(pts[best].first - pts[anchor].first,
                         pts[best].second - pts[anchor].second);
    anchor = best;
  }
  length += std::hypot(pts[0].first - pts[anchor].first, pts[0].second - pts[anchor].second);
  return length + M_PI;
}

// Smallest-area rotated rectangle over the convex hull of the pixel
// corners (rotating calipers over hull edges).
inline double min_rotated_box_area(const NucleusMask& m) {
  std::vector<std::pair<double, double>> pts;
  for (int64_t y = 0; y < m.height; ++y)
    for (int64_t x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      // Unit-square corners, so the box covers pixel areas, not centers.
      pts.push_back({static_cast<double>(x), static_cast<double>(y)});
      pts.push_back({static_cast<double>(x + 1), static_cast<double>(y)});
      pts.push_back({static_cast<double>(x), static_cast<double>(y + 1)});
      pts.push_back({static_cast<double>(x + 1), static_cast<double>(y + 1)});
    }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return static_cast<double>(pts.size());

  // Andrew's monotone chain.
  auto cross = [](const std::pair<double, double>& o, const std::pair<double, double>& a,
                  const std::pair<double, double>& b) {
    return (a.first - o.first) * (b.second - o.second) -
           (a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<double, double>> hull(2 * pts.size());
  size_t k = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  size_t lower = k + 1;
  for (size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);

  double best = std::numeric_limits<double>::infinity();
  for (size_t e = 0; e < hull.size(); ++e) {
    auto [x0, y0] = hull[e];
    auto [x1, y1] = hull[(e + 1) % hull.size()];
    double ex = x1 - x0, ey = y1 - y0;
    double n = std::hypot(ex, ey);
    if (n == 0) continue;
    ex /= n;
    ey /= n;
    double lo_u = 0, hi_u = 0, lo_v = 0, hi_v = 0;
    bool first = true;
    for (const auto& [px, py] : hull) {
      double u = (px - x0) * ex + (py - y0) * ey;
      double v = -(px - x0) * ey + (py - y0) * ex;
      if (first) {
        lo_u = hi_u = u;
        lo_v = hi_v = v;
        first = false;
      } else {
        lo_u = std::min(lo_u, u);
        hi_u = std::max(hi_u, u);
        lo_v = std::min(lo_v, v);
        hi_v = std::max(hi_v, v);
      }
    }
    best = std::min(best, (hi_u - lo_u) * (hi_v - lo_v));
  }
  return best;
}

}  // namespace morpho

// Shape measurement via image moments; pixels are treated as unit squares
// (the 1/12 variance term), axes are those of the matched ellipse.
inline NucleusShape nucleus_morphometry(const NucleusMask& m) {
  int64_t area = m.area();
  require(area >= morpho::kMinNucleusArea, "nucleus mask area ", area, " below the ",
          morpho::kMinNucleusArea, " px^2 floor");
  NucleusShape s;
  s.area = static_cast<double>(area);

  double cx = 0, cy = 0;
  for (int64_t y = 0; y < m.height; ++y)
    for (int64_t x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        cx += static_cast<double>(x);
        cy += static_cast<double>(y);
      }
  cx /= s.area;
  cy /= s.area;
  double mu20 = 0, mu02 = 0, mu11 = 0;
  for (int64_t y = 0; y < m.height; ++y)
    for (int64_t x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
      }
  mu20 /= s.area;
  mu02 /= s.area;
  mu11 /= s.area;
  // Collinearity check runs on the raw moments: the unit-square correction
  // below lifts the smallest eigenvalue to at least 1/12, which would mask
  // genuinely one-pixel-wide shapes.
  double raw_root =
      std::sqrt((mu20 - mu02) * (mu20 - mu02) + 4.0 * mu11 * mu11);
  double raw_l_min = 0.5 * (mu20 + mu02 - raw_root);
  mu20 += 1.0 / 12.0;
  mu02 += 1.0 / 12.0;

  double tr = mu20 + mu02;
  double diff = mu20 - mu02;
  double root = std::sqrt(diff * diff + 4.0 * mu11 * mu11);
  double l_max = 0.5 * (tr + root), l_min = 0.5 * (tr - root);
  s.major_axis = 4.0 * std::sqrt(std::max(l_max, 0.0));
  s.minor_axis = 4.0 * std::sqrt(std::max(l_min, 0.0));
  if (raw_l_min < 1e-12) {
    s.minor_axis = 1.0;
    s.degenerate_minor = true;
  }

  // Orientation is meaningless for isotropic shapes (disk, square).
  s.orientation_defined = l_max > 0 && (l_max - l_min) / l_max > 0.02;
  if (s.orientation_defined) {
    double theta = 0.5 * std::atan2(2.0 * mu11, diff) * 180.0 / M_PI;
    if (theta >= 90.0) theta -= 180.0;
    if (theta < -90.0) theta += 180.0;
    s.orientation = theta;
  }

  s.circumference = morpho::contour_perimeter(morpho::trace_contour(m));
  s.circularity = 4.0 * M_PI * s.area / (s.circumference * s.circumference);
  double box = morpho::min_rotated_box_area(m);
  s.rectangularity = box > 0 ? std::min(s.area / box, 1.0) : 0.0;
  return s;
}

// Pluggable segmentation stage.
class NucleusSegmenter {
 public:
  virtual ~NucleusSegmenter() = default;
  virtual std::vector<NucleusMask> segment(const ImageRgb& patch) const = 0;
};

class ClassicalSegmenter : public NucleusSegmenter {
 public:
  std::vector<NucleusMask> segment(const ImageRgb& patch) const override {
    int64_t w = patch.width(), h = patch.height();
    require(w > 0 && h > 0, "empty patch");
    std::vector<double> hem = morpho::hematoxylin_image(patch);
    double lo = hem[0], hi = hem[0];
    for (double v : hem) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    // A stain-free patch has only noise-level optical density; thresholding
    // it would segment noise specks.
    if (hi - lo < morpho::kMinStainSeparation) return {};
    double thr = morpho::otsu_threshold(hem, lo, hi);

    std::vector<uint8_t> fg(hem.size());
    for (size_t i = 0; i < hem.size(); ++i) fg[i] = hem[i] >= thr;
    morpho::fill_holes(fg, w, h);

    std::vector<int> comp_labels;
    int n_comps = morpho::label_components(fg, w, h, comp_labels);
    std::vector<double> dist = morpho::distance_transform(fg, w, h);

    std::vector<NucleusMask> out;
    std::vector<uint8_t> comp(fg.size());
    for (int c = 1; c <= n_comps; ++c) {
      int64_t count = 0;
      for (size_t i = 0; i < comp_labels.size(); ++i) {
        comp[i] = comp_labels[i] == c;
        count += comp[i];
      }
      if (count < morpho::kMinNucleusArea) continue;
      int parts = 0;
      std::vector<int> split = morpho::watershed_split(comp, dist, w, h, parts);
      for (int p = 1; p <= parts; ++p) {
        int64_t x0 = w, y0 = h, x1 = -1, y1 = -1;
        for (int64_t i = 0; i < w * h; ++i)
          if (split[static_cast<size_t>(i)] == p) {
            int64_t x = i % w, y = i / w;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
          }
        if (x1 < 0) continue;
        NucleusMask nm;
        nm.x0 = x0;
        nm.y0 = y0;
        nm.width = x1 - x0 + 1;
        nm.height = y1 - y0 + 1;
        nm.mask.assign(static_cast<size_t>(nm.width * nm.height), 0);
        int64_t area = 0;
        for (int64_t y = y0; y <= y1; ++y)
          for (int64_t x = x0; x <= x1; ++x)
            if (split[static_cast<size_t>(y * w + x)] == p) {
              nm.mask[static_cast<size_t>((y - y0) * nm.width + (x - x0))] = 1;
              ++area;
            }
        if (area >= morpho::kMinNucleusArea) out.push_back(std::move(nm));
      }
    }
    return out;
  }
};

// Per-patch morphometry: one record per nucleus plus the patch-level
// density (nucleus count; patches are fixed-size so no area normalizer).
struct PatchMorphometry {
  std::vector<NucleusShape> nuclei;
  double density = 0.0;
};

inline PatchMorphometry patch_morphometry(const ImageRgb& patch,
                                          const NucleusSegmenter& segmenter) {
  PatchMorphometry out;
  for (const auto& mask : segmenter.segment(patch)) out.nuclei.push_back(nucleus_morphometry(mask));
  out.density = static_cast<double>(out.nuclei.size());
  return out;
}

}  // namespace amilpath
