#pragma once
// Polygon annotations in level-0 pixel coordinates and their raster masks.
// A pixel (x, y) belongs to a polygon iff its center (x+0.5, y+0.5) is
// inside under the even-odd rule; every containment decision in the
// pipeline goes through this one definition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "amilpath/common.hpp"

namespace amilpath {

struct PointD {
  double x = 0.0;
  double y = 0.0;
};

struct RectI {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1)
  int64_t width() const { return x1 - x0; }
  int64_t height() const { return y1 - y0; }
};

class Polygon {
 public:
  explicit Polygon(std::vector<PointD> vertices) : verts_(std::move(vertices)) {
    require(verts_.size() >= 3, "polygon needs >= 3 vertices, got ", verts_.size());
    require(std::abs(signed_area()) > 0.0, "polygon has zero area");
    require(!self_intersects(), "polygon is self-intersecting");
  }

  const std::vector<PointD>& vertices() const { return verts_; }

  double signed_area() const {
    double a = 0.0;
    for (size_t i = 0; i < verts_.size(); ++i) {
      const PointD& p = verts_[i];
      const PointD& q = verts_[(i + 1) % verts_.size()];
      a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
  }

  double area() const { return std::abs(signed_area()); }

  // Even-odd containment test.
  bool contains(double px, double py) const {
    bool in = false;
    size_t n = verts_.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
      const PointD& a = verts_[i];
      const PointD& b = verts_[j];
      if ((a.y > py) != (b.y > py)) {
        double xcross = a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x);
        if (px < xcross) in = !in;
      }
    }
    return in;
  }

  RectI pixel_bbox() const {
    double minx = std::numeric_limits<double>::infinity(), miny = minx;
    double maxx = -minx, maxy = -minx;
    for (const PointD& v : verts_) {
      minx = std::min(minx, v.x);
      miny = std::min(miny, v.y);
      maxx = std::max(maxx, v.x);
      maxy = std::max(maxy, v.y);
    }
    RectI r;
    r.x0 = static_cast<int64_t>(std::floor(minx));
    r.y0 = static_cast<int64_t>(std::floor(miny));
    r.x1 = static_cast<int64_t>(std::ceil(maxx));
    r.y1 = static_cast<int64_t>(std::ceil(maxy));
    return r;
  }

 private:
  bool self_intersects() const {
    // O(n^2) segment pair test; annotation polygons are small.
    size_t n = verts_.size();
    auto seg = [&](size_t i) {
      return std::pair<PointD, PointD>(verts_[i], verts_[(i + 1) % n]);
    };
    auto orient = [](const PointD& a, const PointD& b, const PointD& c) {
      double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
      return (v > 0) - (v < 0);
    };
    auto on_seg = [](const PointD& a, const PointD& b, const PointD& p) {
      return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
             std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
    };
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        // Skip adjacent edges (shared endpoint is not an intersection).
        if (j == i + 1 || (i == 0 && j == n - 1)) continue;
        auto [a, b] = seg(i);
        auto [c, d] = seg(j);
        int o1 = orient(a, b, c), o2 = orient(a, b, d);
        int o3 = orient(c, d, a), o4 = orient(c, d, b);
        if (o1 != o2 && o3 != o4) return true;
        if (o1 == 0 && on_seg(a, b, c)) return true;
        if (o2 == 0 && on_seg(a, b, d)) return true;
        if (o3 == 0 && on_seg(c, d, a)) return true;
        if (o4 == 0 && on_seg(c, d, b)) return true;
      }
    }
    return false;
  }

  std::vector<PointD> verts_;
};

// Binary raster over a pixel rectangle.
struct Mask {
  RectI bounds;
  std::vector<uint8_t> data;  // row-major, width*height

  bool at(int64_t x, int64_t y) const {
    if (x < bounds.x0 || x >= bounds.x1 || y < bounds.y0 || y >= bounds.y1) return false;
    return data[static_cast<size_t>((y - bounds.y0) * bounds.width() + (x - bounds.x0))] != 0;
  }

  size_t count() const {
    size_t c = 0;
    for (uint8_t v : data) c += (v != 0);
    return c;
  }
};

// Scanline rasterization against pixel centers.
inline Mask rasterize(const Polygon& poly, const RectI& bounds) {
  Mask m;
  m.bounds = bounds;
  m.data.assign(static_cast<size_t>(bounds.width() * bounds.height()), 0);
  const auto& v = poly.vertices();
  size_t n = v.size();
  std::vector<double> xs;
  for (int64_t y = bounds.y0; y < bounds.y1; ++y) {
    double cy = static_cast<double>(y) + 0.5;
    xs.clear();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
      const PointD& a = v[i];
      const PointD& b = v[j];
      if ((a.y > cy) != (b.y > cy))
        xs.push_back(a.x + (cy - a.y) / (b.y - a.y) * (b.x - a.x));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      int64_t x_begin = static_cast<int64_t>(std::ceil(xs[k] - 0.5));
      int64_t x_end = static_cast<int64_t>(std::ceil(xs[k + 1] - 0.5));  // exclusive
      x_begin = std::max(x_begin, bounds.x0);
      x_end = std::min(x_end, bounds.x1);
      for (int64_t x = x_begin; x < x_end; ++x)
        m.data[static_cast<size_t>((y - bounds.y0) * bounds.width() + (x - bounds.x0))] = 1;
    }
  }
  return m;
}

inline Mask rasterize(const Polygon& poly) { return rasterize(poly, poly.pixel_bbox()); }

// Inclusive prefix sums for O(1) full-containment queries on grid cells.
class IntegralMask {
 public:
  explicit IntegralMask(const Mask& m) : bounds_(m.bounds) {
    int64_t w = bounds_.width(), h = bounds_.height();
    sums_.assign(static_cast<size_t>((w + 1) * (h + 1)), 0);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        sums_[idx(x + 1, y + 1)] = m.data[static_cast<size_t>(y * w + x)] +
                                   sums_[idx(x, y + 1)] + sums_[idx(x + 1, y)] -
                                   sums_[idx(x, y)];
  }

  // Count of set pixels in [x0,x1) x [y0,y1), absolute coordinates.
  int64_t count(int64_t x0, int64_t y0, int64_t x1, int64_t y1) const {
    x0 -= bounds_.x0; x1 -= bounds_.x0;
    y0 -= bounds_.y0; y1 -= bounds_.y0;
    x0 = std::clamp<int64_t>(x0, 0, bounds_.width());
    x1 = std::clamp<int64_t>(x1, 0, bounds_.width());
    y0 = std::clamp<int64_t>(y0, 0, bounds_.height());
    y1 = std::clamp<int64_t>(y1, 0, bounds_.height());
    if (x0 >= x1 || y0 >= y1) return 0;
    return sums_[idx(x1, y1)] - sums_[idx(x0, y1)] - sums_[idx(x1, y0)] + sums_[idx(x0, y0)];
  }

 private:
  size_t idx(int64_t x, int64_t y) const {
    return static_cast<size_t>(y * (bounds_.width() + 1) + x);
  }
  RectI bounds_;
  std::vector<int64_t> sums_;
};

}  // namespace amilpath
