#pragma once
// 8-bit RGB raster image with the few operations the pipeline needs:
// crop, box downsample, filled-shape drawing for the synthetic corpus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "amilpath/common.hpp"

namespace amilpath {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;

  uint8_t ch(int i) const { return i == 0 ? r : i == 1 ? g : b; }
};

class ImageRgb {
 public:
  ImageRgb() = default;
  ImageRgb(int64_t width, int64_t height, Rgb fill = {255, 255, 255})
      : w_(width), h_(height), data_(static_cast<size_t>(width * height) * 3) {
    require(width > 0 && height > 0, "image dimensions must be positive");
    for (size_t i = 0; i < data_.size(); i += 3) {
      data_[i] = fill.r;
      data_[i + 1] = fill.g;
      data_[i + 2] = fill.b;
    }
  }

  int64_t width() const { return w_; }
  int64_t height() const { return h_; }
  const std::vector<uint8_t>& bytes() const { return data_; }
  std::vector<uint8_t>& bytes() { return data_; }

  Rgb at(int64_t x, int64_t y) const {
    size_t i = offset(x, y);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }

  void set(int64_t x, int64_t y, Rgb c) {
    size_t i = offset(x, y);
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
  }

  bool in_bounds(int64_t x, int64_t y) const {
    return x >= 0 && x < w_ && y >= 0 && y < h_;
  }

  ImageRgb crop(int64_t x0, int64_t y0, int64_t cw, int64_t ch) const {
    require(x0 >= 0 && y0 >= 0 && x0 + cw <= w_ && y0 + ch <= h_,
            "crop outside image: (", x0, ",", y0, ") ", cw, "x", ch,
            " from ", w_, "x", h_);
    ImageRgb out(cw, ch);
    for (int64_t y = 0; y < ch; ++y) {
      const uint8_t* src = data_.data() + offset(x0, y0 + y);
      uint8_t* dst = out.data_.data() + out.offset(0, y);
      std::copy(src, src + static_cast<size_t>(cw) * 3, dst);
    }
    return out;
  }

  // Box-filter downsample to an exact target size (area averaging).
  ImageRgb resize_box(int64_t tw, int64_t th) const {
    require(tw > 0 && th > 0, "resize target must be positive");
    ImageRgb out(tw, th);
    for (int64_t oy = 0; oy < th; ++oy) {
      int64_t y0 = oy * h_ / th, y1 = std::max(y0 + 1, (oy + 1) * h_ / th);
      for (int64_t ox = 0; ox < tw; ++ox) {
        int64_t x0 = ox * w_ / tw, x1 = std::max(x0 + 1, (ox + 1) * w_ / tw);
        uint64_t sr = 0, sg = 0, sb = 0;
        for (int64_t y = y0; y < y1; ++y)
          for (int64_t x = x0; x < x1; ++x) {
            Rgb c = at(x, y);
            sr += c.r;
            sg += c.g;
            sb += c.b;
          }
        uint64_t n = static_cast<uint64_t>((y1 - y0) * (x1 - x0));
        out.set(ox, oy, {static_cast<uint8_t>(sr / n), static_cast<uint8_t>(sg / n),
                         static_cast<uint8_t>(sb / n)});
      }
    }
    return out;
  }

  // Filled ellipse centered at (cx, cy), semi-axes (a, b), rotated by theta
  // radians. Pixel-center containment, clipped to the image.
  void fill_ellipse(double cx, double cy, double a, double b, double theta, Rgb color) {
    double r = std::max(a, b) + 1.0;
    int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - r)));
    int64_t x1 = std::min<int64_t>(w_, static_cast<int64_t>(std::ceil(cx + r)) + 1);
    int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - r)));
    int64_t y1 = std::min<int64_t>(h_, static_cast<int64_t>(std::ceil(cy + r)) + 1);
    double ct = std::cos(theta), st = std::sin(theta);
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) {
        double dx = (static_cast<double>(x) + 0.5) - cx;
        double dy = (static_cast<double>(y) + 0.5) - cy;
        double u = (dx * ct + dy * st) / a;
        double v = (-dx * st + dy * ct) / b;
        if (u * u + v * v <= 1.0) set(x, y, color);
      }
  }

  void fill_rect(int64_t x0, int64_t y0, int64_t x1, int64_t y1, Rgb color) {
    x0 = std::max<int64_t>(x0, 0);
    y0 = std::max<int64_t>(y0, 0);
    x1 = std::min(x1, w_);
    y1 = std::min(y1, h_);
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) set(x, y, color);
  }

 private:
  size_t offset(int64_t x, int64_t y) const {
    return (static_cast<size_t>(y) * static_cast<size_t>(w_) + static_cast<size_t>(x)) * 3;
  }

  int64_t w_ = 0, h_ = 0;
  std::vector<uint8_t> data_;
};

}  // namespace amilpath
