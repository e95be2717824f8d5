#pragma once
// Attention heat maps: bag softmax weights averaged per patch, min-max
// normalized per slide, rendered as a colorized alpha overlay on a
// box-downsampled copy of the slide.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/image.hpp"
#include "amilpath/png_io.hpp"

namespace amilpath {

struct HeatmapEntry {
  int64_t x = 0, y = 0;  // patch origin, slide pixels
  double weight = 0.0;   // mean attention over bag occurrences
  double norm = 0.0;     // min-max normalized within the slide
  int64_t visits = 0;    // bag occurrences; 0 = never sampled
};

struct HeatmapLayer {
  std::string slide_id;
  int64_t patch_size = 0;
  std::vector<HeatmapEntry> entries;  // exactly the tiled patches, input order
  double coverage = 0.0;              // fraction of patches with visits > 0
};

// Attention weights of one scored bag, aligned with its instance refs.
struct BagAttention {
  std::vector<std::string> refs;
  std::vector<double> weights;
};

inline std::array<int64_t, 2> parse_patch_ref(const std::string& ref) {
  size_t us = ref.find('_');
  require(us != std::string::npos && us > 0 && us + 1 < ref.size(), "bad patch ref '", ref,
          "' (expected x_y)");
  return {parse_int(ref.substr(0, us), "patch ref x"),
          parse_int(ref.substr(us + 1), "patch ref y")};
}

inline HeatmapLayer build_heatmap(const std::string& slide_id,
                                  const std::vector<std::string>& patch_refs,
                                  int64_t patch_size, const std::vector<BagAttention>& bags) {
  require(patch_size > 0, "patch_size must be positive");
  require(!patch_refs.empty(), "slide has no tiled patches");
  require(!bags.empty(), "heat map needs at least one scored bag");

  HeatmapLayer layer;
  layer.slide_id = slide_id;
  layer.patch_size = patch_size;
  std::unordered_map<std::string, size_t> index;
  for (const std::string& ref : patch_refs) {
    require(index.emplace(ref, layer.entries.size()).second, "duplicate patch ref ", ref);
    std::array<int64_t, 2> xy = parse_patch_ref(ref);
    layer.entries.push_back({xy[0], xy[1], 0.0, 0.0, 0});
  }

  std::vector<double> sums(layer.entries.size(), 0.0);
  for (const BagAttention& bag : bags) {
    require(bag.refs.size() == bag.weights.size(), "bag refs/weights length mismatch");
    require(!bag.refs.empty(), "scored bag has no instances");
    double total = 0.0;
    for (double w : bag.weights) {
      require(w >= 0.0, "negative attention weight ", w);
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-6, "bag weights sum to ", total,
            "; softmax outputs must sum to 1");
    for (size_t k = 0; k < bag.refs.size(); ++k) {
      auto it = index.find(bag.refs[k]);
      require(it != index.end(), "bag references patch ", bag.refs[k],
              " missing from the tiling");
      sums[it->second] += bag.weights[k];
      layer.entries[it->second].visits++;
    }
  }

  int64_t sampled = 0;
  double lo = HUGE_VAL, hi = -HUGE_VAL;
  for (size_t i = 0; i < layer.entries.size(); ++i) {
    HeatmapEntry& e = layer.entries[i];
    if (e.visits == 0) continue;
    e.weight = sums[i] / static_cast<double>(e.visits);
    lo = std::min(lo, e.weight);
    hi = std::max(hi, e.weight);
    ++sampled;
  }
  // Degenerate field (all sampled weights equal): render mid-scale rather
  // than dividing by zero.
  for (HeatmapEntry& e : layer.entries) {
    if (e.visits == 0) continue;
    e.norm = hi > lo ? (e.weight - lo) / (hi - lo) : 0.5;
  }
  layer.coverage = static_cast<double>(sampled) / static_cast<double>(layer.entries.size());
  return layer;
}

// Diverging cool-to-warm ramp; t clamped into [0,1].
inline Rgb heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  constexpr std::array<double, 3> cold{59, 76, 192}, mid{221, 221, 221}, warm{180, 4, 38};
  const std::array<double, 3>& a = t < 0.5 ? cold : mid;
  const std::array<double, 3>& b = t < 0.5 ? mid : warm;
  double u = t < 0.5 ? t * 2.0 : t * 2.0 - 1.0;
  auto ch = [&](int i) {
    return static_cast<uint8_t>(std::lround(a[static_cast<size_t>(i)] +
                                            u * (b[static_cast<size_t>(i)] - a[static_cast<size_t>(i)])));
  };
  return {ch(0), ch(1), ch(2)};
}

// Overlay at 1/downsample scale. Sampled patches are alpha-blended with
// their heat color; unsampled patches keep the plain downsampled pixels.
inline ImageRgb render_heatmap(const HeatmapLayer& layer, const ImageRgb& slide,
                               int64_t downsample, double alpha = 0.45) {
  require(downsample >= 1, "downsample must be >= 1");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1]");
  int64_t tw = std::max<int64_t>(1, slide.width() / downsample);
  int64_t th = std::max<int64_t>(1, slide.height() / downsample);
  ImageRgb out = slide.resize_box(tw, th);
  for (const HeatmapEntry& e : layer.entries) {
    if (e.visits == 0) continue;
    Rgb heat = heat_color(e.norm);
    int64_t x0 = std::clamp<int64_t>(e.x * tw / slide.width(), 0, tw);
    int64_t x1 = std::clamp<int64_t>((e.x + layer.patch_size) * tw / slide.width(), 0, tw);
    int64_t y0 = std::clamp<int64_t>(e.y * th / slide.height(), 0, th);
    int64_t y1 = std::clamp<int64_t>((e.y + layer.patch_size) * th / slide.height(), 0, th);
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) {
        Rgb base = out.at(x, y);
        auto blend = [alpha](uint8_t b, uint8_t h) {
          return static_cast<uint8_t>(
              std::lround((1.0 - alpha) * static_cast<double>(b) + alpha * static_cast<double>(h)));
        };
        out.set(x, y, {blend(base.r, heat.r), blend(base.g, heat.g), blend(base.b, heat.b)});
      }
  }
  return out;
}

inline void save_heatmap_png(const HeatmapLayer& layer, const fs::path& slide_png,
                             const fs::path& out_png, int64_t downsample,
                             double alpha = 0.45) {
  write_png(out_png, render_heatmap(layer, read_png(slide_png), downsample, alpha));
}

// Entry dump for inspection and downstream plotting.
inline void save_heatmap_csv(const fs::path& path, const HeatmapLayer& layer) {
  std::string out = "x,y,weight,norm,visits\n";
  char buf[160];
  for (const HeatmapEntry& e : layer.entries) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%.17g,%lld\n",
                  static_cast<long long>(e.x), static_cast<long long>(e.y), e.weight, e.norm,
                  static_cast<long long>(e.visits));
    out += buf;
  }
  write_text_file(path, out);
}

}  // namespace amilpath
