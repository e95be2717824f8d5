#pragma once
// Tumor-region tiling. The grid is anchored at each polygon's bounding-box
// top-left corner and a cell is emitted only when every one of its pixels
// lies inside the polygon raster mask, so patches contain pure annotated
// tissue. Output order is row-major by origin and fully deterministic.

#include <algorithm>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/geometry.hpp"
#include "amilpath/image.hpp"
#include "amilpath/manifest.hpp"
#include "amilpath/png_io.hpp"

namespace amilpath {

struct Patch {
  std::string slide_id;
  int64_t x = 0, y = 0;  // origin, level-0 pixels
  int64_t size = 256;

  std::string ref() const { return std::to_string(x) + "_" + std::to_string(y); }

  // Storage layout: <root>/<slide_id>/<x>_<y>.png
  fs::path file(const fs::path& root) const {
    return root / slide_id / (ref() + ".png");
  }
};

inline bool patches_overlap(const Patch& a, const Patch& b) {
  return a.x < b.x + b.size && b.x < a.x + a.size && a.y < b.y + b.size &&
         b.y < a.y + a.size;
}

inline std::vector<Patch> tile_tumor_regions(const SlideRecord& record,
                                             int64_t patch_size) {
  require(patch_size > 0, "patch_size must be positive");
  require(!record.regions.empty(), "slide ", record.slide_id, " has no tumor regions");

  std::vector<Patch> out;
  for (const auto& poly : record.regions) {
    RectI bbox = poly.pixel_bbox();
    if (bbox.width() < patch_size || bbox.height() < patch_size) continue;
    Mask mask = rasterize(poly, bbox);
    IntegralMask integral(mask);
    int64_t cells_x = bbox.width() / patch_size;
    int64_t cells_y = bbox.height() / patch_size;
    for (int64_t j = 0; j < cells_y; ++j) {
      for (int64_t i = 0; i < cells_x; ++i) {
        Patch p;
        p.slide_id = record.slide_id;
        p.x = bbox.x0 + i * patch_size;
        p.y = bbox.y0 + j * patch_size;
        p.size = patch_size;
        if (integral.count(p.x, p.y, p.x + patch_size, p.y + patch_size) !=
            patch_size * patch_size)
          continue;
        // Overlapping polygons may propose colliding cells; first one wins.
        bool collides = false;
        for (const auto& q : out)
          if (patches_overlap(p, q)) {
            collides = true;
            break;
          }
        if (!collides) out.push_back(p);
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Patch& a, const Patch& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
  if (out.empty())
    log_warn("slide %s: no %lldpx cell fits inside any tumor region",
             record.slide_id.c_str(), static_cast<long long>(patch_size));
  return out;
}

// Crops every patch out of the slide image and writes it under
// <out_root>/<slide_id>/. Returns the tiled patch list.
inline std::vector<Patch> tile_and_write(const SlideRecord& record, int64_t patch_size,
                                         const fs::path& out_root) {
  std::vector<Patch> patches = tile_tumor_regions(record, patch_size);
  if (patches.empty()) return patches;
  ImageRgb slide = read_png(record.image_uri);
  require(slide.width() == record.width && slide.height() == record.height,
          "slide image size changed on disk: ", record.slide_id);
  for (const auto& p : patches) {
    ImageRgb tile = slide.crop(p.x, p.y, p.size, p.size);
    write_png(p.file(out_root), tile);
  }
  return patches;
}

}  // namespace amilpath
