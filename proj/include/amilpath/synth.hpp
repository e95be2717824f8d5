#pragma once
// Synthetic corpus generator for desk-scale verification: small RGB
// pseudo-slides with one rectangular tumor region filled with dark
// elliptical blobs on pink tissue. Positive slides get strictly higher
// blob density and/or more elongated blobs, controlled by independent
// gap parameters (both zero makes the classes indistinguishable). The
// clinical table carries a label-correlated age column, and the exact
// generation parameters are emitted for oracle checks.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/image.hpp"
#include "amilpath/manifest.hpp"
#include "amilpath/png_io.hpp"
#include "amilpath/rng.hpp"

namespace amilpath {

struct SynthConfig {
  int n_slides = 20;
  int64_t slide_size = 2048;
  uint64_t seed = 0;
  double blob_density = 1.0;    // expected blobs per 256x256 of tumor, negative class
  double density_gap = 2.0;     // added to the density on positive slides
  double blob_aspect = 1.3;     // ellipse major/minor ratio, negative class
  double elongation_gap = 0.0;  // added to the aspect on positive slides
  double positive_fraction = 0.5;

  void validate() const {
    require(n_slides >= 10, "synthetic corpus needs at least 10 slides, got ", n_slides);
    require(slide_size >= 1024 && slide_size % 64 == 0,
            "slide_size must be >= 1024 and a multiple of 64");
    require(blob_density > 0.0, "blob_density must be positive");
    require(density_gap >= 0.0 && elongation_gap >= 0.0, "gaps must be non-negative");
    require(blob_aspect >= 1.0, "blob_aspect must be >= 1");
    require(positive_fraction > 0.0 && positive_fraction < 1.0,
            "positive_fraction must be in (0,1)");
  }
};

struct SynthSlideTruth {
  std::string slide_id;
  AlnLabel label = AlnLabel::N0;
  int64_t n_blobs = 0;
  double density = 0.0;  // blobs per 256x256 of tumor
  double aspect = 1.0;
  RectI tumor;
  double age = 0.0;
};

struct SynthResult {
  fs::path manifest_path;
  fs::path clinical_path;
  fs::path annotation_dir;
  fs::path truth_path;
  std::vector<SynthSlideTruth> slides;
};

namespace detail {

// Blob centers come from a jittered grid, which keeps blobs disjoint so
// connected-component counts reproduce the generator's blob count.
constexpr int64_t kBlobCell = 64;
constexpr double kBlobMajorMin = 10.0;
constexpr double kBlobMajorMax = 16.0;

inline Rgb jitter(Rgb base, Rng& rng, int amp) {
  auto ch = [&](uint8_t v) {
    int j = static_cast<int>(rng.below(static_cast<uint64_t>(2 * amp + 1))) - amp;
    return static_cast<uint8_t>(std::clamp(static_cast<int>(v) + j, 0, 255));
  };
  return {ch(base.r), ch(base.g), ch(base.b)};
}

inline std::string synth_slide_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "syn_%04d", index);
  return buf;
}

}  // namespace detail

// Writes slides/, annotations/, manifest.csv, clinical.csv and
// ground_truth.json under out_dir.
inline SynthResult generate_synthetic_corpus(const fs::path& out_dir,
                                             const SynthConfig& cfg) {
  cfg.validate();
  fs::create_directories(out_dir / "slides");
  fs::create_directories(out_dir / "annotations");

  // Hematoxylin-dark blobs on eosin-pink tissue so the classical
  // segmentation path sees realistic stain geometry.
  const Rgb background{245, 243, 244};
  const Rgb tissue{228, 182, 202};
  const Rgb blob{72, 58, 128};

  const int n_pos = static_cast<int>(std::round(cfg.positive_fraction * cfg.n_slides));
  require(n_pos >= 1 && n_pos < cfg.n_slides,
          "positive_fraction leaves an empty class at n_slides=", cfg.n_slides);

  std::string manifest_csv = "slide_id,image_uri,label\n";
  std::string clinical_csv =
      "slide_id,age,tumor_size,tumor_type,t_stage,er,pr,her2,molecular_subtype\n";
  nlohmann::json truth_slides = nlohmann::json::array();

  const auto& types = clinical_categoricals();
  SynthResult res;

  for (int i = 0; i < cfg.n_slides; ++i) {
    std::string id = detail::synth_slide_id(i);
    // Per-slide stream: regeneration of any one slide is independent of
    // corpus order, matching the bagging module's convention.
    Rng rng = Rng(cfg.seed).child(fnv1a(id));
    bool positive = i < n_pos;

    SynthSlideTruth truth;
    truth.slide_id = id;
    truth.label = positive ? AlnLabel::NPlus1to2 : AlnLabel::N0;
    truth.density = cfg.blob_density + (positive ? cfg.density_gap : 0.0);
    truth.aspect = cfg.blob_aspect + (positive ? cfg.elongation_gap : 0.0);

    // Tumor rectangle on the blob-cell grid, leaving at least one cell of
    // background on every side.
    int64_t cell = detail::kBlobCell;
    int64_t grid = cfg.slide_size / cell;
    int64_t gw = grid - 4 - static_cast<int64_t>(rng.below(4));
    int64_t gh = grid - 4 - static_cast<int64_t>(rng.below(4));
    int64_t gx0 = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(grid - gw - 1)));
    int64_t gy0 = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(grid - gh - 1)));
    truth.tumor = {gx0 * cell, gy0 * cell, (gx0 + gw) * cell, (gy0 + gh) * cell};

    ImageRgb img(cfg.slide_size, cfg.slide_size, background);
    img.fill_rect(truth.tumor.x0, truth.tumor.y0, truth.tumor.x1, truth.tumor.y1, tissue);

    // Expected blob count scales with tumor area; one jittered grid cell
    // per blob keeps them disjoint.
    double patches = static_cast<double>(truth.tumor.width() * truth.tumor.height()) /
                     (256.0 * 256.0);
    int64_t want = static_cast<int64_t>(std::llround(truth.density * patches));
    std::vector<int64_t> cells(static_cast<size_t>(gw * gh));
    for (size_t c = 0; c < cells.size(); ++c) cells[c] = static_cast<int64_t>(c);
    require(want <= static_cast<int64_t>(cells.size()),
            "blob density too high for slide ", id, ": ", want, " blobs, ",
            cells.size(), " cells");
    rng.shuffle(cells);
    truth.n_blobs = want;

    double jitter_max = static_cast<double>(cell) / 2.0 - detail::kBlobMajorMax - 2.0;
    for (int64_t b = 0; b < want; ++b) {
      int64_t c = cells[static_cast<size_t>(b)];
      double cx = static_cast<double>(truth.tumor.x0 + (c % gw) * cell) +
                  static_cast<double>(cell) / 2.0 + rng.uniform(-jitter_max, jitter_max);
      double cy = static_cast<double>(truth.tumor.y0 + (c / gw) * cell) +
                  static_cast<double>(cell) / 2.0 + rng.uniform(-jitter_max, jitter_max);
      double major = rng.uniform(detail::kBlobMajorMin, detail::kBlobMajorMax);
      double minor = major / truth.aspect;
      double theta = rng.uniform(0.0, M_PI);
      img.fill_ellipse(cx, cy, major, minor, theta, detail::jitter(blob, rng, 10));
    }

    // Mild texture noise so patches are not piecewise constant.
    for (int64_t y = 0; y < img.height(); ++y)
      for (int64_t x = 0; x < img.width(); ++x)
        img.set(x, y, detail::jitter(img.at(x, y), rng, 5));

    fs::path image_rel = fs::path("slides") / (id + ".png");
    write_png(out_dir / image_rel, img);

    std::vector<PointD> corners = {
        {static_cast<double>(truth.tumor.x0), static_cast<double>(truth.tumor.y0)},
        {static_cast<double>(truth.tumor.x1), static_cast<double>(truth.tumor.y0)},
        {static_cast<double>(truth.tumor.x1), static_cast<double>(truth.tumor.y1)},
        {static_cast<double>(truth.tumor.x0), static_cast<double>(truth.tumor.y1)}};
    save_annotation(out_dir / "annotations" / (id + ".json"), id, {Polygon(corners)});

    manifest_csv += id + "," + image_rel.string() + "," + to_string(truth.label) + "\n";

    // Age correlates with the label (positives younger); everything else
    // is label-independent.
    truth.age = std::clamp(rng.normal(positive ? 45.0 : 59.0, 7.0), 28.0, 85.0);
    double tumor_size = std::clamp(std::exp(rng.normal(0.7, 0.35)), 0.5, 5.0);
    std::string t_stage = tumor_size < 2.0 ? "T1" : "T2";
    auto pick = [&](size_t spec_idx) {
      const auto& vocab = types[spec_idx].vocabulary;
      return vocab[rng.below(vocab.size())];
    };
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%.1f,%.2f,%s,%s,%s,%s,%s,%s\n", id.c_str(),
                  truth.age, tumor_size, pick(0).c_str(), t_stage.c_str(),
                  pick(2).c_str(), pick(3).c_str(), pick(4).c_str(), pick(5).c_str());
    clinical_csv += row;

    truth_slides.push_back({{"slide_id", id},
                            {"label", to_string(truth.label)},
                            {"n_blobs", truth.n_blobs},
                            {"density", truth.density},
                            {"aspect", truth.aspect},
                            {"tumor", {truth.tumor.x0, truth.tumor.y0, truth.tumor.x1,
                                       truth.tumor.y1}},
                            {"age", truth.age}});
    res.slides.push_back(truth);
  }

  res.manifest_path = out_dir / "manifest.csv";
  res.clinical_path = out_dir / "clinical.csv";
  res.annotation_dir = out_dir / "annotations";
  res.truth_path = out_dir / "ground_truth.json";
  write_text_file(res.manifest_path, manifest_csv);
  write_text_file(res.clinical_path, clinical_csv);
  nlohmann::json truth = {{"seed", cfg.seed},
                          {"n_slides", cfg.n_slides},
                          {"slide_size", cfg.slide_size},
                          {"blob_density", cfg.blob_density},
                          {"density_gap", cfg.density_gap},
                          {"blob_aspect", cfg.blob_aspect},
                          {"elongation_gap", cfg.elongation_gap},
                          {"slides", truth_slides}};
  write_text_file(res.truth_path, truth.dump(2));
  return res;
}

}  // namespace amilpath
