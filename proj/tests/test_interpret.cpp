#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "amilpath/csv.hpp"
#include "amilpath/feature_bags.hpp"
#include "amilpath/heatmap.hpp"
#include "amilpath/rng.hpp"

using namespace amilpath;
using Catch::Approx;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

NucleusShape shape(double major, double minor, double area, double orient, bool odef,
                   double circum, double circ, double rect) {
  NucleusShape s;
  s.major_axis = major;
  s.minor_axis = minor;
  s.area = area;
  s.orientation = orient;
  s.orientation_defined = odef;
  s.circumference = circum;
  s.circularity = circ;
  s.rectangularity = rect;
  return s;
}

NucleusShape random_shape(Rng& rng) {
  double major = rng.uniform(8.0, 30.0);
  double minor = rng.uniform(4.0, major);
  double area = M_PI * major * minor / 4.0;
  double perim = rng.uniform(20.0, 90.0);
  return shape(major, minor, area, rng.uniform(-90.0, 90.0), rng.uniform(0.0, 1.0) < 0.8,
               perim, rng.uniform(0.3, 1.0), rng.uniform(0.4, 1.0));
}

PatchFeatures patch_with(std::vector<NucleusShape> nuclei, int64_t x = 0, int64_t y = 0) {
  PatchFeatures p;
  p.x = x;
  p.y = y;
  p.morpho.density = static_cast<double>(nuclei.size());
  p.morpho.nuclei = std::move(nuclei);
  return p;
}

// Corpus generator for the importance tests: every feature identically
// distributed across classes except the nucleus count, which carries the
// planted density signal when the gap is nonzero.
std::vector<NucleusFeatureBag> density_corpus(int per_class, int patches, int count_neg,
                                              int count_pos, uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchFeatures> all_patches;
  struct Slide {
    std::string id;
    int label;
    std::vector<PatchFeatures> patches;
  };
  std::vector<Slide> slides;
  for (int i = 0; i < 2 * per_class; ++i) {
    Slide s;
    s.label = i < per_class ? 0 : 1;
    s.id = "s" + std::to_string(i);
    int base = s.label ? count_pos : count_neg;
    for (int p = 0; p < patches; ++p) {
      int count = base + static_cast<int>(rng.below(3));
      std::vector<NucleusShape> nuclei;
      for (int k = 0; k < count; ++k) nuclei.push_back(random_shape(rng));
      s.patches.push_back(patch_with(std::move(nuclei), p * 256, 0));
    }
    for (const auto& p : s.patches) all_patches.push_back(p);
    slides.push_back(std::move(s));
  }
  FeatureRanges ranges = freeze_feature_ranges(all_patches);
  std::vector<NucleusFeatureBag> bags;
  for (const Slide& s : slides)
    bags.push_back(build_feature_bags(s.id, s.label, s.patches, ranges));
  return bags;
}

double row_sum(const FeatureMatrix& m, int64_t r) {
  double s = 0.0;
  for (int64_t c = 0; c < m.cols; ++c) s += m.at(r, c);
  return s;
}

constexpr int kDensity = 5;

}  // namespace

TEST_CASE("eight named features in a fixed order") {
  REQUIRE(kFeatureCount == 8);
  const auto& names = feature_names();
  REQUIRE(names[0] == "major_axis");
  REQUIRE(names[3] == "orientation");
  REQUIRE(names[4] == "circumference");
  REQUIRE(names[kDensity] == "density");
  REQUIRE(names[7] == "rectangularity");

  Rng rng(1);
  std::vector<PatchFeatures> patches{patch_with({random_shape(rng), random_shape(rng)})};
  NucleusFeatureBag bag =
      build_feature_bags("s0", 0, patches, freeze_feature_ranges(patches));
  REQUIRE(bag.matrices.size() == 8);
  for (const FeatureMatrix& m : bag.matrices) {
    REQUIRE(m.rows == 1);
    REQUIRE(m.cols == 10);
  }
}

TEST_CASE("one nucleus per patch gives one-hot histogram rows") {
  std::vector<PatchFeatures> patches{
      patch_with({shape(20.0, 10.0, 160.0, 30.0, true, 50.0, 0.8, 0.9)}, 256, 512)};
  FeatureRanges ranges = freeze_feature_ranges(patches);
  NucleusFeatureBag bag = build_feature_bags("s0", 1, patches, ranges);

  REQUIRE(bag.origins.size() == 1);
  REQUIRE(bag.origins[0][0] == 256);
  REQUIRE(bag.origins[0][1] == 512);
  for (int f = 0; f < kFeatureCount; ++f) {
    const FeatureMatrix& m = bag.matrices[f];
    REQUIRE(m.zero_rows[0] == 0);
    REQUIRE(row_sum(m, 0) == Approx(1.0).margin(1e-12));
    int ones = 0;
    for (int64_t c = 0; c < m.cols; ++c)
      if (m.at(0, c) == 1.0) ++ones;
    REQUIRE(ones == 1);
  }
}

TEST_CASE("nucleus-free patches get flagged zero rows") {
  Rng rng(2);
  std::vector<PatchFeatures> patches{patch_with({random_shape(rng), random_shape(rng)}, 0, 0),
                                     patch_with({}, 256, 0)};
  NucleusFeatureBag bag =
      build_feature_bags("s0", 0, patches, freeze_feature_ranges(patches));
  for (int f = 0; f < kFeatureCount; ++f) {
    const FeatureMatrix& m = bag.matrices[f];
    REQUIRE(m.zero_rows[1] == 1);
    REQUIRE(row_sum(m, 1) == 0.0);
    REQUIRE(m.zero_rows[0] == 0);
  }
}

TEST_CASE("histogram rows sum to one or are flagged") {
  Rng rng(3);
  std::vector<PatchFeatures> patches;
  for (int p = 0; p < 30; ++p) {
    int count = static_cast<int>(rng.below(6));  // some patches empty
    std::vector<NucleusShape> nuclei;
    for (int k = 0; k < count; ++k) nuclei.push_back(random_shape(rng));
    patches.push_back(patch_with(std::move(nuclei), p * 256, 0));
  }
  NucleusFeatureBag bag =
      build_feature_bags("s0", 0, patches, freeze_feature_ranges(patches), 7);
  for (int f = 0; f < kFeatureCount; ++f) {
    const FeatureMatrix& m = bag.matrices[f];
    REQUIRE(m.cols == 7);
    for (int64_t r = 0; r < m.rows; ++r) {
      if (m.zero_rows[r]) {
        REQUIRE(row_sum(m, r) == 0.0);
      } else {
        REQUIRE(row_sum(m, r) == Approx(1.0).margin(1e-9));
      }
    }
  }
}

TEST_CASE("uniform feature values spread evenly across the bins") {
  // Sampling oracle: with values uniform on the frozen range, bin counts
  // should pass a chi-square goodness-of-fit test against uniform.
  Rng rng(4);
  const int n = 5000;
  std::vector<NucleusShape> nuclei;
  for (int k = 0; k < n; ++k) {
    NucleusShape s = shape(20.0, 10.0, 100.0, 0.0, true, 50.0, 0.8, 0.9);
    s.area = rng.uniform(0.0, 1.0);
    nuclei.push_back(s);
  }
  std::vector<PatchFeatures> patches{patch_with(std::move(nuclei))};
  FeatureRanges ranges;
  ranges.lo.fill(0.0);
  ranges.hi.fill(1.0);
  NucleusFeatureBag bag = build_feature_bags("s0", 0, patches, ranges);

  const FeatureMatrix& area = bag.matrices[2];
  double chi2 = 0.0;
  double expected = static_cast<double>(n) / 10.0;
  for (int64_t c = 0; c < 10; ++c) {
    double observed = area.at(0, c) * n;
    chi2 += (observed - expected) * (observed - expected) / expected;
  }
  boost::math::chi_squared_distribution<double> dist(9.0);
  double p = 1.0 - boost::math::cdf(dist, chi2);
  REQUIRE(p > 0.01);
}

TEST_CASE("range freezing matches the percentile oracle") {
  std::vector<double> ladder(101);
  std::iota(ladder.begin(), ladder.end(), 0.0);
  REQUIRE(percentile(ladder, 0.01) == Approx(1.0).margin(1e-12));
  REQUIRE(percentile(ladder, 0.99) == Approx(99.0).margin(1e-12));
  REQUIRE(percentile(ladder, 0.0) == 0.0);
  REQUIRE(percentile(ladder, 1.0) == 100.0);
  REQUIRE(percentile({5.0, 1.0}, 0.5) == Approx(3.0).margin(1e-12));

  Rng rng(5);
  std::vector<PatchFeatures> patches;
  std::vector<double> areas;
  for (int p = 0; p < 20; ++p) {
    std::vector<NucleusShape> nuclei;
    for (int k = 0; k < 12; ++k) {
      nuclei.push_back(random_shape(rng));
      areas.push_back(nuclei.back().area);
    }
    patches.push_back(patch_with(std::move(nuclei)));
  }
  FeatureRanges r = freeze_feature_ranges(patches);
  REQUIRE(r.lo[2] == Approx(percentile(areas, 0.01)).margin(1e-12));
  REQUIRE(r.hi[2] == Approx(percentile(areas, 0.99)).margin(1e-12));
  REQUIRE(r.lo[2] < r.hi[2]);

  // Round trip through JSON.
  FeatureRanges back = FeatureRanges::from_json(r.to_json());
  for (int f = 0; f < kFeatureCount; ++f) {
    REQUIRE(back.lo[f] == r.lo[f]);
    REQUIRE(back.hi[f] == r.hi[f]);
  }
}

TEST_CASE("out-of-range values clamp into the edge bins") {
  REQUIRE(bin_index(-5.0, 0.0, 1.0, 10) == 0);
  REQUIRE(bin_index(2.0, 0.0, 1.0, 10) == 9);
  REQUIRE(bin_index(1.0, 0.0, 1.0, 10) == 9);  // hi itself stays inside
  REQUIRE(bin_index(0.05, 0.0, 1.0, 10) == 0);
  REQUIRE(bin_index(0.95, 0.0, 1.0, 10) == 9);
  REQUIRE(bin_index(0.5, 0.5, 0.5, 10) == 0);  // degenerate range
}

TEST_CASE("round nuclei leave the orientation rows flagged") {
  std::vector<NucleusShape> round;
  for (int k = 0; k < 3; ++k)
    round.push_back(shape(12.0, 12.0, 113.0, 0.0, false, 38.0, 0.98, 0.78));
  std::vector<PatchFeatures> patches{patch_with(std::move(round))};
  NucleusFeatureBag bag =
      build_feature_bags("s0", 0, patches, freeze_feature_ranges(patches));
  REQUIRE(bag.matrices[3].zero_rows[0] == 1);
  REQUIRE(row_sum(bag.matrices[3], 0) == 0.0);
  REQUIRE(bag.matrices[2].zero_rows[0] == 0);
  REQUIRE(row_sum(bag.matrices[2], 0) == Approx(1.0).margin(1e-12));
}

TEST_CASE("feature bag archive round trip") {
  fs::path dir = fresh_dir("amilpath_test_fbag");
  Rng rng(6);
  std::vector<PatchFeatures> patches;
  for (int p = 0; p < 5; ++p) {
    std::vector<NucleusShape> nuclei;
    for (uint64_t k = 0; k < rng.below(4); ++k) nuclei.push_back(random_shape(rng));
    patches.push_back(patch_with(std::move(nuclei), p * 256, 256));
  }
  NucleusFeatureBag bag =
      build_feature_bags("slide_7", 1, patches, freeze_feature_ranges(patches), 12);

  fs::path archive = dir / "bag.bin";
  save_feature_bag(archive, bag);
  REQUIRE(fs::exists(feature_bag_index_path(archive)));

  NucleusFeatureBag back = load_feature_bag(archive);
  REQUIRE(back.slide_id == "slide_7");
  REQUIRE(back.label == 1);
  REQUIRE(back.bins == 12);
  REQUIRE(back.origins == bag.origins);
  for (int f = 0; f < kFeatureCount; ++f) {
    REQUIRE(back.matrices[f].rows == bag.matrices[f].rows);
    REQUIRE(back.matrices[f].cols == bag.matrices[f].cols);
    REQUIRE(back.matrices[f].data == bag.matrices[f].data);  // bitwise
    REQUIRE(back.matrices[f].zero_rows == bag.matrices[f].zero_rows);
  }
}

TEST_CASE("nucleus CSV lists one row per nucleus with blank undefined orientation") {
  fs::path dir = fresh_dir("amilpath_test_ncsv");
  std::vector<PatchFeatures> patches{
      patch_with({shape(20.0, 10.0, 160.0, 30.0, true, 50.0, 0.8, 0.9),
                  shape(12.0, 12.0, 113.0, 0.0, false, 38.0, 0.98, 0.78)},
                 0, 0),
      patch_with({shape(16.0, 8.0, 100.0, -45.0, true, 40.0, 0.7, 0.85)}, 256, 0)};
  fs::path csv = dir / "nuclei.csv";
  save_nucleus_csv(csv, "s3", patches);

  CsvTable t = read_csv(csv);
  REQUIRE(t.header.size() == 11);
  REQUIRE(t.header[0] == "slide_id");
  REQUIRE(t.header[6] == "orientation");
  REQUIRE(t.header[8] == "density");
  REQUIRE(t.rows.size() == 3);
  REQUIRE(t.rows[0][6] == "30");
  REQUIRE(t.rows[1][6] == "");  // undefined axis
  REQUIRE(parse_double(t.rows[0][8], "density") == 2.0);
  REQUIRE(parse_double(t.rows[2][8], "density") == 1.0);
  REQUIRE(t.rows[2][1] == "256");
}

TEST_CASE("feature MIL attention behaves like a bag softmax") {
  Rng rng(7);
  auto bags = density_corpus(3, 8, 4, 4, 11);
  FeatureMilModel model(10, 16, 8, 3);
  nn::Tensor inst = model.instances(bags.front());
  REQUIRE(inst.dim(0) == 8);
  REQUIRE(inst.dim(1) == 18);

  auto fwd = model.forward(inst);
  const auto& w = fwd.weights.value().data;
  REQUIRE(w.size() == 8);
  double sum = 0.0;
  for (double v : w) {
    REQUIRE(v >= 0.0);
    sum += v;
  }
  REQUIRE(sum == Approx(1.0).margin(1e-6));
  const auto& probs = fwd.probs.value().data;
  REQUIRE(probs.size() == 2);
  REQUIRE(probs[0] + probs[1] == Approx(1.0).margin(1e-12));

  // Permuting the instances permutes the attention with them.
  std::vector<int> perm{5, 2, 7, 0, 3, 6, 1, 4};
  nn::Tensor shuffled({8, 18});
  for (int i = 0; i < 8; ++i)
    for (int c = 0; c < 18; ++c)
      shuffled.data[i * 18 + c] = inst.data[perm[i] * 18 + c];
  auto fwd2 = model.forward(shuffled);
  for (int i = 0; i < 8; ++i)
    REQUIRE(fwd2.weights.value().data[i] == Approx(w[perm[i]]).margin(1e-12));
  REQUIRE(fwd2.probs.value().data[0] == Approx(probs[0]).margin(1e-12));
}

TEST_CASE("planted density signal wins the attention ranking") {
  int hits = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto bags = density_corpus(12, 15, 2, 9, 100 + seed);
    ImportanceConfig cfg;
    cfg.seed = seed;
    FeatureImportance imp = rank_feature_importance(bags, cfg);
    if (top_feature(imp) == kDensity) ++hits;
  }
  REQUIRE(hits >= 4);
}

TEST_CASE("identical classes cannot fake significance on tiny cohorts") {
  // With 3 slides per class the exact two-sided Mann-Whitney p can never
  // drop below 0.1, so any p < 0.05 here would be an implementation bug.
  auto bags = density_corpus(3, 10, 5, 5, 42);
  ImportanceConfig cfg;
  cfg.seed = 9;
  FeatureImportance imp = rank_feature_importance(bags, cfg);
  for (int f = 0; f < kFeatureCount; ++f) {
    REQUIRE(imp.p_values[f] >= 0.1 - 1e-12);
    REQUIRE(imp.p_values[f] <= 1.0 + 1e-12);
  }
  REQUIRE(imp.slide_attention.size() == 6);
  REQUIRE_FALSE(imp.raw_feature_mode);
}

TEST_CASE("raw-feature mode scores the planted signal directly") {
  auto bags = density_corpus(12, 15, 2, 9, 77);
  ImportanceConfig cfg;
  cfg.seed = 1;
  cfg.raw_feature_mode = true;
  FeatureImportance imp = rank_feature_importance(bags, cfg);
  REQUIRE(imp.raw_feature_mode);
  REQUIRE(imp.p_values[kDensity] < 0.01);
}

TEST_CASE("importance rejects degenerate cohorts") {
  auto bags = density_corpus(3, 6, 4, 4, 13);
  SECTION("single class") {
    for (auto& b : bags) b.label = 0;
    REQUIRE_THROWS(rank_feature_importance(bags));
  }
  SECTION("ternary label") {
    bags[0].label = 2;
    REQUIRE_THROWS(rank_feature_importance(bags));
  }
  SECTION("one slide in a class") {
    std::vector<NucleusFeatureBag> few(bags.begin(), bags.begin() + 4);
    // three negatives, one positive
    few[3] = bags[3];
    few[3].label = 1;
    for (int i = 0; i < 3; ++i) few[i].label = 0;
    REQUIRE_THROWS(rank_feature_importance(few));
  }
  SECTION("mixed bin widths") {
    Rng rng(1);
    std::vector<PatchFeatures> patches{patch_with({random_shape(rng)})};
    bags[0] = build_feature_bags("odd", 0, patches, freeze_feature_ranges(patches), 5);
    REQUIRE_THROWS(rank_feature_importance(bags));
  }
}

TEST_CASE("importance report quotes p-values in the clinical style") {
  FeatureImportance imp;
  imp.labels = {0, 1};
  std::array<double, kFeatureCount> w0{}, w1{};
  for (int f = 0; f < kFeatureCount; ++f) {
    w0[f] = 0.1;
    w1[f] = 0.1;
  }
  w0[kDensity] = 0.3;  // density on top
  w1[kDensity] = 0.4;
  imp.slide_attention = {w0, w1};
  imp.mean_attention_neg = w0;
  imp.mean_attention_pos = w1;
  imp.p_values.fill(0.5);
  imp.p_values[4] = 0.009;        // circumference
  imp.p_values[kDensity] = 0.015;
  imp.p_values[2] = 0.00004;      // area, below the printable floor

  std::string report = render_importance_report(imp);
  REQUIRE(report.find("circumference (p = 0.009)") != std::string::npos);
  REQUIRE(report.find("density (p = 0.015)") != std::string::npos);
  REQUIRE(report.find("area (p < 0.001)") != std::string::npos);
  REQUIRE(report.find("1. density") != std::string::npos);  // ranked first
  int lines = 0;
  for (char ch : report)
    if (ch == '\n') ++lines;
  REQUIRE(lines == 1 + kFeatureCount);
}

// ---- heat maps ----

TEST_CASE("single bag overlay equals its softmax weights") {
  std::vector<std::string> refs{"0_0", "256_0", "0_256", "256_256"};
  BagAttention bag{refs, {0.1, 0.2, 0.3, 0.4}};
  HeatmapLayer layer = build_heatmap("s0", refs, 256, {bag});

  REQUIRE(layer.entries.size() == 4);
  REQUIRE(layer.coverage == 1.0);
  for (size_t i = 0; i < refs.size(); ++i) {
    REQUIRE(layer.entries[i].visits == 1);
    REQUIRE(layer.entries[i].weight == bag.weights[i]);  // mean of one = itself
  }
  REQUIRE(layer.entries[0].norm == Approx(0.0).margin(1e-12));
  REQUIRE(layer.entries[3].norm == Approx(1.0).margin(1e-12));
  REQUIRE(layer.entries[1].norm == Approx((0.2 - 0.1) / 0.3).margin(1e-12));
  REQUIRE(layer.entries[0].x == 0);
  REQUIRE(layer.entries[1].x == 256);
  REQUIRE(layer.entries[2].y == 256);
}

TEST_CASE("constant attention renders the documented mid-scale") {
  std::vector<std::string> refs{"0_0", "256_0", "512_0", "768_0"};
  BagAttention bag{refs, {0.25, 0.25, 0.25, 0.25}};
  HeatmapLayer layer = build_heatmap("s0", refs, 256, {bag});
  for (const HeatmapEntry& e : layer.entries) {
    REQUIRE(e.weight == 0.25);
    REQUIRE(e.norm == 0.5);
  }
}

TEST_CASE("multi-bag means match the hand-computed oracle") {
  std::vector<std::string> refs{"0_0", "256_0", "0_256", "256_256"};
  std::vector<BagAttention> bags{
      {{"0_0", "256_0"}, {0.6, 0.4}},
      {{"256_0", "0_256"}, {0.3, 0.7}},
      {{"0_0", "256_0", "0_256", "256_256"}, {0.25, 0.25, 0.25, 0.25}},
  };
  HeatmapLayer layer = build_heatmap("s0", refs, 256, bags);
  REQUIRE(layer.entries[0].weight == Approx((0.6 + 0.25) / 2.0).margin(1e-12));
  REQUIRE(layer.entries[1].weight == Approx((0.4 + 0.3 + 0.25) / 3.0).margin(1e-12));
  REQUIRE(layer.entries[2].weight == Approx((0.7 + 0.25) / 2.0).margin(1e-12));
  REQUIRE(layer.entries[3].weight == Approx(0.25).margin(1e-12));
  REQUIRE(layer.entries[1].visits == 3);
  REQUIRE(layer.coverage == 1.0);
}

TEST_CASE("a patch drawn twice in one bag is averaged over both draws") {
  std::vector<std::string> refs{"0_0", "256_0"};
  BagAttention bag{{"0_0", "0_0", "256_0"}, {0.5, 0.3, 0.2}};
  HeatmapLayer layer = build_heatmap("s0", refs, 256, {bag});
  REQUIRE(layer.entries[0].visits == 2);
  REQUIRE(layer.entries[0].weight == Approx(0.4).margin(1e-12));
  REQUIRE(layer.entries[1].weight == Approx(0.2).margin(1e-12));
}

TEST_CASE("unsampled patches stay transparent and count against coverage") {
  std::vector<std::string> refs{"0_0", "32_0", "0_32", "32_32"};
  BagAttention bag{{"0_0", "32_0"}, {0.7, 0.3}};
  HeatmapLayer layer = build_heatmap("s0", refs, 32, {bag});
  REQUIRE(layer.coverage == 0.5);
  REQUIRE(layer.entries[2].visits == 0);
  REQUIRE(layer.entries[3].visits == 0);

  ImageRgb slide(64, 64, {120, 140, 160});
  ImageRgb plain = slide.resize_box(32, 32);
  ImageRgb overlay = render_heatmap(layer, slide, 2);
  REQUIRE(overlay.width() == 32);
  REQUIRE(overlay.height() == 32);

  // Bottom half was never sampled: identical to the plain downsample.
  for (int64_t y = 16; y < 32; ++y)
    for (int64_t x = 0; x < 32; ++x) {
      REQUIRE(overlay.at(x, y).r == plain.at(x, y).r);
      REQUIRE(overlay.at(x, y).g == plain.at(x, y).g);
      REQUIRE(overlay.at(x, y).b == plain.at(x, y).b);
    }
  // Top half is blended toward the heat colors.
  REQUIRE(overlay.at(0, 0).b != plain.at(0, 0).b);
  REQUIRE(overlay.at(20, 0).r != plain.at(20, 0).r);
}

TEST_CASE("heat ramp endpoints and midpoint are pinned") {
  Rgb cold = heat_color(0.0);
  REQUIRE(static_cast<int>(cold.r) == 59);
  REQUIRE(static_cast<int>(cold.g) == 76);
  REQUIRE(static_cast<int>(cold.b) == 192);
  Rgb warm = heat_color(1.0);
  REQUIRE(static_cast<int>(warm.r) == 180);
  REQUIRE(static_cast<int>(warm.g) == 4);
  REQUIRE(static_cast<int>(warm.b) == 38);
  Rgb mid = heat_color(0.5);
  REQUIRE(static_cast<int>(mid.r) == 221);
  REQUIRE(static_cast<int>(mid.g) == 221);
  REQUIRE(static_cast<int>(mid.b) == 221);
  // Red channel grows along the ramp.
  REQUIRE(heat_color(0.25).r > cold.r);
  REQUIRE(heat_color(0.75).r > heat_color(0.25).r);
}

TEST_CASE("heat map rejects malformed inputs") {
  std::vector<std::string> refs{"0_0", "256_0"};
  REQUIRE_THROWS(build_heatmap("s0", refs, 256, {}));  // no bags
  REQUIRE_THROWS(build_heatmap("s0", {}, 256, {BagAttention{{"0_0"}, {1.0}}}));
  REQUIRE_THROWS(
      build_heatmap("s0", refs, 256, {BagAttention{{"999_0"}, {1.0}}}));  // unknown ref
  REQUIRE_THROWS(
      build_heatmap("s0", refs, 256, {BagAttention{{"0_0"}, {0.9}}}));  // sum != 1
  REQUIRE_THROWS(
      build_heatmap("s0", refs, 256, {BagAttention{{"0_0"}, {0.5, 0.5}}}));  // ragged
  REQUIRE_THROWS(build_heatmap("s0", {"0_0", "0_0"}, 256,
                               {BagAttention{{"0_0"}, {1.0}}}));  // duplicate tiling
  REQUIRE_THROWS(parse_patch_ref("nounderscore"));
}

TEST_CASE("heat map CSV dump round trips through the table reader") {
  fs::path dir = fresh_dir("amilpath_test_hcsv");
  std::vector<std::string> refs{"0_0", "256_0", "0_256"};
  BagAttention bag{{"0_0", "256_0"}, {0.8, 0.2}};
  HeatmapLayer layer = build_heatmap("s0", refs, 256, {bag});
  fs::path csv = dir / "heat.csv";
  save_heatmap_csv(csv, layer);

  CsvTable t = read_csv(csv);
  REQUIRE(t.header == std::vector<std::string>{"x", "y", "weight", "norm", "visits"});
  REQUIRE(t.rows.size() == 3);
  REQUIRE(parse_double(t.rows[0][2], "weight") == 0.8);
  REQUIRE(parse_int(t.rows[2][4], "visits") == 0);
}
