#pragma once
// Nucleus-feature distribution bags: per-patch morphometry quantized into
// eight fixed-range histograms stacked into patches-by-bins matrices, plus
// the attention re-ranking that scores which feature separates the classes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/morphometry.hpp"
#include "amilpath/nn/embedders.hpp"
#include "amilpath/stats.hpp"
#include "amilpath/tensor_archive.hpp"
#include "amilpath/train.hpp"

namespace amilpath {

constexpr int kFeatureCount = 8;

// Feature order is frozen; matrix indices, CSV columns and report rows all
// follow it.
inline const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names{
      "major_axis",    "minor_axis", "area",        "orientation",
      "circumference", "density",    "circularity", "rectangularity"};
  return names;
}

// One tiled patch and its morphometry, keyed by the patch origin.
struct PatchFeatures {
  int64_t x = 0, y = 0;
  PatchMorphometry morpho;
};

// Observed values of one feature within a patch. Orientation contributes
// only nuclei with a defined axis; density is a per-patch scalar. A patch
// without nuclei observes nothing, for density too: its rows stay zero and
// flagged rather than pretending a measurement happened.
inline std::vector<double> feature_values(const PatchMorphometry& pm, int feature) {
  require(feature >= 0 && feature < kFeatureCount, "feature index out of range: ", feature);
  std::vector<double> out;
  if (pm.nuclei.empty()) return out;
  if (feature == 5) {
    out.push_back(pm.density);
    return out;
  }
  out.reserve(pm.nuclei.size());
  for (const NucleusShape& n : pm.nuclei) {
    switch (feature) {
      case 0: out.push_back(n.major_axis); break;
      case 1: out.push_back(n.minor_axis); break;
      case 2: out.push_back(n.area); break;
      case 3:
        if (n.orientation_defined) out.push_back(n.orientation);
        break;
      case 4: out.push_back(n.circumference); break;
      case 6: out.push_back(n.circularity); break;
      case 7: out.push_back(n.rectangularity); break;
      default: break;
    }
  }
  return out;
}

// Linear-interpolated percentile; q in [0,1].
inline double percentile(std::vector<double> v, double q) {
  require(!v.empty(), "percentile of an empty sample");
  require(q >= 0.0 && q <= 1.0, "percentile rank must be in [0,1], got ", q);
  std::sort(v.begin(), v.end());
  double r = q * (static_cast<double>(v.size()) - 1.0);
  size_t i = static_cast<size_t>(r);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + (r - static_cast<double>(i)) * (v[i + 1] - v[i]);
}

struct FeatureRanges {
  std::array<double, kFeatureCount> lo{};
  std::array<double, kFeatureCount> hi{};

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (int f = 0; f < kFeatureCount; ++f)
      j[feature_names()[static_cast<size_t>(f)]] = {lo[static_cast<size_t>(f)],
                                                    hi[static_cast<size_t>(f)]};
    return j;
  }
  static FeatureRanges from_json(const nlohmann::json& j) {
    FeatureRanges r;
    for (int f = 0; f < kFeatureCount; ++f) {
      const auto& pair = j.at(feature_names()[static_cast<size_t>(f)]);
      require(pair.is_array() && pair.size() == 2, "feature range must be a [lo, hi] pair");
      r.lo[static_cast<size_t>(f)] = pair[0].get<double>();
      r.hi[static_cast<size_t>(f)] = pair[1].get<double>();
    }
    return r;
  }
};

// Histogram ranges are frozen on the training cohort (1st-99th percentile
// of each feature's pooled observations) so outliers do not stretch the
// bins and the cohorts stay comparable. A feature with no observations at
// all (e.g. orientation on a corpus of round nuclei) gets a placeholder
// range; its rows will be flagged zero everywhere anyway.
inline FeatureRanges freeze_feature_ranges(const std::vector<PatchFeatures>& train_patches) {
  require(!train_patches.empty(), "cannot freeze feature ranges on an empty cohort");
  FeatureRanges r;
  for (int f = 0; f < kFeatureCount; ++f) {
    std::vector<double> pool;
    for (const PatchFeatures& p : train_patches) {
      std::vector<double> vals = feature_values(p.morpho, f);
      pool.insert(pool.end(), vals.begin(), vals.end());
    }
    if (pool.empty()) {
      log_warn("no observations of %s in the training cohort; using [0,1]",
               feature_names()[static_cast<size_t>(f)].c_str());
      r.lo[static_cast<size_t>(f)] = 0.0;
      r.hi[static_cast<size_t>(f)] = 1.0;
      continue;
    }
    r.lo[static_cast<size_t>(f)] = percentile(pool, 0.01);
    r.hi[static_cast<size_t>(f)] = percentile(pool, 0.99);
  }
  return r;
}

// Values outside the frozen range clamp into the edge bins; a degenerate
// range (constant feature) sends everything to bin 0.
inline int bin_index(double v, double lo, double hi, int bins) {
  if (!(hi > lo)) return 0;
  double t = (v - lo) / (hi - lo);
  int b = static_cast<int>(std::floor(t * static_cast<double>(bins)));
  return std::clamp(b, 0, bins - 1);
}

struct FeatureMatrix {
  int64_t rows = 0, cols = 0;
  std::vector<double> data;        // rows x cols, row-major histogram mass
  std::vector<uint8_t> zero_rows;  // 1 = the patch observed nothing

  double at(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * cols + c)];
  }
  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
};

struct NucleusFeatureBag {
  std::string slide_id;
  int label = 0;
  int bins = 10;
  std::vector<std::array<int64_t, 2>> origins;  // per matrix row
  std::array<FeatureMatrix, kFeatureCount> matrices;
};

inline NucleusFeatureBag build_feature_bags(const std::string& slide_id, int label,
                                            const std::vector<PatchFeatures>& patches,
                                            const FeatureRanges& ranges, int bins = 10) {
  require(bins >= 1, "bins must be >= 1, got ", bins);
  require(!patches.empty(), "feature bag needs at least one patch");
  NucleusFeatureBag bag;
  bag.slide_id = slide_id;
  bag.label = label;
  bag.bins = bins;
  for (const PatchFeatures& p : patches) bag.origins.push_back({p.x, p.y});

  int64_t rows = static_cast<int64_t>(patches.size());
  for (int f = 0; f < kFeatureCount; ++f) {
    FeatureMatrix& m = bag.matrices[static_cast<size_t>(f)];
    m.rows = rows;
    m.cols = bins;
    m.data.assign(static_cast<size_t>(rows * bins), 0.0);
    m.zero_rows.assign(static_cast<size_t>(rows), 0);
    for (int64_t r = 0; r < rows; ++r) {
      std::vector<double> vals = feature_values(patches[static_cast<size_t>(r)].morpho, f);
      if (vals.empty()) {
        m.zero_rows[static_cast<size_t>(r)] = 1;
        continue;
      }
      double mass = 1.0 / static_cast<double>(vals.size());
      for (double v : vals)
        m.at(r, bin_index(v, ranges.lo[static_cast<size_t>(f)],
                          ranges.hi[static_cast<size_t>(f)], bins)) += mass;
    }
  }
  return bag;
}

// ---- persistence: tensor archive + JSON index ----

inline fs::path feature_bag_index_path(const fs::path& archive) {
  fs::path p = archive;
  p.replace_extension(".json");
  return p;
}

inline void save_feature_bag(const fs::path& archive, const NucleusFeatureBag& bag) {
  std::map<std::string, nn::Tensor> tensors;
  nlohmann::json zero_rows;
  for (int f = 0; f < kFeatureCount; ++f) {
    const FeatureMatrix& m = bag.matrices[static_cast<size_t>(f)];
    const std::string& name = feature_names()[static_cast<size_t>(f)];
    tensors[name] =
        nn::Tensor({static_cast<int>(m.rows), static_cast<int>(m.cols)}, m.data);
    zero_rows[name] = std::vector<int>(m.zero_rows.begin(), m.zero_rows.end());
  }
  save_tensors(archive, tensors);
  nlohmann::json origins = nlohmann::json::array();
  for (const auto& o : bag.origins) origins.push_back({o[0], o[1]});
  nlohmann::json index{{"version", 1},        {"format", "amilpath-feature-bag"},
                       {"slide_id", bag.slide_id}, {"label", bag.label},
                       {"bins", bag.bins},    {"origins", origins},
                       {"zero_rows", zero_rows}};
  write_text_file(feature_bag_index_path(archive), index.dump(2) + "\n");
}

inline NucleusFeatureBag load_feature_bag(const fs::path& archive) {
  fs::path index_path = feature_bag_index_path(archive);
  require(fs::exists(index_path), "feature bag index missing: ", index_path.string());
  nlohmann::json index = nlohmann::json::parse(read_text_file(index_path), nullptr, false);
  require(!index.is_discarded(), "feature bag index is not valid JSON: ", index_path.string());
  require(index.contains("version"), "feature bag index lacks a version field");
  require(index.at("version").get<int>() == 1, "unsupported feature bag version");

  NucleusFeatureBag bag;
  bag.slide_id = index.at("slide_id").get<std::string>();
  bag.label = index.at("label").get<int>();
  bag.bins = index.at("bins").get<int>();
  for (const auto& o : index.at("origins"))
    bag.origins.push_back({o.at(0).get<int64_t>(), o.at(1).get<int64_t>()});

  std::map<std::string, nn::Tensor> tensors = load_tensors(archive);
  for (int f = 0; f < kFeatureCount; ++f) {
    const std::string& name = feature_names()[static_cast<size_t>(f)];
    auto it = tensors.find(name);
    require(it != tensors.end(), "feature bag archive lacks matrix ", name);
    const nn::Tensor& t = it->second;
    require(t.ndim() == 2, "feature matrix ", name, " must be 2-D");
    FeatureMatrix& m = bag.matrices[static_cast<size_t>(f)];
    m.rows = t.dim(0);
    m.cols = t.dim(1);
    m.data = t.data;
    auto zr = index.at("zero_rows").at(name).get<std::vector<int>>();
    require(static_cast<int64_t>(zr.size()) == m.rows, "zero_rows length mismatch for ", name);
    m.zero_rows.assign(zr.begin(), zr.end());
    require(m.rows == static_cast<int64_t>(bag.origins.size()),
            "matrix rows do not match the origin list");
  }
  return bag;
}

// Per-nucleus records for one slide; orientation is blank when the axis is
// undefined. Density repeats the patch-level value on every row.
inline void save_nucleus_csv(const fs::path& path, const std::string& slide_id,
                             const std::vector<PatchFeatures>& patches) {
  std::string out =
      "slide_id,patch_x,patch_y,major_axis,minor_axis,area,orientation,"
      "circumference,density,circularity,rectangularity\n";
  char buf[512];
  for (const PatchFeatures& p : patches) {
    for (const NucleusShape& n : p.morpho.nuclei) {
      char orient[64] = "";
      if (n.orientation_defined)
        std::snprintf(orient, sizeof(orient), "%.17g", n.orientation);
      std::snprintf(buf, sizeof(buf),
                    "%s,%lld,%lld,%.17g,%.17g,%.17g,%s,%.17g,%.17g,%.17g,%.17g\n",
                    slide_id.c_str(), static_cast<long long>(p.x),
                    static_cast<long long>(p.y), n.major_axis, n.minor_axis, n.area, orient,
                    n.circumference, p.morpho.density, n.circularity, n.rectangularity);
      out += buf;
    }
  }
  write_text_file(path, out);
}

// ---- feature importance: attention MIL over the eight matrices ----

struct ImportanceConfig {
  int epochs = 300;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  int hidden = 16;            // projector width
  int attention_hidden = 8;
  uint64_t seed = 0;
  bool raw_feature_mode = false;  // p-values from raw per-slide summaries
};

struct FeatureImportance {
  std::array<double, kFeatureCount> mean_attention_neg{};  // label 0
  std::array<double, kFeatureCount> mean_attention_pos{};  // label 1
  std::array<double, kFeatureCount> p_values{};
  std::vector<std::array<double, kFeatureCount>> slide_attention;
  std::vector<int> labels;
  double final_train_loss = 0.0;
  bool raw_feature_mode = false;
};

// Small attention MIL where each of the eight feature matrices becomes one
// instance: its column-mean histogram concatenated with a one-hot feature
// id, run through a trainable projector, attention-pooled and classified.
// The softmax attention weights are the importance scores, so the usual
// bag invariants (non-negative, sum to 1, order-independent) carry over.
class FeatureMilModel {
 public:
  FeatureMilModel(int bins, int hidden, int attention_hidden, uint64_t init_seed)
      : bins_(bins), hidden_(hidden), attn_hidden_(attention_hidden), ps_(init_seed) {
    require(bins_ >= 1 && hidden_ >= 1 && attn_hidden_ >= 1,
            "feature MIL dimensions must be >= 1");
    auto ensure = [this](const std::string& name, int in_dim, int out_dim) {
      ps_.uniform_param(name + ".weight", {out_dim, in_dim}, in_dim);
      ps_.uniform_param(name + ".bias", {out_dim}, in_dim);
    };
    ensure("projector", bins_ + kFeatureCount, hidden_);
    ensure("attention.0", hidden_, attn_hidden_);
    ensure("attention.2", attn_hidden_, 1);
    ensure("classifier", hidden_, 2);
  }

  // (kFeatureCount, bins + kFeatureCount) instance matrix for one slide.
  // Column means run over all patches; flagged rows contribute zero mass,
  // so emptiness itself stays visible to the model.
  nn::Tensor instances(const NucleusFeatureBag& bag) const {
    require(bag.bins == bins_, "bag has ", bag.bins, " bins but the model expects ", bins_);
    int width = bins_ + kFeatureCount;
    nn::Tensor t({kFeatureCount, width});
    for (int f = 0; f < kFeatureCount; ++f) {
      const FeatureMatrix& m = bag.matrices[static_cast<size_t>(f)];
      require(m.rows >= 1 && m.cols == bins_, "malformed feature matrix ",
              feature_names()[static_cast<size_t>(f)]);
      for (int64_t r = 0; r < m.rows; ++r)
        for (int64_t c = 0; c < m.cols; ++c)
          t.data[static_cast<size_t>(f * width + c)] +=
              m.at(r, c) / static_cast<double>(m.rows);
      t.data[static_cast<size_t>(f * width + bins_ + f)] = 1.0;
    }
    return t;
  }

  struct Forward {
    nn::Var probs;    // (1,2)
    nn::Var weights;  // (kFeatureCount,1)
  };

  Forward forward(const nn::Tensor& inst) {
    nn::Var x = nn::Var::input(inst);
    nn::Var h = nn::tanh_act(nn::dense_layer(ps_, "projector", x, hidden_));
    nn::Var a = nn::tanh_act(nn::dense_layer(ps_, "attention.0", h, attn_hidden_));
    nn::Var scores = nn::dense_layer(ps_, "attention.2", a, 1);
    nn::Var weights = nn::softmax(scores, 0);
    nn::Var pooled = nn::matmul(weights, h, true, false);
    nn::Var logits = nn::dense_layer(ps_, "classifier", pooled, 2);
    return {nn::softmax(logits, 1), weights};
  }

  std::vector<std::pair<std::string, nn::Var>> trainable_params() {
    std::vector<std::pair<std::string, nn::Var>> out;
    for (auto& [name, var] : ps_.params())
      if (var.requires_grad()) out.push_back({name, var});
    return out;
  }

 private:
  int bins_, hidden_, attn_hidden_;
  nn::ParamStore ps_;
};

namespace detail {

// Per-slide summary of one feature in bin units: mass-weighted mean bin
// center over non-flagged rows. Mann-Whitney is rank-based, so any affine
// bin-to-value map gives the same p and the frozen ranges are not needed.
inline bool raw_feature_summary(const NucleusFeatureBag& bag, int feature, double* out) {
  const FeatureMatrix& m = bag.matrices[static_cast<size_t>(feature)];
  double total = 0.0;
  int64_t observed = 0;
  for (int64_t r = 0; r < m.rows; ++r) {
    if (m.zero_rows[static_cast<size_t>(r)]) continue;
    for (int64_t c = 0; c < m.cols; ++c)
      total += m.at(r, c) * (static_cast<double>(c) + 0.5);
    ++observed;
  }
  if (observed == 0) return false;
  *out = total / static_cast<double>(observed);
  return true;
}

}  // namespace detail

inline FeatureImportance rank_feature_importance(const std::vector<NucleusFeatureBag>& bags,
                                                 const ImportanceConfig& cfg = {}) {
  require(cfg.epochs >= 1, "epochs must be >= 1");
  require(cfg.lr > 0.0 && cfg.weight_decay >= 0.0, "bad optimizer settings");
  require(!bags.empty(), "feature importance needs slides");
  int bins = bags.front().bins;
  int64_t n_pos = 0, n_neg = 0;
  for (const NucleusFeatureBag& b : bags) {
    require(b.label == 0 || b.label == 1,
            "feature importance compares two classes, got label ", b.label);
    require(b.bins == bins, "mixed bin counts across slides");
    (b.label == 1 ? n_pos : n_neg)++;
  }
  require(n_pos >= 2 && n_neg >= 2, "need at least 2 slides per class, got ", n_neg,
          " negative and ", n_pos, " positive");

  FeatureMilModel model(bins, cfg.hidden, cfg.attention_hidden, cfg.seed);
  std::vector<nn::Tensor> inst;
  std::vector<int> labels;
  for (const NucleusFeatureBag& b : bags) {
    inst.push_back(model.instances(b));
    labels.push_back(b.label);
  }

  Adam opt(model.trainable_params(), cfg.lr, cfg.weight_decay);
  double final_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.zero_grad();
    std::vector<nn::Var> losses;
    for (size_t i = 0; i < inst.size(); ++i) {
      FeatureMilModel::Forward fwd = model.forward(inst[i]);
      losses.push_back(nn::cross_entropy_from_probs(fwd.probs, {labels[i]}));
    }
    nn::Var loss = nn::scale(nn::add_n(losses), 1.0 / static_cast<double>(inst.size()));
    final_loss = loss.value().data[0];
    require(std::isfinite(final_loss), "feature-importance training diverged: loss ",
            final_loss, " at epoch ", epoch);
    nn::backward(loss);
    opt.step();
  }

  FeatureImportance out;
  out.raw_feature_mode = cfg.raw_feature_mode;
  out.labels = labels;
  out.final_train_loss = final_loss;
  for (size_t i = 0; i < inst.size(); ++i) {
    FeatureMilModel::Forward fwd = model.forward(inst[i]);
    std::array<double, kFeatureCount> w{};
    for (int f = 0; f < kFeatureCount; ++f)
      w[static_cast<size_t>(f)] = fwd.weights.value().data[static_cast<size_t>(f)];
    out.slide_attention.push_back(w);
    for (int f = 0; f < kFeatureCount; ++f) {
      auto& mean = labels[i] == 1 ? out.mean_attention_pos : out.mean_attention_neg;
      mean[static_cast<size_t>(f)] +=
          w[static_cast<size_t>(f)] / static_cast<double>(labels[i] == 1 ? n_pos : n_neg);
    }
  }

  for (int f = 0; f < kFeatureCount; ++f) {
    std::vector<double> pos, neg;
    for (size_t i = 0; i < bags.size(); ++i) {
      double v = 0.0;
      if (cfg.raw_feature_mode) {
        if (!detail::raw_feature_summary(bags[i], f, &v)) continue;
      } else {
        v = out.slide_attention[i][static_cast<size_t>(f)];
      }
      (labels[i] == 1 ? pos : neg).push_back(v);
    }
    // A feature nobody observed on one side cannot be compared.
    out.p_values[static_cast<size_t>(f)] =
        (pos.empty() || neg.empty()) ? 1.0 : stats::mann_whitney_u(pos, neg).p;
  }
  return out;
}

// Feature with the highest mean attention pooled over all slides.
inline int top_feature(const FeatureImportance& imp) {
  require(!imp.slide_attention.empty(), "importance result holds no slides");
  std::array<double, kFeatureCount> pooled{};
  for (const auto& w : imp.slide_attention)
    for (int f = 0; f < kFeatureCount; ++f) pooled[static_cast<size_t>(f)] += w[static_cast<size_t>(f)];
  return static_cast<int>(std::max_element(pooled.begin(), pooled.end()) - pooled.begin());
}

namespace detail {

inline std::string format_p(double p) {
  char buf[32];
  if (p < 0.0005) return "p < 0.001";
  std::snprintf(buf, sizeof(buf), "p = %.3f", p);
  return buf;
}

}  // namespace detail

// One line per feature, ranked by pooled mean attention, with the p-value
// formatted the way clinical write-ups quote it: "circumference (p = 0.009)".
inline std::string render_importance_report(const FeatureImportance& imp) {
  std::array<double, kFeatureCount> pooled{};
  for (const auto& w : imp.slide_attention)
    for (int f = 0; f < kFeatureCount; ++f)
      pooled[static_cast<size_t>(f)] += w[static_cast<size_t>(f)] /
                                        static_cast<double>(imp.slide_attention.size());
  std::array<int, kFeatureCount> order{};
  for (int f = 0; f < kFeatureCount; ++f) order[static_cast<size_t>(f)] = f;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pooled[static_cast<size_t>(a)] != pooled[static_cast<size_t>(b)])
      return pooled[static_cast<size_t>(a)] > pooled[static_cast<size_t>(b)];
    return a < b;
  });

  std::string out = "feature importance (attention re-ranking, ";
  out += imp.raw_feature_mode ? "raw-feature p-values" : "attention-weight p-values";
  out += ")\n";
  char buf[192];
  for (int rank = 0; rank < kFeatureCount; ++rank) {
    int f = order[static_cast<size_t>(rank)];
    std::snprintf(buf, sizeof(buf),
                  "%d. %s (%s): mean attention %.4f (label 1) vs %.4f (label 0)\n", rank + 1,
                  feature_names()[static_cast<size_t>(f)].c_str(),
                  detail::format_p(imp.p_values[static_cast<size_t>(f)]).c_str(),
                  imp.mean_attention_pos[static_cast<size_t>(f)],
                  imp.mean_attention_neg[static_cast<size_t>(f)]);
    out += buf;
  }
  return out;
}

}  // namespace amilpath
