#pragma once
// Slide-level prediction: per-bag class probabilities from one slide are
// reduced per class (mean by default, max or median selectable, optional
// log-space merge), renormalized, and thresholded into a label.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/csv.hpp"
#include "amilpath/mil.hpp"
#include "amilpath/train.hpp"

namespace amilpath {

enum class Aggregation { Mean, Max, Median };

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "max") return Aggregation::Max;
  if (s == "median") return Aggregation::Median;
  fail("unknown aggregation '", s, "' (expected mean, max or median)");
}

inline std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Mean: return "mean";
    case Aggregation::Max: return "max";
    case Aggregation::Median: return "median";
  }
  fail("unreachable");
}

struct SlidePrediction {
  std::string slide_id;
  std::vector<double> class_probs;  // renormalized aggregate
  int predicted_label = 0;
  int n_bags = 0;
  std::vector<std::vector<double>> bag_probs;
};

namespace detail {

// Reduces one class's sorted values. Sorting first makes every mode
// independent of bag order down to the last bit; mean would otherwise
// leak order through floating-point rounding.
inline double reduce_sorted(std::vector<double>& v, Aggregation agg) {
  std::sort(v.begin(), v.end());
  switch (agg) {
    case Aggregation::Max:
      return v.back();
    case Aggregation::Median: {
      size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    case Aggregation::Mean: {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    }
  }
  fail("unreachable");
}

}  // namespace detail

// Pure aggregation core over per-bag probability rows of one slide.
inline SlidePrediction aggregate_slide(const std::string& slide_id,
                                       std::vector<std::vector<double>> bag_probs,
                                       Aggregation agg = Aggregation::Mean,
                                       double threshold = 0.5, bool logit_merge = false) {
  require(!bag_probs.empty(), "slide ", slide_id, " has no bag predictions");
  size_t classes = bag_probs[0].size();
  require(classes >= 2, "bag probability vector needs >= 2 classes");
  for (const auto& row : bag_probs)
    require(row.size() == classes, "inconsistent class count across bags of ", slide_id);

  SlidePrediction out;
  out.slide_id = slide_id;
  out.n_bags = static_cast<int>(bag_probs.size());
  out.class_probs.resize(classes);
  std::vector<double> column(bag_probs.size());
  for (size_t c = 0; c < classes; ++c) {
    for (size_t b = 0; b < bag_probs.size(); ++b) {
      double p = bag_probs[b][c];
      column[b] = logit_merge ? std::log(std::max(p, 1e-12)) : p;
    }
    double r = detail::reduce_sorted(column, agg);
    out.class_probs[c] = logit_merge ? std::exp(r) : r;
  }

  double sum = 0.0;
  for (double p : out.class_probs) sum += p;
  require(sum > 0.0, "aggregate probabilities sum to zero for ", slide_id);
  for (double& p : out.class_probs) p /= sum;

  if (classes == 2) {
    out.predicted_label = out.class_probs[1] >= threshold ? 1 : 0;
  } else {
    out.predicted_label = static_cast<int>(
        std::max_element(out.class_probs.begin(), out.class_probs.end()) -
        out.class_probs.begin());
  }
  out.bag_probs = std::move(bag_probs);
  return out;
}

// Runs the model on every bag, then aggregates. All bags must belong to
// the same slide.
inline SlidePrediction predict_slide(MilModel& model, const std::vector<TrainSample>& bags,
                                     Aggregation agg = Aggregation::Mean,
                                     double threshold = 0.5, bool logit_merge = false) {
  require(!bags.empty(), "predict_slide got no bags");
  const std::string& id = bags[0].slide_id;
  std::vector<std::vector<double>> probs;
  probs.reserve(bags.size());
  for (const auto& b : bags) {
    require(b.slide_id == id, "predict_slide got bags from slides ", id, " and ", b.slide_id);
    probs.push_back(model.predict_bag(b.instances, detail::clinical_ptr(b)).probs);
  }
  return aggregate_slide(id, std::move(probs), agg, threshold, logit_merge);
}

// CSV: slide_id, one probability column per class (p_N0 and p_pos in the
// binary case), the predicted label index, and the bag count.
inline void save_predictions(const fs::path& path, const std::vector<SlidePrediction>& preds) {
  require(!preds.empty(), "no predictions to save");
  size_t classes = preds[0].class_probs.size();
  CsvTable t;
  t.header = {"slide_id"};
  if (classes == 2) {
    t.header.push_back("p_N0");
    t.header.push_back("p_pos");
  } else {
    for (size_t c = 0; c < classes; ++c) t.header.push_back("p_N" + std::to_string(c));
  }
  t.header.push_back("label");
  t.header.push_back("n_bags");
  char buf[32];
  for (const auto& p : preds) {
    require(p.class_probs.size() == classes, "inconsistent class count in predictions");
    std::vector<std::string> row = {p.slide_id};
    for (double v : p.class_probs) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      row.push_back(buf);
    }
    row.push_back(std::to_string(p.predicted_label));
    row.push_back(std::to_string(p.n_bags));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

inline std::vector<SlidePrediction> load_predictions(const fs::path& path) {
  CsvTable t = read_csv(path);
  size_t id_col = t.require_column("slide_id");
  size_t label_col = t.require_column("label");
  size_t bags_col = t.require_column("n_bags");
  std::vector<size_t> prob_cols;
  if (t.column("p_pos") >= 0) {
    prob_cols = {static_cast<size_t>(t.require_column("p_N0")),
                 static_cast<size_t>(t.require_column("p_pos"))};
  } else {
    for (size_t c = 0;; ++c) {
      int col = t.column("p_N" + std::to_string(c));
      if (col < 0) break;
      prob_cols.push_back(static_cast<size_t>(col));
    }
    require(prob_cols.size() >= 2, "predictions file ", path.string(),
            " lacks probability columns");
  }
  std::vector<SlidePrediction> out;
  for (const auto& row : t.rows) {
    SlidePrediction p;
    p.slide_id = row[id_col];
    for (size_t c : prob_cols) p.class_probs.push_back(parse_double(row[c], "probability"));
    p.predicted_label = static_cast<int>(parse_int(row[label_col], "label"));
    p.n_bags = static_cast<int>(parse_int(row[bags_col], "n_bags"));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace amilpath
