#pragma once
// Rendering of evaluation results: aligned text tables with bracketed
// 95% CIs (AUC as a 3-decimal fraction, rates as 2-decimal percentages),
// JSON mirrors of the same content, and ROC points as CSV.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/stats.hpp"
#include "json.hpp"

namespace amilpath::stats {

inline std::string format_double(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// "0.831 [0.775, 0.878]"
inline std::string format_fraction_ci(double v, double lo, double hi) {
  return format_double(v, 3) + " [" + format_double(lo, 3) + ", " + format_double(hi, 3) +
         "]";
}

inline std::string format_auc_cell(const AucCi& a) {
  return format_fraction_ci(a.auc, a.lower, a.upper);
}

// "64.13 [60.24, 67.88]"; an undefined rate renders as "--" with the
// full [0,1] interval.
inline std::string format_rate_cell(const RateCi& r) {
  std::string point = r.undefined ? std::string("--") : format_double(r.value * 100.0, 2);
  return point + " [" + format_double(r.lower * 100.0, 2) + ", " +
         format_double(r.upper * 100.0, 2) + "]";
}

// p-values print with 4 decimals; anything below 0.0001 as "<0.0001".
inline std::string format_p(double p) {
  if (!std::isfinite(p)) return "--";
  if (p < 0.0001) return "<0.0001";
  return format_double(p, 4);
}

// Left-justified columns padded to their widest cell, two spaces apart.
inline std::string align_table(const std::vector<std::vector<std::string>>& rows) {
  size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  std::vector<size_t> width(cols, 0);
  for (const auto& r : rows)
    for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (size_t c = 0; c < r.size(); ++c) {
      line += r[c];
      if (c + 1 < r.size()) line.append(width[c] - r[c].size() + 2, ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line;
    out += '\n';
  }
  return out;
}

inline const std::vector<std::string>& metric_headers() {
  static const std::vector<std::string> h = {"AUC",      "ACC (%)", "SENS (%)",
                                             "SPEC (%)", "PPV (%)", "NPV (%)"};
  return h;
}

inline std::vector<std::string> metric_cells(const MetricsReport& r) {
  return {r.has_auc ? format_auc_cell(r.auc) : std::string("--"), format_rate_cell(r.acc),
          format_rate_cell(r.sens),           format_rate_cell(r.spec),
          format_rate_cell(r.ppv),            format_rate_cell(r.npv)};
}

// One row per cohort, bracketed 95% CIs throughout.
inline std::string render_metrics_table(const std::vector<MetricsReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"Cohort", "n"};
  for (const auto& h : metric_headers()) header.push_back(h);
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row = {r.cohort.empty() ? "-" : r.cohort,
                                    std::to_string(r.n)};
    for (auto& c : metric_cells(r)) row.push_back(std::move(c));
    rows.push_back(std::move(row));
  }
  return align_table(rows);
}

// Paired strata per characteristic; the between-stratum p sits on the
// first row of each pair. Skipped strata say why.
inline std::string render_subgroup_table(const std::vector<SubgroupRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Characteristic", "Value", "n"};
  for (const auto& h : metric_headers()) header.push_back(h);
  header.push_back("p");
  cells.push_back(header);
  for (const auto& row : rows) {
    bool first = true;
    for (const StratumReport* s : {&row.a, &row.b}) {
      std::vector<std::string> line = {first ? row.characteristic : "", s->value};
      if (s->skipped) {
        line.push_back("-");
        line.push_back("skipped (" + s->skip_reason + ")");
      } else {
        line.push_back(std::to_string(s->metrics.n));
        for (auto& c : metric_cells(s->metrics)) line.push_back(std::move(c));
      }
      if (first) {
        line.resize(header.size() - 1);
        line.push_back(row.p_defined ? format_p(row.p) : "--");
      }
      cells.push_back(std::move(line));
      first = false;
    }
  }
  return align_table(cells);
}

inline std::string render_confusion(const Confusion3& c) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {""};
  for (const char* name : Confusion3::class_names)
    header.push_back(std::string("pred ") + name);
  rows.push_back(header);
  for (size_t i = 0; i < 3; ++i) {
    std::vector<std::string> row = {std::string("true ") + Confusion3::class_names[i]};
    for (size_t j = 0; j < 3; ++j) row.push_back(std::to_string(c.counts[i][j]));
    rows.push_back(std::move(row));
  }
  std::string out = align_table(rows);
  out += '\n';
  std::vector<std::vector<std::string>> prf = {{"Class", "Precision", "Recall"}};
  auto fmt = [](double v) { return std::isnan(v) ? std::string("--") : format_double(v, 3); };
  for (size_t k = 0; k < 3; ++k)
    prf.push_back({Confusion3::class_names[k], fmt(c.precision[k]), fmt(c.recall[k])});
  out += align_table(prf);
  return out;
}

inline nlohmann::json rate_to_json(const RateCi& r) {
  return {{"value", r.value},       {"lower", r.lower}, {"upper", r.upper},
          {"numerator", r.num},     {"denominator", r.den},
          {"undefined", r.undefined}};
}

inline nlohmann::json auc_to_json(const AucCi& a) {
  return {{"value", a.auc},
          {"lower", a.lower},
          {"upper", a.upper},
          {"se", a.se},
          {"degenerate", a.degenerate}};
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j = {{"cohort", r.cohort}, {"n", r.n},       {"acc", rate_to_json(r.acc)},
                      {"sens", rate_to_json(r.sens)},         {"spec", rate_to_json(r.spec)},
                      {"ppv", rate_to_json(r.ppv)},           {"npv", rate_to_json(r.npv)}};
  if (r.has_auc) j["auc"] = auc_to_json(r.auc);
  return j;
}

inline nlohmann::json subgroup_to_json(const std::vector<SubgroupRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json strata = nlohmann::json::array();
    for (const StratumReport* s : {&row.a, &row.b}) {
      nlohmann::json sj = {{"value", s->value}, {"skipped", s->skipped}};
      if (s->skipped)
        sj["skip_reason"] = s->skip_reason;
      else
        sj["metrics"] = report_to_json(s->metrics);
      strata.push_back(std::move(sj));
    }
    nlohmann::json rj = {{"characteristic", row.characteristic},
                         {"strata", std::move(strata)}};
    if (row.p_defined) rj["p"] = row.p;
    arr.push_back(std::move(rj));
  }
  return arr;
}

inline nlohmann::json confusion_to_json(const Confusion3& c) {
  nlohmann::json counts = nlohmann::json::array();
  for (size_t i = 0; i < 3; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (size_t j = 0; j < 3; ++j) row.push_back(c.counts[i][j]);
    counts.push_back(std::move(row));
  }
  auto opt = [](double v) {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  nlohmann::json per_class = nlohmann::json::array();
  for (size_t k = 0; k < 3; ++k)
    per_class.push_back({{"class", Confusion3::class_names[k]},
                         {"precision", opt(c.precision[k])},
                         {"recall", opt(c.recall[k])}});
  return {{"rows_are_truth", true},
          {"counts", std::move(counts)},
          {"per_class", std::move(per_class)},
          {"total", c.total}};
}

inline void write_roc_csv(const std::string& path, const AucResult& r) {
  std::string out = "threshold,fpr,tpr\n";
  char buf[128];
  for (const auto& pt : r.roc) {
    if (std::isinf(pt.threshold))
      std::snprintf(buf, sizeof(buf), "inf,%.10g,%.10g\n", pt.fpr, pt.tpr);
    else
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", pt.threshold, pt.fpr, pt.tpr);
    out += buf;
  }
  write_text_file(path, out);
}

}  // namespace amilpath::stats
