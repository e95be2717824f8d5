#pragma once
// Evaluation statistics: ROC/AUC with mid-rank tie handling, DeLong
// variance estimates for AUC confidence intervals and paired/unpaired
// comparisons, Clopper-Pearson exact binomial intervals for threshold
// metrics, a 3-class confusion summary, Mann-Whitney U and chi-square
// tests, per-stratum subgroup reports, and an L2-regularized logistic
// baseline fitted by Newton iterations.
//
// All functions here are pure; nothing caches mutable state.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "amilpath/clinical.hpp"
#include "amilpath/common.hpp"

namespace amilpath::stats {

// Two-sided tail probability of a standard normal at |z|.
inline double two_sided_normal_p(double z) {
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

inline double normal_quantile(double p) {
  boost::math::normal_distribution<double> n01;
  return boost::math::quantile(n01, p);
}

// Ranks 1..n with ties sharing their average rank.
inline std::vector<double> midranks(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    double mid = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (size_t k = i; k < j; ++k) rank[order[k]] = mid;
    i = j;
  }
  return rank;
}

struct RocPoint {
  double threshold = 0.0;  // scores >= threshold are called positive
  double fpr = 0.0;
  double tpr = 0.0;
};

struct AucResult {
  double auc = 0.0;
  size_t n_pos = 0;
  size_t n_neg = 0;
  std::vector<RocPoint> roc;  // starts at (0,0), ends at (1,1)
};

namespace detail {

inline void check_binary_scores(const std::vector<double>& scores,
                                const std::vector<int>& labels, size_t& n_pos,
                                size_t& n_neg) {
  require(scores.size() == labels.size(), "scores/labels size mismatch: ", scores.size(),
          " vs ", labels.size());
  require(!scores.empty(), "empty score vector");
  n_pos = n_neg = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "label must be 0 or 1, got ", labels[i]);
    require(std::isfinite(scores[i]), "non-finite score at index ", i);
    if (labels[i] == 1)
      ++n_pos;
    else
      ++n_neg;
  }
  require(n_pos > 0 && n_neg > 0, "AUC needs both classes present (", n_pos,
          " positive, ", n_neg, " negative)");
}

}  // namespace detail

// AUC = (concordant + 0.5*tied) / (n_pos*n_neg), computed from mid-ranks.
inline AucResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  AucResult out;
  detail::check_binary_scores(scores, labels, out.n_pos, out.n_neg);
  std::vector<double> rank = midranks(scores);
  double pos_rank_sum = 0.0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) pos_rank_sum += rank[i];
  double m = static_cast<double>(out.n_pos), n = static_cast<double>(out.n_neg);
  out.auc = (pos_rank_sum - m * (m + 1.0) / 2.0) / (m * n);

  // ROC sweep over distinct thresholds, highest first; tied scores move
  // as one group so the curve is invariant to input order.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  out.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1)
        ++tp;
      else
        ++fp;
    }
    out.roc.push_back({scores[order[i]], static_cast<double>(fp) / n,
                       static_cast<double>(tp) / m});
    i = j;
  }
  return out;
}

// DeLong placement values: v_pos[i] is the fraction of negatives scored
// below positive i (ties count half), and symmetrically for v_neg.
struct Placements {
  double auc = 0.0;
  std::vector<double> v_pos;
  std::vector<double> v_neg;
};

inline Placements delong_placements(const std::vector<double>& scores,
                                    const std::vector<int>& labels) {
  size_t n_pos = 0, n_neg = 0;
  detail::check_binary_scores(scores, labels, n_pos, n_neg);
  std::vector<double> pos, neg;
  pos.reserve(n_pos);
  neg.reserve(n_neg);
  for (size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  std::vector<double> r_all = midranks(all);
  std::vector<double> r_pos = midranks(pos);
  std::vector<double> r_neg = midranks(neg);
  double m = static_cast<double>(n_pos), n = static_cast<double>(n_neg);
  Placements p;
  p.v_pos.resize(n_pos);
  p.v_neg.resize(n_neg);
  double sum = 0.0;
  for (size_t i = 0; i < n_pos; ++i) {
    p.v_pos[i] = (r_all[i] - r_pos[i]) / n;
    sum += r_all[i];
  }
  for (size_t j = 0; j < n_neg; ++j) p.v_neg[j] = 1.0 - (r_all[n_pos + j] - r_neg[j]) / m;
  p.auc = (sum - m * (m + 1.0) / 2.0) / (m * n);
  return p;
}

namespace detail {

inline double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  size_t n = a.size();
  if (n < 2) return 0.0;
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(n - 1);
}

// DeLong variance of a single AUC from its placements.
inline double delong_variance(const Placements& p) {
  return sample_cov(p.v_pos, p.v_pos) / static_cast<double>(p.v_pos.size()) +
         sample_cov(p.v_neg, p.v_neg) / static_cast<double>(p.v_neg.size());
}

}  // namespace detail

struct AucCi {
  double auc = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 1.0;
  bool degenerate = false;  // zero placement variance; interval collapses
};

inline AucCi delong_ci(const std::vector<double>& scores, const std::vector<int>& labels,
                       double level = 0.95) {
  require(level > 0.0 && level < 1.0, "confidence level must be in (0,1)");
  Placements p = delong_placements(scores, labels);
  AucCi out;
  out.auc = p.auc;
  double var = detail::delong_variance(p);
  out.degenerate = !(var > 0.0);
  out.se = out.degenerate ? 0.0 : std::sqrt(var);
  double z = normal_quantile(0.5 + level / 2.0);
  out.lower = std::clamp(out.auc - z * out.se, 0.0, 1.0);
  out.upper = std::clamp(out.auc + z * out.se, 0.0, 1.0);
  return out;
}

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double var_a = 0.0;   // variance of auc_a
  double var_b = 0.0;   // variance of auc_b
  double cov_ab = 0.0;  // covariance (zero in the unpaired variant)
  double z = 0.0;
  double p_value = 1.0;  // two-sided
  bool degenerate = false;  // difference variance is zero
};

namespace detail {

inline DelongResult finish_compare(DelongResult r) {
  double var_diff = r.var_a + r.var_b - 2.0 * r.cov_ab;
  double delta = r.auc_a - r.auc_b;
  if (!(var_diff > 0.0)) {
    r.degenerate = true;
    // Identical classifiers have zero difference with zero variance;
    // report p=1 there, undefined otherwise.
    if (std::abs(delta) < 1e-12) {
      r.z = 0.0;
      r.p_value = 1.0;
    } else {
      r.z = delta > 0 ? std::numeric_limits<double>::infinity()
                      : -std::numeric_limits<double>::infinity();
      r.p_value = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
  }
  r.z = delta / std::sqrt(var_diff);
  r.p_value = two_sided_normal_p(r.z);
  return r;
}

}  // namespace detail

// Paired comparison of two score vectors over the same cases.
inline DelongResult delong_compare(const std::vector<double>& scores_a,
                                   const std::vector<double>& scores_b,
                                   const std::vector<int>& labels) {
  require(scores_a.size() == scores_b.size(),
          "paired comparison needs equal-length score vectors");
  Placements pa = delong_placements(scores_a, labels);
  Placements pb = delong_placements(scores_b, labels);
  DelongResult r;
  r.auc_a = pa.auc;
  r.auc_b = pb.auc;
  r.var_a = detail::delong_variance(pa);
  r.var_b = detail::delong_variance(pb);
  r.cov_ab = detail::sample_cov(pa.v_pos, pb.v_pos) / static_cast<double>(pa.v_pos.size()) +
             detail::sample_cov(pa.v_neg, pb.v_neg) / static_cast<double>(pa.v_neg.size());
  return detail::finish_compare(r);
}

// Unpaired variant for disjoint case sets (e.g. two subgroups): the
// covariance term is zero, z = (A_a - A_b) / sqrt(var_a + var_b).
inline DelongResult delong_compare_unpaired(const std::vector<double>& scores_a,
                                            const std::vector<int>& labels_a,
                                            const std::vector<double>& scores_b,
                                            const std::vector<int>& labels_b) {
  Placements pa = delong_placements(scores_a, labels_a);
  Placements pb = delong_placements(scores_b, labels_b);
  DelongResult r;
  r.auc_a = pa.auc;
  r.auc_b = pb.auc;
  r.var_a = detail::delong_variance(pa);
  r.var_b = detail::delong_variance(pb);
  r.cov_ab = 0.0;
  return detail::finish_compare(r);
}

// Clopper-Pearson exact binomial interval for k successes out of n.
struct RateCi {
  double value = 0.0;
  double lower = 0.0;
  double upper = 1.0;
  size_t num = 0;
  size_t den = 0;
  bool undefined = false;  // empty denominator; CI reported as [0,1]
};

inline RateCi clopper_pearson(size_t k, size_t n, double alpha = 0.05) {
  RateCi r;
  r.num = k;
  r.den = n;
  if (n == 0) {
    r.undefined = true;
    return r;
  }
  require(k <= n, "successes ", k, " exceed trials ", n);
  r.value = static_cast<double>(k) / static_cast<double>(n);
  double kd = static_cast<double>(k), nd = static_cast<double>(n);
  if (k == 0) {
    r.lower = 0.0;
  } else {
    boost::math::beta_distribution<double> lo(kd, nd - kd + 1.0);
    r.lower = boost::math::quantile(lo, alpha / 2.0);
  }
  if (k == n) {
    r.upper = 1.0;
  } else {
    boost::math::beta_distribution<double> hi(kd + 1.0, nd - kd);
    r.upper = boost::math::quantile(hi, 1.0 - alpha / 2.0);
  }
  return r;
}

struct MetricsReport {
  std::string cohort;
  size_t n = 0;
  bool has_auc = false;  // AUC requires scores; binary_metrics alone leaves it unset
  AucCi auc;
  RateCi acc, sens, spec, ppv, npv;

  void validate() const {
    for (const RateCi* r : {&acc, &sens, &spec, &ppv, &npv}) {
      if (r->undefined) continue;
      require(r->value >= 0.0 && r->value <= 1.0, "rate outside [0,1] in report");
      require(r->lower <= r->value + 1e-12 && r->value <= r->upper + 1e-12,
              "rate CI does not bracket the point estimate");
    }
    if (has_auc)
      require(auc.lower <= auc.auc + 1e-12 && auc.auc <= auc.upper + 1e-12,
              "AUC CI does not bracket the point estimate");
  }
};

// Threshold metrics from binary predictions; each rate gets an exact
// Clopper-Pearson interval on its own numerator/denominator.
inline MetricsReport binary_metrics(const std::vector<int>& preds,
                                    const std::vector<int>& labels, double alpha = 0.05,
                                    const std::string& cohort = "") {
  require(preds.size() == labels.size(), "preds/labels size mismatch");
  require(!preds.empty(), "empty prediction vector");
  size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    require(preds[i] == 0 || preds[i] == 1, "prediction must be 0 or 1, got ", preds[i]);
    require(labels[i] == 0 || labels[i] == 1, "label must be 0 or 1, got ", labels[i]);
    if (preds[i] == 1)
      (labels[i] == 1 ? tp : fp)++;
    else
      (labels[i] == 0 ? tn : fn)++;
  }
  MetricsReport r;
  r.cohort = cohort;
  r.n = preds.size();
  r.acc = clopper_pearson(tp + tn, r.n, alpha);
  r.sens = clopper_pearson(tp, tp + fn, alpha);
  r.spec = clopper_pearson(tn, tn + fp, alpha);
  r.ppv = clopper_pearson(tp, tp + fp, alpha);
  r.npv = clopper_pearson(tn, tn + fn, alpha);
  if (r.ppv.undefined) log_warn("no predicted positives; PPV undefined, CI [0,1]");
  if (r.npv.undefined) log_warn("no predicted negatives; NPV undefined, CI [0,1]");
  r.validate();
  return r;
}

// Full report from scores: AUC with DeLong CI plus threshold metrics at
// the given cutoff (score >= threshold calls positive).
inline MetricsReport metrics_report(const std::vector<double>& scores,
                                    const std::vector<int>& labels,
                                    double threshold = 0.5, const std::string& cohort = "",
                                    double alpha = 0.05) {
  std::vector<int> preds(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] >= threshold ? 1 : 0;
  MetricsReport r = binary_metrics(preds, labels, alpha, cohort);
  r.auc = delong_ci(scores, labels, 1.0 - alpha);
  r.has_auc = true;
  r.validate();
  return r;
}

// 3-class confusion matrix: rows are truth, columns are prediction.
// Class indices 0,1,2 stand for N0, N+(1-2), N+(>=3).
struct Confusion3 {
  std::array<std::array<size_t, 3>, 3> counts{};
  std::array<double, 3> precision{};  // NaN when the class is never predicted
  std::array<double, 3> recall{};     // NaN when the class is absent from truth
  size_t total = 0;

  static constexpr std::array<const char*, 3> class_names = {"N0", "N+(1-2)", "N+(>=3)"};
};

inline Confusion3 confusion_3class(const std::vector<int>& preds,
                                   const std::vector<int>& labels) {
  require(preds.size() == labels.size(), "preds/labels size mismatch");
  Confusion3 c;
  for (size_t i = 0; i < preds.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < 3, "3-class label out of range: ", labels[i]);
    require(preds[i] >= 0 && preds[i] < 3, "3-class prediction out of range: ", preds[i]);
    c.counts[static_cast<size_t>(labels[i])][static_cast<size_t>(preds[i])]++;
  }
  c.total = preds.size();
  for (size_t k = 0; k < 3; ++k) {
    size_t row = 0, col = 0;
    for (size_t j = 0; j < 3; ++j) {
      row += c.counts[k][j];
      col += c.counts[j][k];
    }
    double nan = std::numeric_limits<double>::quiet_NaN();
    c.precision[k] = col ? static_cast<double>(c.counts[k][k]) / static_cast<double>(col) : nan;
    c.recall[k] = row ? static_cast<double>(c.counts[k][k]) / static_cast<double>(row) : nan;
  }
  return c;
}

struct MwuResult {
  double u = 0.0;  // U statistic of the first sample
  double p = 1.0;  // two-sided
  double z = 0.0;  // only meaningful for the normal branch
  bool exact = false;
  bool all_tied = false;
};

// Mann-Whitney U: exact permutation enumeration when both samples have
// at most 8 values, otherwise a tie-corrected normal approximation with
// continuity correction. Two-sided p by symmetry of the permutation
// distribution around n_x*n_y/2.
inline MwuResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  require(!x.empty() && !y.empty(), "Mann-Whitney needs non-empty samples");
  size_t nx = x.size(), ny = y.size(), n = nx + ny;
  std::vector<double> all = x;
  all.insert(all.end(), y.begin(), y.end());
  for (double v : all) require(std::isfinite(v), "non-finite sample value");
  std::vector<double> rank = midranks(all);
  double rx = std::accumulate(rank.begin(), rank.begin() + static_cast<long>(nx), 0.0);
  MwuResult r;
  double nxd = static_cast<double>(nx), nyd = static_cast<double>(ny);
  r.u = rx - nxd * (nxd + 1.0) / 2.0;
  double mu = nxd * nyd / 2.0;

  bool tied = std::all_of(all.begin(), all.end(), [&](double v) { return v == all[0]; });
  if (tied) {
    r.all_tied = true;
    r.p = 1.0;
    return r;
  }

  if (std::max(nx, ny) <= 8) {
    // Full enumeration over all C(n, nx) group assignments.
    r.exact = true;
    std::vector<char> mask(n, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<long>(nx), 1);
    std::sort(mask.begin(), mask.end());  // start at the lexicographically first mask
    size_t total = 0, at_least = 0;
    double margin = std::abs(r.u - mu) - 1e-9;
    do {
      double s = 0.0;
      for (size_t i = 0; i < n; ++i)
        if (mask[i]) s += rank[i];
      double u = s - nxd * (nxd + 1.0) / 2.0;
      ++total;
      if (std::abs(u - mu) >= margin) ++at_least;
    } while (std::next_permutation(mask.begin(), mask.end()));
    r.p = static_cast<double>(at_least) / static_cast<double>(total);
    return r;
  }

  // Tie correction over rank groups; continuity correction of 0.5.
  double tie_sum = 0.0;
  std::vector<double> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    double t = static_cast<double>(j - i);
    tie_sum += t * t * t - t;
    i = j;
  }
  double nd = static_cast<double>(n);
  double var = nxd * nyd / 12.0 * ((nd + 1.0) - tie_sum / (nd * (nd - 1.0)));
  if (!(var > 0.0)) {
    r.all_tied = true;
    r.p = 1.0;
    return r;
  }
  double num = std::max(std::abs(r.u - mu) - 0.5, 0.0);
  r.z = num / std::sqrt(var);
  r.p = std::min(two_sided_normal_p(r.z), 1.0);
  return r;
}

struct ChiSquareResult {
  double chi2 = 0.0;
  double p = 1.0;
  size_t df = 0;
};

// Pearson chi-square on an r x c contingency table. Rows and columns
// with zero margin are dropped before computing expected counts.
inline ChiSquareResult chi_square(const std::vector<std::vector<size_t>>& table) {
  require(!table.empty() && !table[0].empty(), "empty contingency table");
  size_t nc = table[0].size();
  for (const auto& row : table)
    require(row.size() == nc, "ragged contingency table");
  std::vector<double> row_sum(table.size(), 0.0), col_sum(nc, 0.0);
  double total = 0.0;
  for (size_t i = 0; i < table.size(); ++i)
    for (size_t j = 0; j < nc; ++j) {
      double v = static_cast<double>(table[i][j]);
      row_sum[i] += v;
      col_sum[j] += v;
      total += v;
    }
  require(total > 0.0, "contingency table sums to zero");
  size_t rows_kept = 0, cols_kept = 0;
  for (double s : row_sum) rows_kept += s > 0.0;
  for (double s : col_sum) cols_kept += s > 0.0;
  ChiSquareResult r;
  if (rows_kept < 2 || cols_kept < 2) {
    log_warn("contingency table has fewer than 2 non-empty rows or columns; p=1");
    return r;
  }
  for (size_t i = 0; i < table.size(); ++i) {
    if (row_sum[i] == 0.0) continue;
    for (size_t j = 0; j < nc; ++j) {
      if (col_sum[j] == 0.0) continue;
      double e = row_sum[i] * col_sum[j] / total;
      double d = static_cast<double>(table[i][j]) - e;
      r.chi2 += d * d / e;
    }
  }
  r.df = (rows_kept - 1) * (cols_kept - 1);
  boost::math::chi_squared_distribution<double> dist(static_cast<double>(r.df));
  r.p = boost::math::cdf(boost::math::complement(dist, r.chi2));
  return r;
}

// ---------------------------------------------------------------------------
// Subgroup analysis

struct StratumReport {
  std::string value;  // stratum label within the characteristic
  bool skipped = false;
  std::string skip_reason;
  MetricsReport metrics;
};

struct SubgroupRow {
  std::string characteristic;
  StratumReport a, b;
  bool p_defined = false;
  double p = 1.0;  // unpaired DeLong z-test between the two stratum AUCs
};

namespace detail {

inline StratumReport stratum_report(const std::string& value,
                                    const std::vector<size_t>& idx,
                                    const std::vector<double>& scores,
                                    const std::vector<int>& labels, double threshold,
                                    double alpha) {
  StratumReport s;
  s.value = value;
  if (idx.size() < 10) {
    s.skipped = true;
    s.skip_reason = "fewer than 10 cases";
    return s;
  }
  size_t pos = 0;
  for (size_t i : idx) pos += labels[i] == 1;
  if (pos == 0 || pos == idx.size()) {
    s.skipped = true;
    s.skip_reason = "single class";
    return s;
  }
  std::vector<double> sc;
  std::vector<int> lb;
  sc.reserve(idx.size());
  lb.reserve(idx.size());
  for (size_t i : idx) {
    sc.push_back(scores[i]);
    lb.push_back(labels[i]);
  }
  s.metrics = metrics_report(sc, lb, threshold, value, alpha);
  return s;
}

}  // namespace detail

// Compares two disjoint strata of the same case set; p comes from the
// unpaired DeLong z-test and is defined only when both strata qualify.
inline SubgroupRow compare_strata(const std::string& characteristic,
                                  const std::string& value_a, const std::vector<size_t>& idx_a,
                                  const std::string& value_b, const std::vector<size_t>& idx_b,
                                  const std::vector<double>& scores,
                                  const std::vector<int>& labels, double threshold = 0.5,
                                  double alpha = 0.05) {
  SubgroupRow row;
  row.characteristic = characteristic;
  row.a = detail::stratum_report(value_a, idx_a, scores, labels, threshold, alpha);
  row.b = detail::stratum_report(value_b, idx_b, scores, labels, threshold, alpha);
  if (!row.a.skipped && !row.b.skipped) {
    std::vector<double> sa, sb;
    std::vector<int> la, lb;
    for (size_t i : idx_a) {
      sa.push_back(scores[i]);
      la.push_back(labels[i]);
    }
    for (size_t i : idx_b) {
      sb.push_back(scores[i]);
      lb.push_back(labels[i]);
    }
    DelongResult d = delong_compare_unpaired(sa, la, sb, lb);
    row.p_defined = std::isfinite(d.p_value);
    if (row.p_defined) row.p = d.p_value;
  }
  return row;
}

// Standard clinical strata: age <= 50 vs > 50, T1 vs T2, and receptor
// status for ER, PR, HER2. Strata with under 10 cases or a single class
// are skipped with a reason.
inline std::vector<SubgroupRow> subgroup_report(const std::vector<double>& scores,
                                                const std::vector<int>& labels,
                                                const std::vector<ClinicalRecord>& clinical,
                                                double threshold = 0.5, double alpha = 0.05) {
  require(scores.size() == labels.size() && scores.size() == clinical.size(),
          "subgroup inputs must align case-for-case");
  auto pick = [&](auto&& pred) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < clinical.size(); ++i)
      if (pred(clinical[i])) idx.push_back(i);
    return idx;
  };
  std::vector<SubgroupRow> rows;
  rows.push_back(compare_strata(
      "Age <= 50", "Yes", pick([](const ClinicalRecord& r) { return r.age <= 50.0; }),
      "No", pick([](const ClinicalRecord& r) { return r.age > 50.0; }), scores, labels,
      threshold, alpha));
  const std::array<std::pair<size_t, const char*>, 4> cats = {
      {{1, "T stage"}, {2, "ER"}, {3, "PR"}, {4, "HER2"}}};
  for (const auto& [ci, name] : cats) {
    const auto& vocab = clinical_categoricals()[ci].vocabulary;
    rows.push_back(compare_strata(
        name, vocab[0],
        pick([&, ci](const ClinicalRecord& r) { return r.categorical[ci] == vocab[0]; }),
        vocab[1],
        pick([&, ci](const ClinicalRecord& r) { return r.categorical[ci] == vocab[1]; }),
        scores, labels, threshold, alpha));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Logistic baseline

struct LogisticModel {
  std::vector<double> weights;  // one per feature
  double intercept = 0.0;
  bool converged = false;
  size_t iterations = 0;
  bool separation_warning = false;

  double score(const std::vector<double>& x) const {
    require(x.size() == weights.size(), "feature width ", x.size(),
            " != model width ", weights.size());
    double eta = intercept;
    for (size_t j = 0; j < x.size(); ++j) eta += weights[j] * x[j];
    return 1.0 / (1.0 + std::exp(-eta));
  }

  std::vector<double> predict_proba(const std::vector<std::vector<double>>& X) const {
    std::vector<double> out;
    out.reserve(X.size());
    for (const auto& x : X) out.push_back(score(x));
    return out;
  }
};

namespace detail {

// Solves A x = b for symmetric positive definite A via Cholesky,
// escalating a ridge term if the factorization stalls.
inline std::vector<double> spd_solve(std::vector<double> A, std::vector<double> b) {
  size_t d = b.size();
  for (double ridge = 0.0;; ridge = ridge == 0.0 ? 1e-10 : ridge * 100.0) {
    require(ridge < 1.0, "normal-equation matrix is numerically singular");
    std::vector<double> L = A;
    for (size_t i = 0; i < d; ++i) L[i * d + i] += ridge;
    bool ok = true;
    for (size_t i = 0; i < d && ok; ++i) {
      for (size_t j = 0; j <= i; ++j) {
        double s = L[i * d + j];
        for (size_t k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
        if (i == j) {
          if (!(s > 0.0)) {
            ok = false;
            break;
          }
          L[i * d + i] = std::sqrt(s);
        } else {
          L[i * d + j] = s / L[j * d + j];
        }
      }
    }
    if (!ok) continue;
    std::vector<double> x = b;
    for (size_t i = 0; i < d; ++i) {
      for (size_t k = 0; k < i; ++k) x[i] -= L[i * d + k] * x[k];
      x[i] /= L[i * d + i];
    }
    for (size_t ii = d; ii-- > 0;) {
      for (size_t k = ii + 1; k < d; ++k) x[ii] -= L[k * d + ii] * x[k];
      x[ii] /= L[ii * d + ii];
    }
    return x;
  }
}

}  // namespace detail

// Newton-Raphson fit of L2-penalized logistic regression. The penalty
// (strength l2) applies to feature weights only, never the intercept.
// Convergence: max-norm of the penalized gradient below tol.
inline LogisticModel fit_logistic(const std::vector<std::vector<double>>& X,
                                  const std::vector<int>& y, double l2 = 1.0,
                                  double tol = 1e-6, size_t max_iter = 1000) {
  require(X.size() == y.size(), "feature/label size mismatch");
  require(!X.empty(), "empty design matrix");
  size_t n = X.size(), d = X[0].size();
  for (const auto& row : X)
    require(row.size() == d, "ragged design matrix");
  size_t pos = 0;
  for (int v : y) {
    require(v == 0 || v == 1, "label must be 0 or 1, got ", v);
    pos += v == 1;
  }
  require(pos > 0 && pos < n, "logistic fit needs both classes present");
  require(l2 >= 0.0, "negative L2 strength");

  size_t w = d + 1;  // column 0 is the intercept
  LogisticModel model;
  std::vector<double> beta(w, 0.0);
  std::vector<double> p(n), grad(w), H(w * w);
  for (size_t it = 0; it < max_iter; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(H.begin(), H.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      double eta = beta[0];
      for (size_t j = 0; j < d; ++j) eta += beta[j + 1] * X[i][j];
      p[i] = 1.0 / (1.0 + std::exp(-eta));
      double r = p[i] - static_cast<double>(y[i]);
      double wgt = std::max(p[i] * (1.0 - p[i]), 1e-12);
      grad[0] += r;
      for (size_t j = 0; j < d; ++j) grad[j + 1] += r * X[i][j];
      H[0] += wgt;
      for (size_t j = 0; j < d; ++j) {
        H[(j + 1) * w] += wgt * X[i][j];
        for (size_t k = 0; k <= j; ++k)
          H[(j + 1) * w + (k + 1)] += wgt * X[i][j] * X[i][k];
      }
    }
    for (size_t j = 1; j < w; ++j) {
      grad[j] += l2 * beta[j];
      H[j * w + j] += l2;
    }
    for (size_t i = 0; i < w; ++i)
      for (size_t j = i + 1; j < w; ++j) H[i * w + j] = H[j * w + i];
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    model.iterations = it;
    if (gmax < tol) {
      model.converged = true;
      break;
    }
    std::vector<double> step = detail::spd_solve(H, grad);
    for (size_t j = 0; j < w; ++j) beta[j] -= step[j];
  }
  if (!model.converged)
    log_warn("logistic fit stopped at %zu iterations without convergence", max_iter);

  model.intercept = beta[0];
  model.weights.assign(beta.begin() + 1, beta.end());

  // Perfectly separable data drives the unpenalized MLE to infinity; the
  // L2 term keeps the fit bounded, but flag it for the caller.
  if (d > 0) {
    double max_pos_eta = -std::numeric_limits<double>::infinity();
    double min_pos_eta = std::numeric_limits<double>::infinity();
    double max_neg_eta = -std::numeric_limits<double>::infinity();
    double min_neg_eta = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      double eta = beta[0];
      for (size_t j = 0; j < d; ++j) eta += beta[j + 1] * X[i][j];
      if (y[i] == 1) {
        max_pos_eta = std::max(max_pos_eta, eta);
        min_pos_eta = std::min(min_pos_eta, eta);
      } else {
        max_neg_eta = std::max(max_neg_eta, eta);
        min_neg_eta = std::min(min_neg_eta, eta);
      }
    }
    if (min_pos_eta > max_neg_eta || min_neg_eta > max_pos_eta) {
      model.separation_warning = true;
      log_warn("classes are perfectly separated; relying on L2 penalty for boundedness");
    }
  }
  return model;
}

}  // namespace amilpath::stats
