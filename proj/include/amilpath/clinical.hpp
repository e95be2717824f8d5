#pragma once
// Clinical record parsing and feature encoding: numeric columns are
// standardized with statistics fitted on the training cohort only;
// categorical columns expand to one-hot indicators over closed
// vocabularies. The encoded width is fixed across cohorts.

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/csv.hpp"
#include "json.hpp"

namespace amilpath {

struct CategoricalSpec {
  std::string name;
  std::vector<std::string> vocabulary;
};

inline const std::vector<CategoricalSpec>& clinical_categoricals() {
  static const std::vector<CategoricalSpec> specs = {
      {"tumor_type",
       {"Invasive ductal carcinoma", "Invasive lobular carcinoma", "Other types"}},
      {"t_stage", {"T1", "T2"}},
      {"er", {"Positive", "Negative"}},
      {"pr", {"Positive", "Negative"}},
      {"her2", {"Positive", "Negative"}},
      {"molecular_subtype", {"Luminal A", "Luminal B", "Triple negative", "HER2(+)"}},
  };
  return specs;
}

inline const std::vector<std::string>& clinical_numerics() {
  static const std::vector<std::string> names = {"age", "tumor_size"};
  return names;
}

struct ClinicalRecord {
  double age = 0.0;         // years
  double tumor_size = 0.0;  // cm
  std::array<std::string, 6> categorical;  // order of clinical_categoricals()

  double numeric(size_t i) const { return i == 0 ? age : tumor_size; }

  void validate(const std::string& context) const {
    require(std::isfinite(age) && age > 0, "non-positive or non-finite age in ", context);
    require(std::isfinite(tumor_size) && tumor_size > 0,
            "non-positive or non-finite tumor_size in ", context);
    const auto& specs = clinical_categoricals();
    for (size_t i = 0; i < specs.size(); ++i) {
      const auto& vocab = specs[i].vocabulary;
      bool ok = false;
      for (const auto& v : vocab) ok = ok || v == categorical[i];
      require(ok, "unknown value '", categorical[i], "' for ", specs[i].name, " in ",
              context);
    }
  }
};

class ClinicalEncoder {
 public:
  ClinicalEncoder() = default;

  static ClinicalEncoder fit(const std::vector<ClinicalRecord>& records) {
    require(!records.empty(), "clinical encoder fit cohort is empty");
    ClinicalEncoder enc;
    size_t n_num = clinical_numerics().size();
    enc.means_.assign(n_num, 0.0);
    enc.stds_.assign(n_num, 0.0);
    for (size_t j = 0; j < n_num; ++j) {
      double mean = 0.0;
      for (const auto& r : records) mean += r.numeric(j);
      mean /= static_cast<double>(records.size());
      double var = 0.0;
      for (const auto& r : records) {
        double d = r.numeric(j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(records.size());
      enc.means_[j] = mean;
      enc.stds_[j] = std::sqrt(var);
      if (enc.stds_[j] == 0.0)
        log_warn("numeric clinical column '%s' has zero variance; encoding as zeros",
                 clinical_numerics()[j].c_str());
    }
    return enc;
  }

  size_t width() const {
    size_t w = clinical_numerics().size();
    for (const auto& s : clinical_categoricals()) w += s.vocabulary.size();
    return w;
  }

  std::vector<double> transform(const ClinicalRecord& r) const {
    require(!means_.empty(), "clinical encoder not fitted");
    std::vector<double> out;
    out.reserve(width());
    for (size_t j = 0; j < means_.size(); ++j)
      out.push_back(stds_[j] == 0.0 ? 0.0 : (r.numeric(j) - means_[j]) / stds_[j]);
    const auto& specs = clinical_categoricals();
    for (size_t i = 0; i < specs.size(); ++i) {
      const auto& vocab = specs[i].vocabulary;
      size_t hit = vocab.size();
      for (size_t k = 0; k < vocab.size(); ++k)
        if (vocab[k] == r.categorical[i]) hit = k;
      require(hit < vocab.size(), "unseen category '", r.categorical[i], "' for ",
              specs[i].name, " at transform time");
      for (size_t k = 0; k < vocab.size(); ++k) out.push_back(k == hit ? 1.0 : 0.0);
    }
    return out;
  }

  std::vector<std::vector<double>> transform(const std::vector<ClinicalRecord>& rs) const {
    std::vector<std::vector<double>> out;
    out.reserve(rs.size());
    for (const auto& r : rs) out.push_back(transform(r));
    return out;
  }

  // Inverse of the standardization, numeric columns only.
  double inverse_numeric(size_t j, double z) const {
    return stds_[j] == 0.0 ? means_[j] : z * stds_[j] + means_[j];
  }

  nlohmann::json to_json() const {
    return {{"means", means_}, {"stds", stds_}};
  }

  static ClinicalEncoder from_json(const nlohmann::json& j) {
    ClinicalEncoder enc;
    enc.means_ = j.at("means").get<std::vector<double>>();
    enc.stds_ = j.at("stds").get<std::vector<double>>();
    require(enc.means_.size() == clinical_numerics().size(),
            "clinical encoder JSON has wrong numeric arity");
    return enc;
  }

 private:
  std::vector<double> means_;
  std::vector<double> stds_;
};

// Parses one clinical CSV row; `context` names the row for error messages.
inline ClinicalRecord parse_clinical_row(const CsvTable& t, size_t row,
                                         const std::string& context) {
  ClinicalRecord r;
  auto numeric_field = [&](const std::string& name) {
    int c = t.require_column(name);
    const std::string& s = t.rows[row][static_cast<size_t>(c)];
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      require(pos == s.size(), "trailing characters");
      return v;
    } catch (const std::exception&) {
      fail("bad numeric value '", s, "' for ", name, " in ", context);
    }
  };
  r.age = numeric_field("age");
  r.tumor_size = numeric_field("tumor_size");
  const auto& specs = clinical_categoricals();
  for (size_t i = 0; i < specs.size(); ++i) {
    int c = t.require_column(specs[i].name);
    r.categorical[i] = trim(t.rows[row][static_cast<size_t>(c)]);
  }
  r.validate(context);
  return r;
}

}  // namespace amilpath
