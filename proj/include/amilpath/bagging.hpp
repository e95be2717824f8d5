#pragma once
// Slide-level cohort splitting and MIL bag construction.
//
// Splits are always at slide granularity; patches never cross cohorts.
// Bags are materialized up front (JSONL) so training runs are reproducible
// from artifacts alone.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/csv.hpp"
#include "amilpath/rng.hpp"
#include "nlohmann/json.hpp"

namespace amilpath {

struct BagConfig {
  int instances_per_bag = 10;  // N
  int bags_per_slide = 0;      // M; 0 = auto ceil(patches/N), clipped to [1,100]
  std::uint64_t seed = 0;
  bool attach_clinical = false;
};

struct Bag {
  std::string bag_id;
  std::string slide_id;
  std::vector<std::string> instance_refs;  // patch refs "x_y" within the slide
  std::vector<double> clinical_vec;        // empty unless attach_clinical
  int label = 0;

  bool operator==(const Bag&) const = default;
};

struct CohortSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

namespace detail {

// Largest-remainder apportionment: pick floor(total*ratio) ids overall,
// per-class quotas n_c*ratio rounded so class proportions stay within one
// slide of the global ratio.
inline std::vector<int> apportion(const std::vector<int>& class_counts, double ratio) {
  int total = 0;
  for (int c : class_counts) total += c;
  int want = static_cast<int>(std::floor(total * ratio + 1e-9));
  int n_classes = static_cast<int>(class_counts.size());
  std::vector<int> take(n_classes);
  std::vector<std::pair<double, int>> rema;  // (fractional remainder, class)
  int base_sum = 0;
  for (int i = 0; i < n_classes; ++i) {
    double quota = class_counts[i] * ratio;
    take[i] = static_cast<int>(std::floor(quota + 1e-9));
    base_sum += take[i];
    rema.push_back({quota - take[i], i});
  }
  std::sort(rema.begin(), rema.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    if (class_counts[a.second] != class_counts[b.second])
      return class_counts[a.second] > class_counts[b.second];
    return a.second < b.second;
  });
  for (int k = 0; k < want - base_sum; ++k) {
    int cls = rema[static_cast<size_t>(k) % rema.size()].second;
    take[cls] += 1;
  }
  for (int i = 0; i < n_classes; ++i)
    require(take[i] <= class_counts[i], "apportionment exceeds class size");
  return take;
}

// Removes `take[c]` ids per class from `groups`, returns them as one sorted
// list. Within a class the choice is a seeded shuffle of the lexicographically
// sorted ids, so the result depends on content + seed, not input order.
inline std::vector<std::string> draw_stratum(std::vector<std::vector<std::string>>& groups,
                                             const std::vector<int>& take, Rng& rng) {
  std::vector<std::string> drawn;
  for (size_t c = 0; c < groups.size(); ++c) {
    auto& ids = groups[c];
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    drawn.insert(drawn.end(), ids.begin(), ids.begin() + take[c]);
    ids.erase(ids.begin(), ids.begin() + take[c]);
  }
  std::sort(drawn.begin(), drawn.end());
  return drawn;
}

}  // namespace detail

// Three-way slide split: test drawn first at ratio_test, then val as
// ratio_val_of_train of the remaining pool. Stratified by class label unless
// `stratify` is off; stratification requires every class to hold >= 3 slides.
inline CohortSplit split_cohorts(const std::vector<std::pair<std::string, int>>& slides,
                                 double ratio_test, double ratio_val_of_train,
                                 std::uint64_t seed, bool stratify = true) {
  require(slides.size() >= 5, "split_cohorts needs >= 5 slides, got ", slides.size());
  require(ratio_test >= 0.0 && ratio_test < 1.0, "ratio_test out of [0,1): ", ratio_test);
  require(ratio_val_of_train >= 0.0 && ratio_val_of_train < 1.0,
          "ratio_val_of_train out of [0,1): ", ratio_val_of_train);

  std::map<int, std::vector<std::string>> by_class;
  std::set<std::string> seen;
  for (const auto& [id, cls] : slides) {
    require(seen.insert(id).second, "duplicate slide id in split input: ", id);
    by_class[stratify ? cls : 0].push_back(id);
  }
  if (stratify) {
    for (const auto& [cls, ids] : by_class)
      require(ids.size() >= 3, "class ", cls, " has ", ids.size(),
              " slides; stratified split needs >= 3 per class (use no-stratify)");
  }

  std::vector<std::vector<std::string>> groups;
  for (auto& [cls, ids] : by_class) groups.push_back(std::move(ids));
  std::vector<int> counts;
  for (const auto& g : groups) counts.push_back(static_cast<int>(g.size()));

  Rng rng(seed);
  CohortSplit out;
  out.test = detail::draw_stratum(groups, detail::apportion(counts, ratio_test), rng);

  std::vector<int> pool_counts;
  for (const auto& g : groups) pool_counts.push_back(static_cast<int>(g.size()));
  out.val = detail::draw_stratum(groups, detail::apportion(pool_counts, ratio_val_of_train), rng);

  for (const auto& g : groups) out.train.insert(out.train.end(), g.begin(), g.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

inline void save_cohorts(const fs::path& path, const CohortSplit& split) {
  CsvTable t;
  t.header = {"slide_id", "cohort"};
  for (const auto& id : split.train) t.rows.push_back({id, "train"});
  for (const auto& id : split.val) t.rows.push_back({id, "val"});
  for (const auto& id : split.test) t.rows.push_back({id, "test"});
  write_csv(path, t);
}

inline CohortSplit load_cohorts(const fs::path& path) {
  CsvTable t = read_csv(path);
  size_t id_col = t.require_column("slide_id");
  size_t cohort_col = t.require_column("cohort");
  CohortSplit split;
  for (const auto& row : t.rows) {
    const std::string& cohort = row[cohort_col];
    if (cohort == "train")
      split.train.push_back(row[id_col]);
    else if (cohort == "val")
      split.val.push_back(row[id_col]);
    else if (cohort == "test")
      split.test.push_back(row[id_col]);
    else
      fail("unknown cohort '", cohort, "' in ", path.string());
  }
  return split;
}

// Builds M bags of N instance refs for one slide. Sampling is without
// replacement per bag when the slide has >= N patches, otherwise with
// replacement (warned once). Zero patches excludes the slide (empty result).
inline std::vector<Bag> build_bags(const std::string& slide_id,
                                   const std::vector<std::string>& patch_refs, int label,
                                   const BagConfig& config,
                                   const std::vector<double>& clinical_vec = {}) {
  require(config.instances_per_bag >= 1, "instances_per_bag must be >= 1");
  require(config.bags_per_slide >= 0, "bags_per_slide must be >= 0");
  if (patch_refs.empty()) {
    log_warn("slide %s has no patches; excluded from bagging", slide_id.c_str());
    return {};
  }
  if (config.attach_clinical)
    require(!clinical_vec.empty(), "attach_clinical set but slide ", slide_id,
            " has no encoded clinical vector");

  const int n = config.instances_per_bag;
  const int p = static_cast<int>(patch_refs.size());
  int m = config.bags_per_slide;
  if (m == 0) m = std::clamp((p + n - 1) / n, 1, 100);

  const bool with_replacement = p < n;
  if (with_replacement)
    log_warn("slide %s has %d patches < N=%d; sampling with replacement", slide_id.c_str(), p, n);

  Rng rng = Rng(config.seed).child(fnv1a(slide_id));
  std::vector<Bag> bags;
  bags.reserve(static_cast<size_t>(m));
  std::vector<int> idx(static_cast<size_t>(p));
  for (int k = 0; k < m; ++k) {
    Bag bag;
    bag.bag_id = slide_id + "#" + std::to_string(k);
    bag.slide_id = slide_id;
    bag.label = label;
    bag.instance_refs.reserve(static_cast<size_t>(n));
    if (with_replacement) {
      for (int j = 0; j < n; ++j)
        bag.instance_refs.push_back(patch_refs[rng.below(static_cast<uint64_t>(p))]);
    } else {
      for (int i = 0; i < p; ++i) idx[static_cast<size_t>(i)] = i;
      for (int j = 0; j < n; ++j) {  // partial Fisher-Yates: first n entries
        int swap_at = j + static_cast<int>(rng.below(static_cast<uint64_t>(p - j)));
        std::swap(idx[static_cast<size_t>(j)], idx[static_cast<size_t>(swap_at)]);
        bag.instance_refs.push_back(patch_refs[static_cast<size_t>(idx[static_cast<size_t>(j)])]);
      }
    }
    if (config.attach_clinical) bag.clinical_vec = clinical_vec;
    bags.push_back(std::move(bag));
  }
  return bags;
}

inline nlohmann::json bag_to_json(const Bag& bag) {
  nlohmann::json j{{"bag_id", bag.bag_id},
                   {"slide_id", bag.slide_id},
                   {"label", bag.label},
                   {"instances", bag.instance_refs}};
  if (!bag.clinical_vec.empty()) j["clinical"] = bag.clinical_vec;
  return j;
}

inline Bag bag_from_json(const nlohmann::json& j) {
  Bag bag;
  try {
    bag.bag_id = j.at("bag_id").get<std::string>();
    bag.slide_id = j.at("slide_id").get<std::string>();
    bag.label = j.at("label").get<int>();
    bag.instance_refs = j.at("instances").get<std::vector<std::string>>();
    if (j.contains("clinical")) bag.clinical_vec = j.at("clinical").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail("malformed bag record: ", e.what());
  }
  require(!bag.instance_refs.empty(), "bag ", bag.bag_id, " has no instances");
  return bag;
}

// JSONL: one bag object per line.
inline void save_bags(const fs::path& path, const std::vector<Bag>& bags) {
  std::string out;
  for (const auto& bag : bags) {
    out += bag_to_json(bag).dump();
    out += '\n';
  }
  write_text_file(path, out);
}

inline std::vector<Bag> load_bags(const fs::path& path) {
  std::vector<Bag> bags;
  size_t clinical_width = 0;
  std::string text = read_text_file(path);
  size_t line_no = 0;
  for (const auto& line : split(text, '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded(), "invalid JSON at ", path.string(), ":", line_no);
    Bag bag = bag_from_json(j);
    if (!bag.clinical_vec.empty()) {
      if (clinical_width == 0) clinical_width = bag.clinical_vec.size();
      require(bag.clinical_vec.size() == clinical_width, "bag ", bag.bag_id,
              " clinical width ", bag.clinical_vec.size(), " != ", clinical_width);
    }
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace amilpath
