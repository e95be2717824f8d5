#pragma once
// Command-line front-end. One binary, ten subcommands covering the whole
// pipeline: synth | tile | build-bags | train | predict | evaluate |
// compare-auc | heatmap | nuclei | feature-importance.
//
// Conventions shared by every subcommand:
//   - options resolve as defaults < --config JSON < explicit flags;
//   - one master --seed feeds splitting, bagging, init and training;
//   - artifacts land under a workdir (flag, config, or $AMILPATH_WORKDIR);
//   - a resolved-option snapshot is written to workdir/config/<cmd>.json
//     before any work, so a run can be reproduced from the snapshot alone;
//   - a lockfile serializes subcommands per workdir;
//   - exit 0 on success, 2 on a usage error, 1 on a runtime failure.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "amilpath/bagging.hpp"
#include "amilpath/common.hpp"
#include "amilpath/dataset.hpp"
#include "amilpath/feature_bags.hpp"
#include "amilpath/heatmap.hpp"
#include "amilpath/infer.hpp"
#include "amilpath/manifest.hpp"
#include "amilpath/mil.hpp"
#include "amilpath/morphometry.hpp"
#include "amilpath/report.hpp"
#include "amilpath/stats.hpp"
#include "amilpath/synth.hpp"
#include "amilpath/tiling.hpp"
#include "amilpath/train.hpp"

namespace amilpath::cli {

// Argv-level mistakes (as opposed to bad data at runtime) exit with 2.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

template <typename... Args>
inline void usage_require(bool cond, Args&&... parts) {
  if (cond) return;
  std::ostringstream os;
  (os << ... << parts);
  throw UsageError(os.str());
}

namespace detail {

// All multi-command knobs in one place; flags and the config file write
// into the same fields, so precedence is just order of application.
struct RunConfig {
  std::string workdir;
  std::string manifest, annotations, clinical;
  std::string tiles;  // defaults to <workdir>/tiles once workdir is known

  int instances_per_bag = 10;
  int bags_per_slide = 0;  // 0 = auto from patch count
  bool attach_clinical = false;
  double ratio_test = 0.2;
  double ratio_val = 0.25;  // of the non-test remainder
  bool stratify = true;

  std::string embedder = "toy";
  int attention_hidden = 128;
  int classes = 2;
  int clinical_repeat = 10;

  TrainConfig train;

  double threshold = 0.5;
  std::string aggregation = "mean";
  bool logit_merge = false;
  double alpha = 0.05;

  uint64_t seed = 0;

  void apply_json(const nlohmann::json& j) {
    try {
      workdir = j.value("workdir", workdir);
      seed = j.value("seed", seed);
      if (j.contains("paths")) {
        const auto& p = j.at("paths");
        manifest = p.value("manifest", manifest);
        annotations = p.value("annotations", annotations);
        clinical = p.value("clinical", clinical);
        tiles = p.value("tiles", tiles);
      }
      if (j.contains("bags")) {
        const auto& b = j.at("bags");
        instances_per_bag = b.value("instances_per_bag", instances_per_bag);
        bags_per_slide = b.value("bags_per_slide", bags_per_slide);
        attach_clinical = b.value("attach_clinical", attach_clinical);
        ratio_test = b.value("ratio_test", ratio_test);
        ratio_val = b.value("ratio_val", ratio_val);
        stratify = b.value("stratify", stratify);
      }
      if (j.contains("model")) {
        const auto& m = j.at("model");
        embedder = m.value("embedder", embedder);
        attention_hidden = m.value("attention_hidden", attention_hidden);
        classes = m.value("classes", classes);
        clinical_repeat = m.value("clinical_repeat", clinical_repeat);
      }
      if (j.contains("train")) train = TrainConfig::from_json(j.at("train"));
      if (j.contains("eval")) {
        const auto& e = j.at("eval");
        threshold = e.value("threshold", threshold);
        aggregation = e.value("aggregation", aggregation);
        logit_merge = e.value("logit_merge", logit_merge);
        alpha = e.value("alpha", alpha);
      }
    } catch (const nlohmann::json::exception& e) {
      fail("malformed run config: ", e.what());
    }
  }

  nlohmann::json to_json() const {
    return {{"workdir", workdir},
            {"paths",
             {{"manifest", manifest},
              {"annotations", annotations},
              {"clinical", clinical},
              {"tiles", tiles}}},
            {"bags",
             {{"instances_per_bag", instances_per_bag},
              {"bags_per_slide", bags_per_slide},
              {"attach_clinical", attach_clinical},
              {"ratio_test", ratio_test},
              {"ratio_val", ratio_val},
              {"stratify", stratify}}},
            {"model",
             {{"embedder", embedder},
              {"attention_hidden", attention_hidden},
              {"classes", classes},
              {"clinical_repeat", clinical_repeat}}},
            {"train", train.to_json()},
            {"eval",
             {{"threshold", threshold},
              {"aggregation", aggregation},
              {"logit_merge", logit_merge},
              {"alpha", alpha}}},
            {"seed", seed}};
  }
};

// Exclusive-create lockfile. Held for the whole subcommand; a leftover
// lock from a crashed run must be removed by hand, which the message says.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
    fs::create_directories(workdir);
    fd_ = ::open(path_.string().c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require(fd_ >= 0, "workdir ", workdir.string(),
            " is in use by another run (delete ", path_.string(), " if that run is dead)");
    std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) log_warn("could not record pid in lockfile");
  }
  ~WorkdirLock() {
    if (fd_ < 0) return;
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

inline void write_snapshot(const RunConfig& rc, const std::string& cmd,
                           nlohmann::json options) {
  nlohmann::json snap = {{"command", cmd}, {"resolved", rc.to_json()},
                         {"options", std::move(options)}};
  fs::path p = fs::path(rc.workdir) / "config" / (cmd + ".json");
  write_text_file(p, snap.dump(2) + "\n");
  log_debug("wrote config snapshot %s", p.string().c_str());
}

// Tile filenames are "<x>_<y>.png". Directory order is unspecified, so
// refs are sorted row-major to keep downstream sampling reproducible.
inline std::vector<std::string> list_patch_refs(const fs::path& slide_dir) {
  require(fs::is_directory(slide_dir), "no tiles at ", slide_dir.string());
  std::vector<std::pair<std::pair<int64_t, int64_t>, std::string>> keyed;
  for (const auto& entry : fs::directory_iterator(slide_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    std::string ref = entry.path().stem().string();
    size_t us = ref.find('_');
    require(us != std::string::npos && us + 1 < ref.size(), "unexpected tile name '", ref,
            "' under ", slide_dir.string());
    int64_t x = parse_int(ref.substr(0, us), "tile x");
    int64_t y = parse_int(ref.substr(us + 1), "tile y");
    keyed.push_back({{y, x}, ref});
  }
  require(!keyed.empty(), "no .png tiles under ", slide_dir.string());
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> refs;
  refs.reserve(keyed.size());
  for (auto& [key, ref] : keyed) refs.push_back(std::move(ref));
  return refs;
}

// slide_id,label CSV; the label is either a node-status name or a bare
// class index 0..2. Returned values are always the 3-class index.
inline std::map<std::string, int> load_label_map(const fs::path& path) {
  CsvTable t = read_csv(path);
  size_t id_col = static_cast<size_t>(t.require_column("slide_id"));
  size_t lab_col = static_cast<size_t>(t.require_column("label"));
  std::map<std::string, int> out;
  for (const auto& row : t.rows) {
    const std::string& s = row[lab_col];
    int v;
    if (s == "0" || s == "1" || s == "2")
      v = s[0] - '0';
    else
      v = static_cast<int>(parse_label(s));
    require(out.emplace(row[id_col], v).second, "duplicate slide_id '", row[id_col], "' in ",
            path.string());
  }
  require(!out.empty(), "empty label file ", path.string());
  return out;
}

// Prediction rows joined with truth labels; order follows the predictions
// file. Scores collapse multi-class output to P(any positive).
struct EvalCases {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> y_bin;    // 0/1
  std::vector<int> y_class;  // 0..2
  std::vector<int> pred_label;
  size_t pred_classes = 0;
};

inline EvalCases join_predictions(const std::vector<SlidePrediction>& preds,
                                  const std::map<std::string, int>& labels) {
  EvalCases ec;
  ec.pred_classes = preds.empty() ? 0 : preds[0].class_probs.size();
  for (const auto& p : preds) {
    auto it = labels.find(p.slide_id);
    require(it != labels.end(), "no label for slide '", p.slide_id, "'");
    ec.ids.push_back(p.slide_id);
    ec.scores.push_back(ec.pred_classes == 2 ? p.class_probs[1] : 1.0 - p.class_probs[0]);
    ec.y_class.push_back(it->second);
    ec.y_bin.push_back(it->second > 0 ? 1 : 0);
    ec.pred_label.push_back(p.predicted_label);
  }
  return ec;
}

inline int slide_label_int(AlnLabel l, int classes) {
  return classes >= 3 ? static_cast<int>(l) : (is_positive(l) ? 1 : 0);
}

// Segments and measures every tile of one slide.
inline std::vector<PatchFeatures> measure_slide(const fs::path& slide_dir,
                                                const NucleusSegmenter& seg) {
  std::vector<PatchFeatures> out;
  for (const std::string& ref : list_patch_refs(slide_dir)) {
    size_t us = ref.find('_');
    int64_t x = parse_int(ref.substr(0, us), "tile x");
    int64_t y = parse_int(ref.substr(us + 1), "tile y");
    ImageRgb img = read_png(slide_dir / (ref + ".png"));
    out.push_back({x, y, patch_morphometry(img, seg)});
  }
  return out;
}

inline fs::path resolve(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback : fs::path(value);
}

// ---- subcommand bodies ----

struct TileOpts {
  int64_t patch_size = 256;
  std::string out;
};

inline int cmd_tile(const RunConfig& rc, const TileOpts& opt) {
  usage_require(!rc.manifest.empty(), "tile needs --manifest (flag or config)");
  usage_require(!rc.annotations.empty(), "tile needs --annotations (flag or config)");
  usage_require(!rc.clinical.empty(), "tile needs --clinical (flag or config)");
  fs::path out = resolve(opt.out, fs::path(rc.workdir) / "tiles");
  write_snapshot(rc, "tile",
                 {{"patch_size", opt.patch_size}, {"out", out.string()}});

  auto records = load_manifest(rc.manifest, rc.annotations, rc.clinical);
  require(!records.empty(), "manifest has no usable slides");
  CsvTable index;
  index.header = {"slide_id", "x", "y", "size"};
  int64_t total = 0;
  for (const auto& rec : records) {
    auto patches = tile_and_write(rec, opt.patch_size, out);
    for (const auto& p : patches)
      index.rows.push_back({rec.slide_id, std::to_string(p.x), std::to_string(p.y),
                            std::to_string(p.size)});
    total += static_cast<int64_t>(patches.size());
    log_info("tiled %s: %zu patches", rec.slide_id.c_str(), patches.size());
  }
  write_csv(out / "index.csv", index);
  log_info("wrote %lld patches from %zu slides under %s", static_cast<long long>(total),
           records.size(), out.string().c_str());
  return 0;
}

struct BuildBagsOpts {
  std::string out;
};

inline int cmd_build_bags(const RunConfig& rc, const BuildBagsOpts& opt) {
  usage_require(!rc.manifest.empty(), "build-bags needs --manifest (flag or config)");
  usage_require(!rc.annotations.empty(), "build-bags needs --annotations (flag or config)");
  usage_require(!rc.clinical.empty(), "build-bags needs --clinical (flag or config)");
  fs::path tiles = resolve(rc.tiles, fs::path(rc.workdir) / "tiles");
  fs::path out = resolve(opt.out, fs::path(rc.workdir) / "bags");
  write_snapshot(rc, "build-bags", {{"tiles", tiles.string()}, {"out", out.string()}});

  auto records = load_manifest(rc.manifest, rc.annotations, rc.clinical);
  require(!records.empty(), "manifest has no usable slides");
  std::map<std::string, const SlideRecord*> by_id;
  std::vector<std::pair<std::string, int>> slides;
  for (const auto& rec : records) {
    by_id[rec.slide_id] = &rec;
    slides.push_back({rec.slide_id, slide_label_int(rec.label, rc.classes)});
  }

  CohortSplit split = split_cohorts(slides, rc.ratio_test, rc.ratio_val, rc.seed, rc.stratify);
  fs::create_directories(out);
  save_cohorts(out / "cohorts.csv", split);
  log_info("cohorts: %zu train / %zu val / %zu test", split.train.size(), split.val.size(),
           split.test.size());

  // The encoder is fitted on training slides only; val/test reuse it.
  ClinicalEncoder encoder;
  if (rc.attach_clinical) {
    std::vector<ClinicalRecord> fit_recs;
    for (const auto& id : split.train) fit_recs.push_back(by_id.at(id)->clinical);
    encoder = ClinicalEncoder::fit(fit_recs);
    write_text_file(out / "encoder.json", encoder.to_json().dump(2) + "\n");
  }

  BagConfig bc;
  bc.instances_per_bag = rc.instances_per_bag;
  bc.bags_per_slide = rc.bags_per_slide;
  bc.seed = rc.seed;
  bc.attach_clinical = rc.attach_clinical;

  auto emit = [&](const std::vector<std::string>& ids, const std::string& name) {
    std::vector<Bag> bags;
    for (const auto& id : ids) {
      const SlideRecord* rec = by_id.at(id);
      std::vector<std::string> refs = list_patch_refs(tiles / id);
      std::vector<double> clin =
          rc.attach_clinical ? encoder.transform(rec->clinical) : std::vector<double>{};
      auto bs = build_bags(id, refs, slide_label_int(rec->label, rc.classes), bc, clin);
      bags.insert(bags.end(), bs.begin(), bs.end());
    }
    require(!bags.empty(), "cohort '", name, "' produced no bags");
    save_bags(out / (name + ".jsonl"), bags);
    log_info("%s: %zu bags from %zu slides", name.c_str(), bags.size(), ids.size());
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");
  return 0;
}

struct TrainOpts {
  std::string train_bags, val_bags, out, history, init_checkpoint;
};

inline int cmd_train(const RunConfig& rc, const TrainOpts& opt) {
  fs::path tiles = resolve(rc.tiles, fs::path(rc.workdir) / "tiles");
  fs::path train_path = resolve(opt.train_bags, fs::path(rc.workdir) / "bags" / "train.jsonl");
  fs::path val_path = resolve(opt.val_bags, fs::path(rc.workdir) / "bags" / "val.jsonl");
  fs::path ckpt = resolve(opt.out, fs::path(rc.workdir) / "checkpoints" / "model.bin");
  fs::path history = resolve(opt.history, fs::path(rc.workdir) / "checkpoints" / "history.csv");
  write_snapshot(rc, "train",
                 {{"train_bags", train_path.string()},
                  {"val_bags", val_path.string()},
                  {"tiles", tiles.string()},
                  {"out", ckpt.string()},
                  {"history", history.string()},
                  {"init_checkpoint", opt.init_checkpoint}});

  auto train_bags = load_bags(train_path);
  auto val_bags = load_bags(val_path);
  require(!train_bags.empty() && !val_bags.empty(), "empty bag file");
  size_t clin_w = train_bags[0].clinical_vec.size();
  for (const auto& b : val_bags)
    require(b.clinical_vec.size() == clin_w, "train/val clinical widths differ");

  MilConfig mc;
  mc.embedder = rc.embedder;
  mc.attention_hidden = rc.attention_hidden;
  mc.classes = rc.classes;
  mc.clinical_width = static_cast<int>(clin_w);
  mc.clinical_repeat = rc.clinical_repeat;
  mc.init_seed = rc.seed;

  // Warm starts reuse the checkpoint's own architecture.
  MilModel model = opt.init_checkpoint.empty() ? MilModel(mc)
                                               : MilModel::load(opt.init_checkpoint);
  log_info("embedding bags with %s (D=%d)", model.config().embedder.c_str(),
           model.feature_dim());
  auto train_samples = make_train_samples(train_bags, tiles, model.embedder());
  auto val_samples = make_train_samples(val_bags, tiles, model.embedder());

  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  TrainResult result = train(model, train_samples, val_samples, tc);

  model.save(ckpt);
  save_history(history, result.history);
  nlohmann::json summary = {{"best_epoch", result.best_epoch},
                            {"best_val_auc", result.best_val_auc},
                            {"train_bags", train_bags.size()},
                            {"val_bags", val_bags.size()},
                            {"checkpoint", ckpt.string()}};
  write_text_file(ckpt.parent_path() / "summary.json", summary.dump(2) + "\n");
  log_info("best val AUC %.4f at epoch %d; checkpoint %s", result.best_val_auc,
           result.best_epoch, ckpt.string().c_str());
  return 0;
}

struct PredictOpts {
  std::string checkpoint, bags, out;
};

inline int cmd_predict(const RunConfig& rc, const PredictOpts& opt) {
  usage_require(!opt.checkpoint.empty(), "predict needs --checkpoint");
  usage_require(!opt.bags.empty(), "predict needs --bags");
  fs::path tiles = resolve(rc.tiles, fs::path(rc.workdir) / "tiles");
  fs::path out = resolve(opt.out, fs::path(rc.workdir) / "predictions.csv");
  write_snapshot(rc, "predict",
                 {{"checkpoint", opt.checkpoint},
                  {"bags", opt.bags},
                  {"tiles", tiles.string()},
                  {"out", out.string()}});

  MilModel model = MilModel::load(opt.checkpoint);
  auto bags = load_bags(opt.bags);
  require(!bags.empty(), "no bags in ", opt.bags);

  std::vector<std::string> order;
  std::map<std::string, std::vector<Bag>> by_slide;
  for (auto& b : bags) {
    if (!by_slide.count(b.slide_id)) order.push_back(b.slide_id);
    by_slide[b.slide_id].push_back(std::move(b));
  }

  Aggregation agg = parse_aggregation(rc.aggregation);
  std::vector<SlidePrediction> preds;
  for (const auto& id : order) {
    auto samples = make_train_samples(by_slide[id], tiles, model.embedder());
    preds.push_back(predict_slide(model, samples, agg, rc.threshold, rc.logit_merge));
  }
  save_predictions(out, preds);
  log_info("wrote %zu slide predictions to %s", preds.size(), out.string().c_str());
  return 0;
}

struct EvaluateOpts {
  std::string pred, labels, subgroups, cohort = "test";
  std::string json_out, text_out, roc_out;
};

inline int cmd_evaluate(const RunConfig& rc, const EvaluateOpts& opt) {
  usage_require(!opt.pred.empty(), "evaluate needs --pred");
  usage_require(!opt.labels.empty(), "evaluate needs --labels");
  fs::path json_out = resolve(opt.json_out, fs::path(rc.workdir) / "reports" / "metrics.json");
  fs::path text_out = resolve(opt.text_out, fs::path(rc.workdir) / "reports" / "metrics.txt");
  write_snapshot(rc, "evaluate",
                 {{"pred", opt.pred},
                  {"labels", opt.labels},
                  {"subgroups", opt.subgroups},
                  {"cohort", opt.cohort},
                  {"json_out", json_out.string()},
                  {"text_out", text_out.string()},
                  {"roc_out", opt.roc_out}});

  auto preds = load_predictions(opt.pred);
  EvalCases ec = join_predictions(preds, load_label_map(opt.labels));

  stats::MetricsReport rep =
      stats::metrics_report(ec.scores, ec.y_bin, rc.threshold, opt.cohort, rc.alpha);
  std::string text = stats::render_metrics_table({rep});
  nlohmann::json j;
  j["metrics"] = stats::report_to_json(rep);

  if (!opt.subgroups.empty()) {
    CsvTable ct = read_csv(opt.subgroups);
    size_t idc = static_cast<size_t>(ct.require_column("slide_id"));
    std::map<std::string, size_t> row_of;
    for (size_t i = 0; i < ct.rows.size(); ++i) row_of[ct.rows[i][idc]] = i;
    std::vector<ClinicalRecord> clin;
    for (const auto& id : ec.ids) {
      auto it = row_of.find(id);
      require(it != row_of.end(), "no clinical row for slide '", id, "'");
      clin.push_back(parse_clinical_row(ct, it->second, "slide " + id));
    }
    auto rows = stats::subgroup_report(ec.scores, ec.y_bin, clin, rc.threshold, rc.alpha);
    text += "\n" + stats::render_subgroup_table(rows);
    j["subgroups"] = stats::subgroup_to_json(rows);
  }

  // Multi-class predictions additionally get the 3-class confusion matrix.
  if (ec.pred_classes >= 3) {
    stats::Confusion3 c3 = stats::confusion_3class(ec.pred_label, ec.y_class);
    text += "\n" + stats::render_confusion(c3);
    j["confusion"] = stats::confusion_to_json(c3);
  }

  if (!opt.roc_out.empty())
    stats::write_roc_csv(opt.roc_out, stats::roc_auc(ec.scores, ec.y_bin));

  write_text_file(text_out, text);
  write_text_file(json_out, j.dump(2) + "\n");
  std::fputs(text.c_str(), stdout);
  log_info("AUC %.3f [%.3f, %.3f] over %zu slides; reports in %s", rep.auc.auc, rep.auc.lower,
           rep.auc.upper, ec.ids.size(), text_out.parent_path().string().c_str());
  return 0;
}

struct CompareAucOpts {
  std::string pred_a, pred_b, labels, out;
};

inline int cmd_compare_auc(const RunConfig& rc, const CompareAucOpts& opt) {
  usage_require(!opt.pred_a.empty() && !opt.pred_b.empty(),
                "compare-auc needs --pred-a and --pred-b");
  usage_require(!opt.labels.empty(), "compare-auc needs --labels");
  fs::path out = resolve(opt.out, fs::path(rc.workdir) / "reports" / "auc-compare.json");
  write_snapshot(rc, "compare-auc",
                 {{"pred_a", opt.pred_a},
                  {"pred_b", opt.pred_b},
                  {"labels", opt.labels},
                  {"out", out.string()}});

  auto labels = load_label_map(opt.labels);
  EvalCases a = join_predictions(load_predictions(opt.pred_a), labels);
  EvalCases b = join_predictions(load_predictions(opt.pred_b), labels);
  require(a.ids.size() == b.ids.size(),
          "paired comparison needs the same slides in both files");

  // The paired test needs case-for-case alignment, not just equal sets.
  std::map<std::string, double> score_b;
  for (size_t i = 0; i < b.ids.size(); ++i) score_b[b.ids[i]] = b.scores[i];
  std::vector<double> sb;
  for (const auto& id : a.ids) {
    auto it = score_b.find(id);
    require(it != score_b.end(), "slide '", id, "' missing from ", opt.pred_b);
    sb.push_back(it->second);
  }

  stats::DelongResult d = stats::delong_compare(a.scores, sb, a.y_bin);
  nlohmann::json j = {{"auc_a", d.auc_a}, {"auc_b", d.auc_b}, {"z", d.z},
                      {"p_value", d.p_value}, {"degenerate", d.degenerate},
                      {"n", a.ids.size()}};
  write_text_file(out, j.dump(2) + "\n");
  std::printf("AUC %.4f vs %.4f  z=%.3f  p=%.4g%s\n", d.auc_a, d.auc_b, d.z, d.p_value,
              d.degenerate ? "  (degenerate)" : "");
  log_info("comparison written to %s", out.string().c_str());
  return 0;
}

struct HeatmapOpts {
  std::string slide_id, bags, checkpoint, slide_image, out, csv_out;
  int64_t patch_size = 0;  // 0 = read from the first tile
  int64_t downsample = 8;
  double alpha = 0.45;
};

inline int cmd_heatmap(const RunConfig& rc, const HeatmapOpts& opt) {
  usage_require(!opt.slide_id.empty(), "heatmap needs --slide-id");
  usage_require(!opt.bags.empty(), "heatmap needs --bags");
  usage_require(!opt.checkpoint.empty(), "heatmap needs --checkpoint");
  fs::path tiles = resolve(rc.tiles, fs::path(rc.workdir) / "tiles");
  fs::path csv_out = resolve(opt.csv_out,
                             fs::path(rc.workdir) / "heatmaps" / (opt.slide_id + ".csv"));
  write_snapshot(rc, "heatmap",
                 {{"slide_id", opt.slide_id},
                  {"bags", opt.bags},
                  {"checkpoint", opt.checkpoint},
                  {"tiles", tiles.string()},
                  {"slide_image", opt.slide_image},
                  {"out", opt.out},
                  {"csv_out", csv_out.string()},
                  {"downsample", opt.downsample},
                  {"alpha", opt.alpha}});

  MilModel model = MilModel::load(opt.checkpoint);
  std::vector<Bag> slide_bags;
  for (auto& b : load_bags(opt.bags))
    if (b.slide_id == opt.slide_id) slide_bags.push_back(std::move(b));
  require(!slide_bags.empty(), "no bags for slide '", opt.slide_id, "' in ", opt.bags);

  std::vector<std::string> refs = list_patch_refs(tiles / opt.slide_id);
  int64_t patch_size = opt.patch_size;
  if (patch_size == 0) {
    auto [w, h] = read_png_size(tiles / opt.slide_id / (refs[0] + ".png"));
    require(w == h, "non-square tile ", refs[0]);
    patch_size = w;
  }

  std::vector<BagAttention> atts;
  for (const auto& bag : slide_bags) {
    TrainSample s = make_train_sample(bag, tiles, model.embedder());
    BagPrediction bp =
        model.predict_bag(s.instances, s.clinical.empty() ? nullptr : &s.clinical);
    atts.push_back({bag.instance_refs, bp.attention.weights});
  }

  HeatmapLayer layer = build_heatmap(opt.slide_id, refs, patch_size, atts);
  save_heatmap_csv(csv_out, layer);
  if (!opt.out.empty()) {
    usage_require(!opt.slide_image.empty(), "heatmap --out needs --slide-image");
    save_heatmap_png(layer, opt.slide_image, opt.out, opt.downsample, opt.alpha);
    log_info("overlay written to %s", opt.out.c_str());
  }
  log_info("heatmap for %s: %.1f%% of %zu patches sampled; csv %s", opt.slide_id.c_str(),
           100.0 * layer.coverage, refs.size(), csv_out.string().c_str());
  return 0;
}

struct NucleiOpts {
  std::string slide_id, out;
};

inline int cmd_nuclei(const RunConfig& rc, const NucleiOpts& opt) {
  usage_require(!opt.slide_id.empty(), "nuclei needs --slide-id");
  fs::path tiles = resolve(rc.tiles, fs::path(rc.workdir) / "tiles");
  fs::path out = resolve(opt.out,
                         fs::path(rc.workdir) / "morphometry" / (opt.slide_id + ".csv"));
  write_snapshot(rc, "nuclei",
                 {{"slide_id", opt.slide_id}, {"tiles", tiles.string()}, {"out", out.string()}});

  ClassicalSegmenter seg;
  std::vector<PatchFeatures> feats = measure_slide(tiles / opt.slide_id, seg);
  size_t nuclei = 0;
  for (const auto& f : feats) nuclei += f.morpho.nuclei.size();
  save_nucleus_csv(out, opt.slide_id, feats);
  log_info("measured %zu nuclei over %zu patches of %s -> %s", nuclei, feats.size(),
           opt.slide_id.c_str(), out.string().c_str());
  return 0;
}

struct ImportanceOpts {
  std::string labels, cohorts, out_dir;
  int bins = 10;
  int epochs = 300;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  bool raw_features = false;
  bool save_bags = false;
};

inline int cmd_feature_importance(const RunConfig& rc, const ImportanceOpts& opt) {
  usage_require(!opt.labels.empty(), "feature-importance needs --labels");
  fs::path tiles = resolve(rc.tiles, fs::path(rc.workdir) / "tiles");
  fs::path out_dir = resolve(opt.out_dir, fs::path(rc.workdir) / "importance");
  write_snapshot(rc, "feature-importance",
                 {{"labels", opt.labels},
                  {"cohorts", opt.cohorts},
                  {"tiles", tiles.string()},
                  {"out_dir", out_dir.string()},
                  {"bins", opt.bins},
                  {"epochs", opt.epochs},
                  {"lr", opt.lr},
                  {"weight_decay", opt.weight_decay},
                  {"raw_features", opt.raw_features},
                  {"save_bags", opt.save_bags}});

  auto labels = load_label_map(opt.labels);
  ClassicalSegmenter seg;
  std::map<std::string, std::vector<PatchFeatures>> feats;
  for (const auto& [id, lab] : labels) {
    feats[id] = measure_slide(tiles / id, seg);
    log_debug("measured %s: %zu patches", id.c_str(), feats[id].size());
  }

  // Histogram ranges freeze on the training cohort when one is named;
  // otherwise on everything, which is fine for a purely descriptive run.
  std::vector<std::string> range_ids;
  if (!opt.cohorts.empty()) {
    CohortSplit split = load_cohorts(opt.cohorts);
    for (const auto& id : split.train)
      if (labels.count(id)) range_ids.push_back(id);
    require(!range_ids.empty(), "no labelled slides in the train cohort of ", opt.cohorts);
  } else {
    for (const auto& [id, lab] : labels) range_ids.push_back(id);
  }
  std::vector<PatchFeatures> pool;
  for (const auto& id : range_ids)
    pool.insert(pool.end(), feats[id].begin(), feats[id].end());
  FeatureRanges ranges = freeze_feature_ranges(pool);
  fs::create_directories(out_dir);
  write_text_file(out_dir / "ranges.json", ranges.to_json().dump(2) + "\n");

  std::vector<NucleusFeatureBag> bags;
  for (const auto& [id, lab] : labels) {
    bags.push_back(build_feature_bags(id, lab > 0 ? 1 : 0, feats[id], ranges, opt.bins));
    if (opt.save_bags) save_feature_bag(out_dir / "bags" / (id + ".bin"), bags.back());
  }

  ImportanceConfig ic;
  ic.epochs = opt.epochs;
  ic.lr = opt.lr;
  ic.weight_decay = opt.weight_decay;
  ic.seed = rc.seed;
  ic.raw_feature_mode = opt.raw_features;
  FeatureImportance imp = rank_feature_importance(bags, ic);

  std::string report = render_importance_report(imp);
  write_text_file(out_dir / "report.txt", report);
  std::fputs(report.c_str(), stdout);

  nlohmann::json jf = nlohmann::json::array();
  for (int f = 0; f < kFeatureCount; ++f) {
    size_t i = static_cast<size_t>(f);
    jf.push_back({{"feature", feature_names()[i]},
                  {"p_value", imp.p_values[i]},
                  {"mean_attention_label0", imp.mean_attention_neg[i]},
                  {"mean_attention_label1", imp.mean_attention_pos[i]}});
  }
  nlohmann::json j = {{"features", jf},
                      {"top_feature", feature_names()[static_cast<size_t>(top_feature(imp))]},
                      {"raw_feature_mode", imp.raw_feature_mode},
                      {"final_train_loss", imp.final_train_loss},
                      {"slides", bags.size()}};
  write_text_file(out_dir / "importance.json", j.dump(2) + "\n");
  log_info("importance report and json in %s", out_dir.string().c_str());
  return 0;
}

struct SynthOpts {
  int n = 20;
  int64_t slide_size = 2048;
  double density = 1.0;
  double density_gap = 2.0;
  double aspect = 1.3;
  double elongation_gap = 0.0;
  double positive_fraction = 0.5;
  std::string out;
};

inline int cmd_synth(const RunConfig& rc, const SynthOpts& opt) {
  fs::path out = resolve(opt.out, fs::path(rc.workdir) / "synth");
  write_snapshot(rc, "synth",
                 {{"n", opt.n},
                  {"slide_size", opt.slide_size},
                  {"density", opt.density},
                  {"density_gap", opt.density_gap},
                  {"aspect", opt.aspect},
                  {"elongation_gap", opt.elongation_gap},
                  {"positive_fraction", opt.positive_fraction},
                  {"out", out.string()}});

  SynthConfig sc;
  sc.n_slides = opt.n;
  sc.slide_size = opt.slide_size;
  sc.seed = rc.seed;
  sc.blob_density = opt.density;
  sc.density_gap = opt.density_gap;
  sc.blob_aspect = opt.aspect;
  sc.elongation_gap = opt.elongation_gap;
  sc.positive_fraction = opt.positive_fraction;
  SynthResult res = generate_synthetic_corpus(out, sc);
  log_info("synthetic corpus: %zu slides, manifest %s", res.slides.size(),
           res.manifest_path.string().c_str());
  return 0;
}

}  // namespace detail

inline int run(int argc, char** argv) {
  detail::RunConfig rc;

  // The config file must load before flag binding so flags override it.
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc)
      config_path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0)
      config_path = a.substr(9);
  }

  try {
    if (!config_path.empty()) {
      require(fs::exists(config_path), "missing config file: ", config_path);
      nlohmann::json j = nlohmann::json::parse(read_text_file(config_path), nullptr, false);
      require(!j.is_discarded(), "config file is not valid JSON: ", config_path);
      rc.apply_json(j);
    }

    CLI::App app{"attention-based multiple-instance pipeline for axillary lymph node "
                 "status prediction from whole-slide images"};
    app.name("amilpath");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    bool verbose = false;
    app.add_option("--config", config_path, "JSON run config; flags override its values");
    app.add_option("--workdir", rc.workdir,
                   "artifact directory (default: $AMILPATH_WORKDIR or ./amilpath-work)");
    app.add_option("--seed", rc.seed, "master seed; feeds split, bagging, init, training");
    app.add_flag("--verbose", verbose, "enable debug logging");

    detail::SynthOpts synth_opt;
    auto* c_synth = app.add_subcommand("synth", "generate a labelled synthetic corpus");
    c_synth->fallthrough();
    c_synth->add_option("--n", synth_opt.n, "slide count")->capture_default_str();
    c_synth->add_option("--slide-size", synth_opt.slide_size, "slide edge in px")
        ->capture_default_str();
    c_synth->add_option("--density", synth_opt.density, "blobs per 256x256 of tumor")
        ->capture_default_str();
    c_synth->add_option("--density-gap", synth_opt.density_gap,
                        "extra density on positive slides")
        ->capture_default_str();
    c_synth->add_option("--aspect", synth_opt.aspect, "blob axis ratio")->capture_default_str();
    c_synth->add_option("--elongation-gap", synth_opt.elongation_gap,
                        "extra aspect on positive slides")
        ->capture_default_str();
    c_synth->add_option("--positive-fraction", synth_opt.positive_fraction,
                        "fraction of positive slides")
        ->capture_default_str();
    c_synth->add_option("--out", synth_opt.out, "corpus directory (default <workdir>/synth)");

    detail::TileOpts tile_opt;
    auto* c_tile = app.add_subcommand("tile", "cut annotated tumor regions into patches");
    c_tile->fallthrough();
    c_tile->add_option("--manifest", rc.manifest, "slide manifest CSV");
    c_tile->add_option("--annotations", rc.annotations, "annotation JSON directory");
    c_tile->add_option("--clinical", rc.clinical, "clinical CSV");
    c_tile->add_option("--patch-size", tile_opt.patch_size, "patch edge in px")
        ->capture_default_str();
    c_tile->add_option("--out", tile_opt.out, "tile directory (default <workdir>/tiles)");

    detail::BuildBagsOpts bags_opt;
    auto* c_bags = app.add_subcommand("build-bags",
                                      "split cohorts and sample instance bags per slide");
    c_bags->fallthrough();
    c_bags->add_option("--manifest", rc.manifest, "slide manifest CSV");
    c_bags->add_option("--annotations", rc.annotations, "annotation JSON directory");
    c_bags->add_option("--clinical", rc.clinical, "clinical CSV");
    c_bags->add_option("--tiles", rc.tiles, "tile directory (default <workdir>/tiles)");
    c_bags->add_option("--instances-per-bag", rc.instances_per_bag, "patches per bag")
        ->capture_default_str();
    c_bags->add_option("--bags-per-slide", rc.bags_per_slide, "bags per slide, 0 = auto")
        ->capture_default_str();
    c_bags->add_flag("--attach-clinical", rc.attach_clinical,
                     "encode clinical vectors into the bags");
    c_bags->add_option("--ratio-test", rc.ratio_test, "test fraction of all slides")
        ->capture_default_str();
    c_bags->add_option("--ratio-val", rc.ratio_val, "val fraction of the non-test remainder")
        ->capture_default_str();
    c_bags->add_flag("--no-stratify{false}", rc.stratify, "disable label-stratified splitting");
    c_bags->add_option("--classes", rc.classes, "2 = node +/-, 3 = N0 / N+(1-2) / N+(>=3)")
        ->capture_default_str();
    c_bags->add_option("--out", bags_opt.out, "bag directory (default <workdir>/bags)");

    detail::TrainOpts train_opt;
    auto* c_train = app.add_subcommand("train", "train the attention-MIL classifier");
    c_train->fallthrough();
    c_train->add_option("--train-bags", train_opt.train_bags,
                        "training bags (default <workdir>/bags/train.jsonl)");
    c_train->add_option("--val-bags", train_opt.val_bags,
                        "validation bags (default <workdir>/bags/val.jsonl)");
    c_train->add_option("--tiles", rc.tiles, "tile directory (default <workdir>/tiles)");
    c_train->add_option("--embedder", rc.embedder, "toy | alexnet | vgg16_bn | resnet50 | "
                                                   "densenet121 | inception_v3")
        ->capture_default_str();
    c_train->add_option("--attention-hidden", rc.attention_hidden, "attention hidden width")
        ->capture_default_str();
    c_train->add_option("--classes", rc.classes, "output classes")->capture_default_str();
    c_train->add_option("--clinical-repeat", rc.clinical_repeat,
                        "replication factor for the clinical vector")
        ->capture_default_str();
    c_train->add_option("--epochs", rc.train.epochs, "training epochs")->capture_default_str();
    c_train->add_option("--lr-max", rc.train.lr_max, "peak learning rate")
        ->capture_default_str();
    c_train->add_option("--lr-min", rc.train.lr_min, "floor learning rate")
        ->capture_default_str();
    c_train->add_option("--weight-decay", rc.train.weight_decay, "AdamW weight decay")
        ->capture_default_str();
    c_train->add_option("--t0", rc.train.t_0, "epochs in the first cosine cycle")
        ->capture_default_str();
    c_train->add_option("--t-mult", rc.train.t_mult, "cycle growth factor")
        ->capture_default_str();
    c_train->add_option("--batch-bags", rc.train.batch_bags, "bags per optimizer step")
        ->capture_default_str();
    c_train->add_flag("--class-weights", rc.train.class_weights,
                      "inverse-frequency loss weights");
    c_train->add_option("--init-checkpoint", train_opt.init_checkpoint,
                        "warm-start checkpoint");
    c_train->add_option("--out", train_opt.out,
                        "checkpoint path (default <workdir>/checkpoints/model.bin)");
    c_train->add_option("--history", train_opt.history,
                        "history CSV (default <workdir>/checkpoints/history.csv)");

    detail::PredictOpts pred_opt;
    auto* c_pred = app.add_subcommand("predict", "score bags and aggregate per slide");
    c_pred->fallthrough();
    c_pred->add_option("--checkpoint", pred_opt.checkpoint, "model checkpoint");
    c_pred->add_option("--bags", pred_opt.bags, "bags JSONL to score");
    c_pred->add_option("--tiles", rc.tiles, "tile directory (default <workdir>/tiles)");
    c_pred->add_option("--aggregation", rc.aggregation, "mean | max | median")
        ->capture_default_str();
    c_pred->add_option("--threshold", rc.threshold, "positive-call threshold")
        ->capture_default_str();
    c_pred->add_flag("--logit-merge", rc.logit_merge, "aggregate bag logits, not probabilities");
    c_pred->add_option("--out", pred_opt.out,
                       "predictions CSV (default <workdir>/predictions.csv)");

    detail::EvaluateOpts eval_opt;
    auto* c_eval = app.add_subcommand("evaluate", "metrics report from predictions");
    c_eval->fallthrough();
    c_eval->add_option("--pred", eval_opt.pred, "predictions CSV");
    c_eval->add_option("--labels", eval_opt.labels, "slide_id,label truth CSV");
    c_eval->add_option("--subgroups", eval_opt.subgroups,
                       "clinical CSV for stratified reporting");
    c_eval->add_option("--cohort", eval_opt.cohort, "cohort name in the report")
        ->capture_default_str();
    c_eval->add_option("--threshold", rc.threshold, "positive-call threshold")
        ->capture_default_str();
    c_eval->add_option("--alpha", rc.alpha, "1 - confidence level")->capture_default_str();
    c_eval->add_option("--json-out", eval_opt.json_out,
                       "report JSON (default <workdir>/reports/metrics.json)");
    c_eval->add_option("--text-out", eval_opt.text_out,
                       "report table (default <workdir>/reports/metrics.txt)");
    c_eval->add_option("--roc-out", eval_opt.roc_out, "ROC points CSV");

    detail::CompareAucOpts cmp_opt;
    auto* c_cmp = app.add_subcommand("compare-auc", "paired AUC test between two models");
    c_cmp->fallthrough();
    c_cmp->add_option("--pred-a", cmp_opt.pred_a, "predictions CSV, model A");
    c_cmp->add_option("--pred-b", cmp_opt.pred_b, "predictions CSV, model B");
    c_cmp->add_option("--labels", cmp_opt.labels, "slide_id,label truth CSV");
    c_cmp->add_option("--out", cmp_opt.out,
                      "result JSON (default <workdir>/reports/auc-compare.json)");

    detail::HeatmapOpts heat_opt;
    auto* c_heat = app.add_subcommand("heatmap", "attention overlay for one slide");
    c_heat->fallthrough();
    c_heat->add_option("--slide-id", heat_opt.slide_id, "slide to render");
    c_heat->add_option("--bags", heat_opt.bags, "bags JSONL covering the slide");
    c_heat->add_option("--checkpoint", heat_opt.checkpoint, "model checkpoint");
    c_heat->add_option("--tiles", rc.tiles, "tile directory (default <workdir>/tiles)");
    c_heat->add_option("--slide-image", heat_opt.slide_image, "slide PNG to blend over");
    c_heat->add_option("--patch-size", heat_opt.patch_size,
                       "patch edge in px, 0 = read from a tile")
        ->capture_default_str();
    c_heat->add_option("--downsample", heat_opt.downsample, "overlay downsample factor")
        ->capture_default_str();
    c_heat->add_option("--alpha", heat_opt.alpha, "overlay opacity")->capture_default_str();
    c_heat->add_option("--out", heat_opt.out, "overlay PNG path");
    c_heat->add_option("--csv-out", heat_opt.csv_out,
                       "heat table CSV (default <workdir>/heatmaps/<slide>.csv)");

    detail::NucleiOpts nuc_opt;
    auto* c_nuc = app.add_subcommand("nuclei", "segment and measure nuclei of one slide");
    c_nuc->fallthrough();
    c_nuc->add_option("--slide-id", nuc_opt.slide_id, "slide to measure");
    c_nuc->add_option("--tiles", rc.tiles, "tile directory (default <workdir>/tiles)");
    c_nuc->add_option("--out", nuc_opt.out,
                      "nucleus CSV (default <workdir>/morphometry/<slide>.csv)");

    detail::ImportanceOpts imp_opt;
    auto* c_imp = app.add_subcommand("feature-importance",
                                     "rank morphometric features by attention");
    c_imp->fallthrough();
    c_imp->add_option("--labels", imp_opt.labels, "slide_id,label truth CSV");
    c_imp->add_option("--cohorts", imp_opt.cohorts,
                      "cohort CSV; histogram ranges freeze on its train split");
    c_imp->add_option("--tiles", rc.tiles, "tile directory (default <workdir>/tiles)");
    c_imp->add_option("--bins", imp_opt.bins, "histogram bins per feature")
        ->capture_default_str();
    c_imp->add_option("--epochs", imp_opt.epochs, "training epochs")->capture_default_str();
    c_imp->add_option("--lr", imp_opt.lr, "learning rate")->capture_default_str();
    c_imp->add_option("--weight-decay", imp_opt.weight_decay, "AdamW weight decay")
        ->capture_default_str();
    c_imp->add_flag("--raw-features", imp_opt.raw_features,
                    "p-values from raw feature summaries instead of attention");
    c_imp->add_flag("--save-bags", imp_opt.save_bags, "archive the per-slide feature bags");
    c_imp->add_option("--out-dir", imp_opt.out_dir,
                      "output directory (default <workdir>/importance)");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::fprintf(stderr, "amilpath: %s\n\n%s", e.what(), app.help().c_str());
      return 2;
    }

    if (verbose) log_threshold() = LogLevel::Debug;
    if (rc.workdir.empty()) {
      const char* env = std::getenv("AMILPATH_WORKDIR");
      rc.workdir = env && *env ? env : "amilpath-work";
    }

    detail::WorkdirLock lock{fs::path(rc.workdir)};
    if (c_synth->parsed()) return detail::cmd_synth(rc, synth_opt);
    if (c_tile->parsed()) return detail::cmd_tile(rc, tile_opt);
    if (c_bags->parsed()) return detail::cmd_build_bags(rc, bags_opt);
    if (c_train->parsed()) return detail::cmd_train(rc, train_opt);
    if (c_pred->parsed()) return detail::cmd_predict(rc, pred_opt);
    if (c_eval->parsed()) return detail::cmd_evaluate(rc, eval_opt);
    if (c_cmp->parsed()) return detail::cmd_compare_auc(rc, cmp_opt);
    if (c_heat->parsed()) return detail::cmd_heatmap(rc, heat_opt);
    if (c_nuc->parsed()) return detail::cmd_nuclei(rc, nuc_opt);
    if (c_imp->parsed()) return detail::cmd_feature_importance(rc, imp_opt);
    fail("no subcommand dispatched");
  } catch (const UsageError& e) {
    std::fprintf(stderr, "amilpath: %s\nrun 'amilpath --help' for usage\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "amilpath: %s\n", e.what());
    return 1;
  }
}

}  // namespace amilpath::cli
