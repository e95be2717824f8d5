#pragma once
// Optimization loop: Adam with L2-coupled weight decay, a cosine-annealing
// warm-restart learning-rate schedule stepped per epoch, deterministic
// shuffling, and best-checkpoint selection by validation AUC with an
// earlier-epoch tie-break.

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "amilpath/common.hpp"
#include "amilpath/mil.hpp"
#include "amilpath/rng.hpp"
#include "amilpath/stats.hpp"

namespace amilpath {

struct TrainConfig {
  double lr_max = 1e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-3;
  int t_0 = 10;   // epochs in the first cosine cycle
  int t_mult = 2; // cycle-length multiplier after each restart
  int epochs = 30;
  int batch_bags = 1;
  uint64_t seed = 0;
  bool class_weights = false;  // inverse-frequency loss weights

  void validate() const {
    require(lr_min <= lr_max, "lr_min ", lr_min, " exceeds lr_max ", lr_max);
    require(lr_max > 0.0, "lr_max must be positive");
    require(weight_decay >= 0.0, "negative weight_decay");
    require(t_0 >= 1, "t_0 must be >= 1");
    require(t_mult >= 1, "t_mult must be >= 1");
    require(epochs >= 0, "negative epoch count");
    require(batch_bags >= 1, "batch_bags must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"lr_max", lr_max},       {"lr_min", lr_min},
            {"weight_decay", weight_decay}, {"t_0", t_0},
            {"t_mult", t_mult},       {"epochs", epochs},
            {"batch_bags", batch_bags}, {"seed", seed},
            {"class_weights", class_weights}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    try {
      cfg.lr_max = j.value("lr_max", cfg.lr_max);
      cfg.lr_min = j.value("lr_min", cfg.lr_min);
      cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
      cfg.t_0 = j.value("t_0", cfg.t_0);
      cfg.t_mult = j.value("t_mult", cfg.t_mult);
      cfg.epochs = j.value("epochs", cfg.epochs);
      cfg.batch_bags = j.value("batch_bags", cfg.batch_bags);
      cfg.seed = j.value("seed", cfg.seed);
      cfg.class_weights = j.value("class_weights", cfg.class_weights);
    } catch (const nlohmann::json::exception& e) {
      fail("malformed training config: ", e.what());
    }
    cfg.validate();
    return cfg;
  }
};

// eta = eta_min + 1/2 (eta_max - eta_min)(1 + cos(pi T_cur / T_i)).
inline double lr_at(double t_cur, double t_i, double lr_min, double lr_max) {
  require(t_i > 0.0, "cosine cycle length must be positive");
  require(t_cur >= 0.0 && t_cur <= t_i, "cycle position ", t_cur, " outside [0, ", t_i, "]");
  require(lr_min <= lr_max, "lr_min exceeds lr_max");
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * t_cur / t_i));
}

// Warm restarts: the position resets to 0 when it reaches the cycle
// length, and the cycle length multiplies by t_mult.
class WarmRestartSchedule {
 public:
  WarmRestartSchedule(int t_0, int t_mult, double lr_min, double lr_max)
      : t_i_(t_0), t_mult_(t_mult), lr_min_(lr_min), lr_max_(lr_max) {
    require(t_0 >= 1, "t_0 must be >= 1");
    require(t_mult >= 1, "t_mult must be >= 1");
    require(lr_min <= lr_max, "lr_min exceeds lr_max");
  }

  double lr() const {
    return lr_at(static_cast<double>(t_cur_), static_cast<double>(t_i_), lr_min_, lr_max_);
  }

  void advance() {
    if (++t_cur_ >= t_i_) {
      t_cur_ = 0;
      t_i_ *= t_mult_;
    }
  }

  int t_cur() const { return t_cur_; }
  int t_i() const { return t_i_; }

 private:
  int t_cur_ = 0;
  int t_i_;
  int t_mult_;
  double lr_min_, lr_max_;
};

// Adam with the weight decay folded into the gradient (L2-coupled, the
// convention of the optimizer the paper names).
class Adam {
 public:
  explicit Adam(std::vector<std::pair<std::string, nn::Var>> params, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    require(!params_.empty(), "optimizer got no trainable parameters");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      size_t n = params_[i].second.value().data.size();
      m_[i].assign(n, 0.0);
      v_[i].assign(n, 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto& [name, var] : params_) var.zero_grad();
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& var = params_[i].second;
      std::vector<double>& w = var.value_mut().data;
      const std::vector<double>& g = var.grad().data;
      for (size_t k = 0; k < w.size(); ++k) {
        double gk = g[k] + wd_ * w[k];
        m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * gk;
        v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * gk * gk;
        double mhat = m_[i][k] / bc1;
        double vhat = v_[i][k] / bc2;
        w[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  std::vector<std::pair<std::string, nn::Var>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// One training example: a bag's stacked instance tensor plus optional
// encoded clinical vector.
struct TrainSample {
  std::string slide_id;
  nn::Tensor instances;          // (N,3,s,s), already preprocessed
  std::vector<double> clinical;  // empty in image-only mode
  int label = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;  // -1 when no epochs ran
  double best_val_auc = 0.0;
};

namespace detail {

inline const std::vector<double>* clinical_ptr(const TrainSample& s) {
  return s.clinical.empty() ? nullptr : &s.clinical;
}

// Binary task: AUC of the positive-class probability. More classes:
// mean one-vs-rest AUC over the classes present in the cohort.
inline double validation_auc(MilModel& model, const std::vector<TrainSample>& val) {
  int classes = model.config().classes;
  std::vector<std::vector<double>> probs(val.size());
  std::vector<int> labels(val.size());
  for (size_t i = 0; i < val.size(); ++i) {
    probs[i] = model.predict_bag(val[i].instances, clinical_ptr(val[i])).probs;
    labels[i] = val[i].label;
  }
  if (classes == 2) {
    std::vector<double> s(val.size());
    for (size_t i = 0; i < val.size(); ++i) s[i] = probs[i][1];
    return stats::roc_auc(s, labels).auc;
  }
  double sum = 0.0;
  int used = 0;
  for (int k = 0; k < classes; ++k) {
    std::vector<double> s(val.size());
    std::vector<int> rest(val.size());
    size_t pos = 0;
    for (size_t i = 0; i < val.size(); ++i) {
      s[i] = probs[i][static_cast<size_t>(k)];
      rest[i] = labels[i] == k ? 1 : 0;
      pos += rest[i];
    }
    if (pos == 0 || pos == val.size()) continue;
    sum += stats::roc_auc(s, rest).auc;
    ++used;
  }
  require(used > 0, "validation AUC undefined: no class is separable from the rest");
  return sum / used;
}

// Deep copies of the trainable parameter values (and, when the backbone
// trains, its batch-norm running statistics).
struct ModelSnapshot {
  std::vector<std::vector<double>> params;
  std::map<std::string, std::vector<double>> buffers;
};

inline ModelSnapshot take_snapshot(MilModel& model,
                                   const std::vector<std::pair<std::string, nn::Var>>& params) {
  ModelSnapshot s;
  for (const auto& [name, var] : params) s.params.push_back(var.value().data);
  if (model.config().finetune_backbone)
    for (const auto& [name, t] : model.embedder().store().buffers()) s.buffers[name] = t.data;
  return s;
}

inline void restore_snapshot(MilModel& model,
                             std::vector<std::pair<std::string, nn::Var>>& params,
                             const ModelSnapshot& s) {
  for (size_t i = 0; i < params.size(); ++i) params[i].second.value_mut().data = s.params[i];
  for (auto& [name, data] : s.buffers) model.embedder().store().buffers().at(name).data = data;
}

}  // namespace detail

// Trains in place; on return the model carries the weights of the epoch
// with the highest validation AUC (earliest such epoch on ties).
inline TrainResult train(MilModel& model, const std::vector<TrainSample>& train_bags,
                         const std::vector<TrainSample>& val_bags, const TrainConfig& cfg) {
  cfg.validate();
  require(!train_bags.empty(), "empty training cohort");
  require(!val_bags.empty(), "empty validation cohort");
  int classes = model.config().classes;
  std::set<std::string> train_slides, val_slides;
  for (const auto& s : train_bags) {
    require(s.label >= 0 && s.label < classes, "train label out of range: ", s.label);
    train_slides.insert(s.slide_id);
  }
  std::set<int> val_labels;
  for (const auto& s : val_bags) {
    require(s.label >= 0 && s.label < classes, "val label out of range: ", s.label);
    val_slides.insert(s.slide_id);
    val_labels.insert(s.label);
  }
  for (const auto& id : val_slides)
    require(!train_slides.count(id), "slide ", id, " appears in both train and val cohorts");
  require(val_labels.size() >= 2,
          "validation cohort has a single class; its AUC is undefined");

  nn::use_single_blas_thread();
  auto params = model.trainable_params();
  Adam opt(params, cfg.lr_max, cfg.weight_decay);
  WarmRestartSchedule sched(cfg.t_0, cfg.t_mult, cfg.lr_min, cfg.lr_max);
  Rng rng(cfg.seed);
  bool bn_training = model.config().finetune_backbone;

  std::vector<double> class_weight(static_cast<size_t>(classes), 1.0);
  if (cfg.class_weights) {
    std::vector<size_t> count(static_cast<size_t>(classes), 0);
    for (const auto& s : train_bags) count[static_cast<size_t>(s.label)]++;
    // Inverse frequency, normalized so the present classes average to 1.
    size_t present = 0;
    double sum = 0.0;
    for (size_t k = 0; k < count.size(); ++k)
      if (count[k]) {
        class_weight[k] = static_cast<double>(train_bags.size()) /
                          static_cast<double>(count[k]);
        sum += class_weight[k];
        ++present;
      }
    for (size_t k = 0; k < count.size(); ++k)
      if (count[k]) class_weight[k] *= static_cast<double>(present) / sum;
  }

  TrainResult res;
  detail::ModelSnapshot best_state;
  double best = -std::numeric_limits<double>::infinity();

  std::vector<size_t> order(train_bags.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = sched.lr();
    opt.set_lr(lr);
    rng.child(static_cast<uint64_t>(epoch) + 1).shuffle(order);

    double loss_sum = 0.0;
    size_t done = 0;
    while (done < order.size()) {
      size_t batch = std::min(static_cast<size_t>(cfg.batch_bags), order.size() - done);
      opt.zero_grad();
      std::vector<nn::Var> losses;
      losses.reserve(batch);
      for (size_t b = 0; b < batch; ++b) {
        const TrainSample& s = train_bags[order[done + b]];
        nn::Var x = nn::Var::input(s.instances);
        auto fwd = model.forward_bag(x, detail::clinical_ptr(s), bn_training);
        nn::Var ce = nn::cross_entropy_from_probs(fwd.probs, {s.label});
        if (cfg.class_weights)
          ce = nn::scale(ce, class_weight[static_cast<size_t>(s.label)]);
        losses.push_back(ce);
        loss_sum += ce.value().data[0];
      }
      nn::Var batch_loss = nn::scale(nn::add_n(losses), 1.0 / static_cast<double>(batch));
      nn::backward(batch_loss);
      opt.step();
      done += batch;
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(train_bags.size());
    st.val_auc = detail::validation_auc(model, val_bags);
    st.lr = lr;
    res.history.push_back(st);
    if (st.val_auc > best) {
      best = st.val_auc;
      res.best_epoch = epoch;
      res.best_val_auc = st.val_auc;
      best_state = detail::take_snapshot(model, params);
    }
    sched.advance();
  }

  if (res.best_epoch >= 0) detail::restore_snapshot(model, params, best_state);
  return res;
}

inline void save_history(const fs::path& path, const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,val_auc,lr\n";
  char buf[160];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                  e.val_auc, e.lr);
    out += buf;
  }
  write_text_file(path, out);
}

}  // namespace amilpath
