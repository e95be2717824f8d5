#pragma once
// Attention-based MIL head: instance embedding, gated-free two-layer
// attention pooling, optional clinical fusion, linear classifier, loss.
//
// Image-only mode and clinical-fusion mode differ only in the classifier
// input: with a clinical vector of width C present it is
// concat(pooled, clinical repeated `clinical_repeat` times), width D + r*C.

#include <memory>
#include <string>
#include <vector>

#include "amilpath/nn/embedders.hpp"
#include "amilpath/tensor_archive.hpp"
#include "nlohmann/json.hpp"

namespace amilpath {

struct AttentionOutput {
  std::vector<double> weights;  // length N, non-negative, sums to 1
  std::vector<double> pooled;   // length D, = sum_k weights_k * h_k
};

struct BagPrediction {
  std::vector<double> probs;  // class probabilities, sum to 1
  AttentionOutput attention;
};

struct MilConfig {
  std::string embedder = "toy";
  int attention_hidden = 128;  // H
  int classes = 2;
  int clinical_width = 0;  // C; 0 = image-only mode
  int clinical_repeat = 10;
  bool pretrained = false;
  bool finetune_backbone = true;
  uint64_t init_seed = 0;

  nlohmann::json to_json() const {
    return {{"embedder", embedder},
            {"attention_hidden", attention_hidden},
            {"classes", classes},
            {"clinical_width", clinical_width},
            {"clinical_repeat", clinical_repeat},
            {"pretrained", pretrained},
            {"finetune_backbone", finetune_backbone},
            {"init_seed", init_seed}};
  }

  static MilConfig from_json(const nlohmann::json& j) {
    MilConfig cfg;
    try {
      cfg.embedder = j.at("embedder").get<std::string>();
      cfg.attention_hidden = j.at("attention_hidden").get<int>();
      cfg.classes = j.at("classes").get<int>();
      cfg.clinical_width = j.at("clinical_width").get<int>();
      cfg.clinical_repeat = j.at("clinical_repeat").get<int>();
      cfg.pretrained = j.value("pretrained", false);
      cfg.finetune_backbone = j.value("finetune_backbone", true);
      cfg.init_seed = j.value("init_seed", uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      fail("malformed model config: ", e.what());
    }
    return cfg;
  }
};

// Standalone scalar form of the loss (the batched Var form lives in nn::).
inline double cross_entropy(const std::vector<double>& probs, int label) {
  require(label >= 0 && label < static_cast<int>(probs.size()), "label out of range: ", label);
  double sum = 0.0;
  for (double p : probs) {
    require(p >= -1e-9, "negative probability");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-6, "probabilities sum to ", sum, ", not 1");
  double pl = probs[static_cast<size_t>(label)];
  if (pl < 1e-12) {
    log_warn("cross_entropy: probability %.3e clamped to 1e-12", pl);
    pl = 1e-12;
  }
  return -std::log(pl);
}

class MilModel {
 public:
  explicit MilModel(MilConfig cfg)
      : cfg_(std::move(cfg)),
        embedder_(cfg_.embedder, cfg_.init_seed ^ 0x9d1c03a1f7b2e5d4ULL, cfg_.pretrained),
        head_(cfg_.init_seed ^ 0x51ce62b7a09c4f38ULL) {
    require(cfg_.attention_hidden >= 1, "attention_hidden must be >= 1");
    require(cfg_.classes >= 2, "classes must be >= 2");
    require(cfg_.clinical_width >= 0, "clinical_width must be >= 0");
    require(cfg_.clinical_repeat >= 1, "clinical_repeat must be >= 1");
    embedder_.store().set_trainable(cfg_.finetune_backbone);
    // Head parameters exist from construction on, so optimizers and
    // checkpoints see them without a warmup forward pass. Creation order
    // matches the forward pass, keeping the init draws identical.
    auto ensure_dense = [this](const std::string& name, int in_dim, int out_dim) {
      head_.uniform_param(name + ".weight", {out_dim, in_dim}, in_dim);
      head_.uniform_param(name + ".bias", {out_dim}, in_dim);
    };
    ensure_dense("attention.0", feature_dim(), cfg_.attention_hidden);
    ensure_dense("attention.2", cfg_.attention_hidden, 1);
    ensure_dense("classifier", classifier_input_width(), cfg_.classes);
  }

  const MilConfig& config() const { return cfg_; }
  nn::InstanceEmbedder& embedder() { return embedder_; }
  int feature_dim() const { return embedder_.feature_channels(); }
  int classifier_input_width() const {
    return feature_dim() +
           (cfg_.clinical_width > 0 ? cfg_.clinical_repeat * cfg_.clinical_width : 0);
  }

  struct AttnVars {
    nn::Var weights;  // (N,1) softmax over instances
    nn::Var pooled;   // (1,D)
  };

  // Two-layer scoring network (Linear -> tanh -> Linear), softmax over the
  // bag's N instances, weighted sum of the original feature rows.
  AttnVars attention_pool(const nn::Var& features) {
    require(features.value().ndim() == 2, "attention_pool expects (N,D) features");
    require(features.value().dim(0) >= 1, "attention_pool needs N >= 1");
    require(features.value().dim(1) == feature_dim(), "feature width ", features.value().dim(1),
            " != embedder width ", feature_dim());
    nn::Var hidden = nn::tanh_act(nn::dense_layer(head_, "attention.0", features,
                                                  cfg_.attention_hidden));
    nn::Var scores = nn::dense_layer(head_, "attention.2", hidden, 1);
    nn::Var weights = nn::softmax(scores, 0);
    nn::Var pooled = nn::matmul(weights, features, true, false);
    return {weights, pooled};
  }

  // pooled (1,D) [+ clinical] -> class probabilities (1,classes).
  nn::Var fuse_and_classify(const nn::Var& pooled, const std::vector<double>* clinical) {
    nn::Var z = pooled;
    if (cfg_.clinical_width > 0) {
      require(clinical != nullptr, "model fuses clinical data but none was provided");
      require(static_cast<int>(clinical->size()) == cfg_.clinical_width, "clinical width ",
              clinical->size(), " != configured ", cfg_.clinical_width,
              " (encoder drift between training and inference)");
      nn::Var clin = nn::Var::input(nn::Tensor({1, cfg_.clinical_width}, *clinical));
      z = nn::concat_cols(pooled, nn::repeat_cols(clin, cfg_.clinical_repeat));
    } else {
      require(clinical == nullptr || clinical->empty(),
              "clinical vector supplied to an image-only model");
    }
    nn::Var logits = nn::dense_layer(head_, "classifier", z, cfg_.classes);
    return nn::softmax(logits, 1);
  }

  struct BagForward {
    nn::Var probs;    // (1,classes)
    nn::Var weights;  // (N,1)
  };

  // Full differentiable pipeline from a (N,D) feature matrix.
  BagForward forward_features(const nn::Var& features, const std::vector<double>* clinical) {
    AttnVars attn = attention_pool(features);
    return {fuse_and_classify(attn.pooled, clinical), attn.weights};
  }

  // Full differentiable pipeline from raw instances (N,3,s,s).
  BagForward forward_bag(const nn::Var& instances, const std::vector<double>* clinical,
                         bool training) {
    return forward_features(embedder_.embed(instances, training), clinical);
  }

  // Inference-facing wrapper returning plain vectors.
  BagPrediction predict_bag(const nn::Tensor& instances, const std::vector<double>* clinical) {
    nn::Var x = nn::Var::input(instances);
    nn::Var features = embedder_.embed(x, false);
    AttnVars attn = attention_pool(features);
    nn::Var probs = fuse_and_classify(attn.pooled, clinical);
    BagPrediction out;
    out.probs = probs.value().data;
    out.attention.weights = attn.weights.value().data;
    out.attention.pooled = attn.pooled.value().data;
    return out;
  }

  // Trainable parameters in deterministic (name-sorted) order; the frozen
  // backbone's parameters are excluded automatically.
  std::vector<std::pair<std::string, nn::Var>> trainable_params() {
    std::vector<std::pair<std::string, nn::Var>> out;
    for (auto& [name, var] : head_.params())
      if (var.requires_grad()) out.push_back({"head." + name, var});
    for (auto& [name, var] : embedder_.store().params())
      if (var.requires_grad()) out.push_back({"embedder." + name, var});
    return out;
  }

  nn::ParamStore& head() { return head_; }

  // ---- checkpointing: tensor archive + JSON sidecar (version mandatory) ----

  static fs::path sidecar_path(const fs::path& archive) {
    fs::path p = archive;
    p.replace_extension(".json");
    return p;
  }

  void save(const fs::path& archive_path) const {
    std::map<std::string, nn::Tensor> tensors;
    for (const auto& [name, var] : head_.params()) tensors["head." + name] = var.value();
    for (const auto& [name, var] : embedder_.store().params())
      tensors["embedder." + name] = var.value();
    for (const auto& [name, t] : embedder_.store().buffers()) tensors["embedder." + name] = t;
    for (const auto& [name, t] : head_.buffers()) tensors["head." + name] = t;
    save_tensors(archive_path, tensors);
    nlohmann::json sidecar{{"version", 1},
                           {"format", "amilpath-checkpoint"},
                           {"model", cfg_.to_json()},
                           {"feature_dim", feature_dim()},
                           {"classifier_input_width", classifier_input_width()}};
    write_text_file(sidecar_path(archive_path), sidecar.dump(2) + "\n");
  }

  static MilModel load(const fs::path& archive_path) {
    fs::path side = sidecar_path(archive_path);
    require(fs::exists(side), "checkpoint sidecar missing: ", side.string());
    nlohmann::json sidecar = nlohmann::json::parse(read_text_file(side), nullptr, false);
    require(!sidecar.is_discarded(), "checkpoint sidecar is not valid JSON: ", side.string());
    require(sidecar.contains("version"), "checkpoint sidecar lacks mandatory version field: ",
            side.string());
    int version = sidecar.at("version").get<int>();
    require(version == 1, "unsupported checkpoint version ", version);
    MilModel model(MilConfig::from_json(sidecar.at("model")));

    auto tensors = load_tensors(archive_path);
    auto is_buffer = [](const std::string& name) {
      return name.ends_with(".running_mean") || name.ends_with(".running_var");
    };
    for (auto& [name, t] : tensors) {
      nn::ParamStore* store = nullptr;
      std::string local;
      if (name.starts_with("head.")) {
        store = &model.head_;
        local = name.substr(5);
      } else if (name.starts_with("embedder.")) {
        store = &model.embedder_.store();
        local = name.substr(9);
      } else {
        fail("unexpected tensor in checkpoint: ", name);
      }
      if (is_buffer(local))
        store->buffer(local, t.shape, 0.0) = t;
      else
        store->adopt(local, std::move(t));
    }
    if (model.cfg_.pretrained) model.embedder_.set_weights_loaded();
    return model;
  }

 private:
  MilConfig cfg_;
  nn::InstanceEmbedder embedder_;
  nn::ParamStore head_;
};

}  // namespace amilpath
