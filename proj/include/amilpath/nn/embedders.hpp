#pragma once
// Instance embedders: a trivial thumbnail embedder for desk-scale runs plus
// five standard CNN backbones. Parameter names follow the torchvision
// state_dict convention so converted pretrained weights can be loaded from a
// tensor archive; without such an archive the backbones are randomly
// initialized (deterministic from the init seed).
//
// Every embedder maps (N,3,s,s) images to a feature map (N,C,h,w); the MIL
// head reduces that by global spatial max-pooling to an (N,C) matrix.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "amilpath/image.hpp"
#include "amilpath/nn/layers.hpp"
#include "amilpath/rng.hpp"

namespace amilpath::nn {

class ParamStore {
 public:
  explicit ParamStore(uint64_t init_seed) : init_rng_(init_seed) {}

  // Whether parameters created from here on receive gradients (frozen
  // backbones create plain inputs instead).
  void set_trainable(bool t) { trainable_ = t; }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Var& get(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: ", name);
    return it->second;
  }

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), the standard conv/linear init.
  Var& uniform_param(const std::string& name, std::vector<int> shape, int fan_in) {
    if (Var* existing = find_checked(name, shape)) return *existing;
    Tensor t(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = init_rng_.uniform(-bound, bound);
    return insert(name, std::move(t));
  }

  Var& const_param(const std::string& name, std::vector<int> shape, double fill) {
    if (Var* existing = find_checked(name, shape)) return *existing;
    Tensor t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), fill);
    return insert(name, std::move(t));
  }

  // Install an externally provided value (checkpoint load).
  void adopt(const std::string& name, Tensor t) {
    auto it = params_.find(name);
    if (it != params_.end()) {
      require(it->second.value().same_shape(t), "checkpoint shape mismatch for ", name);
      it->second.value_mut() = std::move(t);
    } else {
      insert(name, std::move(t));
    }
  }

  Tensor& buffer(const std::string& name, std::vector<int> shape, double fill) {
    auto it = buffers_.find(name);
    if (it != buffers_.end()) {
      require(it->second.shape == shape, "buffer shape mismatch for ", name);
      return it->second;
    }
    Tensor t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), fill);
    return buffers_.emplace(name, std::move(t)).first->second;
  }

  std::map<std::string, Var>& params() { return params_; }
  const std::map<std::string, Var>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

 private:
  Var* find_checked(const std::string& name, const std::vector<int>& shape) {
    auto it = params_.find(name);
    if (it == params_.end()) return nullptr;
    require(it->second.value().shape == shape, "parameter shape mismatch for ", name,
            " (loaded checkpoint does not match the model configuration)");
    return &it->second;
  }

  Var& insert(const std::string& name, Tensor t) {
    Var v = trainable_ ? Var::param(std::move(t)) : Var::input(std::move(t));
    return params_.emplace(name, std::move(v)).first->second;
  }

  std::map<std::string, Var> params_;
  std::map<std::string, Tensor> buffers_;
  Rng init_rng_;
  bool trainable_ = true;
};

// Layer helpers: parameters are created lazily on first use, shapes derived
// from the incoming tensor.

inline Var conv_layer(ParamStore& ps, const std::string& name, const Var& x, int out_ch, int kh,
                      int kw, int stride, int pad_h, int pad_w, bool bias) {
  int c_in = x.value().dim(1);
  int fan_in = c_in * kh * kw;
  Var w = ps.uniform_param(name + ".weight", {out_ch, c_in, kh, kw}, fan_in);
  Var b = bias ? ps.uniform_param(name + ".bias", {out_ch}, fan_in) : Var();
  return conv2d(x, w, b, stride, pad_h, pad_w);
}

inline Var bn_layer(ParamStore& ps, const std::string& name, const Var& x, bool training,
                    double eps = 1e-5) {
  int c = x.value().dim(1);
  Var gamma = ps.const_param(name + ".weight", {c}, 1.0);
  Var beta = ps.const_param(name + ".bias", {c}, 0.0);
  Tensor& rm = ps.buffer(name + ".running_mean", {c}, 0.0);
  Tensor& rv = ps.buffer(name + ".running_var", {c}, 1.0);
  return batchnorm2d(x, gamma, beta, rm, rv, training, 0.1, eps);
}

inline Var dense_layer(ParamStore& ps, const std::string& name, const Var& x, int out_dim,
                       bool bias = true) {
  int in_dim = x.value().dim(1);
  Var w = ps.uniform_param(name + ".weight", {out_dim, in_dim}, in_dim);
  Var b = bias ? ps.uniform_param(name + ".bias", {out_dim}, in_dim) : Var();
  return linear(x, w, b);
}

// ---- architectures ----

inline Var alexnet_features(ParamStore& ps, Var x, bool /*training*/) {
  x = relu(conv_layer(ps, "features.0", x, 64, 11, 11, 4, 2, 2, true));
  x = maxpool2d(x, 3, 2);
  x = relu(conv_layer(ps, "features.3", x, 192, 5, 5, 1, 2, 2, true));
  x = maxpool2d(x, 3, 2);
  x = relu(conv_layer(ps, "features.6", x, 384, 3, 3, 1, 1, 1, true));
  x = relu(conv_layer(ps, "features.8", x, 256, 3, 3, 1, 1, 1, true));
  x = relu(conv_layer(ps, "features.10", x, 256, 3, 3, 1, 1, 1, true));
  x = maxpool2d(x, 3, 2);
  return adaptive_avgpool2d(x, 6, 6);
}

inline Var vgg16_bn_features(ParamStore& ps, Var x, bool training) {
  static constexpr int cfg[] = {64, 64, -1, 128, 128, -1, 256, 256, 256, -1,
                                512, 512, 512, -1, 512, 512, 512, -1};
  int li = 0;
  for (int v : cfg) {
    if (v == -1) {
      x = maxpool2d(x, 2, 2);
      li += 1;
    } else {
      x = conv_layer(ps, "features." + std::to_string(li), x, v, 3, 3, 1, 1, 1, true);
      x = bn_layer(ps, "features." + std::to_string(li + 1), x, training);
      x = relu(x);
      li += 3;
    }
  }
  return adaptive_avgpool2d(x, 7, 7);
}

inline Var resnet50_features(ParamStore& ps, Var x, bool training) {
  x = relu(bn_layer(ps, "bn1", conv_layer(ps, "conv1", x, 64, 7, 7, 2, 3, 3, false), training));
  x = maxpool2d(x, 3, 2, 1);
  static constexpr int planes[] = {64, 128, 256, 512};
  static constexpr int blocks[] = {3, 4, 6, 3};
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < blocks[stage]; ++b) {
      std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(b) + ".";
      int stride = (b == 0 && stage > 0) ? 2 : 1;
      int out_ch = planes[stage] * 4;
      Var identity = x;
      Var y = relu(bn_layer(
          ps, p + "bn1", conv_layer(ps, p + "conv1", x, planes[stage], 1, 1, 1, 0, 0, false),
          training));
      y = relu(bn_layer(
          ps, p + "bn2", conv_layer(ps, p + "conv2", y, planes[stage], 3, 3, stride, 1, 1, false),
          training));
      y = bn_layer(ps, p + "bn3", conv_layer(ps, p + "conv3", y, out_ch, 1, 1, 1, 0, 0, false),
                   training);
      if (b == 0 && (stride != 1 || x.value().dim(1) != out_ch)) {
        identity = bn_layer(
            ps, p + "downsample.1",
            conv_layer(ps, p + "downsample.0", x, out_ch, 1, 1, stride, 0, 0, false), training);
      }
      x = relu(add(y, identity));
    }
  }
  return x;
}

inline Var densenet121_features(ParamStore& ps, Var x, bool training) {
  x = relu(bn_layer(ps, "features.norm0",
                    conv_layer(ps, "features.conv0", x, 64, 7, 7, 2, 3, 3, false), training));
  x = maxpool2d(x, 3, 2, 1);
  constexpr int growth = 32, bn_size = 4;
  static constexpr int blocks[] = {6, 12, 24, 16};
  int channels = 64;
  for (int bi = 0; bi < 4; ++bi) {
    std::vector<Var> feats{x};
    for (int li = 0; li < blocks[bi]; ++li) {
      std::string p = "features.denseblock" + std::to_string(bi + 1) + ".denselayer" +
                      std::to_string(li + 1) + ".";
      Var in = feats.size() == 1 ? feats[0] : concat_channels(feats);
      Var y = relu(bn_layer(ps, p + "norm1", in, training));
      y = conv_layer(ps, p + "conv1", y, bn_size * growth, 1, 1, 1, 0, 0, false);
      y = relu(bn_layer(ps, p + "norm2", y, training));
      y = conv_layer(ps, p + "conv2", y, growth, 3, 3, 1, 1, 1, false);
      feats.push_back(y);
    }
    x = concat_channels(feats);
    channels += blocks[bi] * growth;
    if (bi < 3) {
      std::string p = "features.transition" + std::to_string(bi + 1) + ".";
      x = relu(bn_layer(ps, p + "norm", x, training));
      channels /= 2;
      x = conv_layer(ps, p + "conv", x, channels, 1, 1, 1, 0, 0, false);
      x = avgpool2d(x, 2, 2);
    }
  }
  return relu(bn_layer(ps, "features.norm5", x, training));
}

namespace detail {

inline Var basic_conv(ParamStore& ps, const std::string& p, const Var& x, int out_ch, int kh,
                      int kw, int stride, int pad_h, int pad_w, bool training) {
  Var y = conv_layer(ps, p + ".conv", x, out_ch, kh, kw, stride, pad_h, pad_w, false);
  return relu(bn_layer(ps, p + ".bn", y, training, 1e-3));
}

inline Var inception_a(ParamStore& ps, const std::string& p, const Var& x, int pool_features,
                       bool training) {
  Var b1 = basic_conv(ps, p + ".branch1x1", x, 64, 1, 1, 1, 0, 0, training);
  Var b5 = basic_conv(ps, p + ".branch5x5_1", x, 48, 1, 1, 1, 0, 0, training);
  b5 = basic_conv(ps, p + ".branch5x5_2", b5, 64, 5, 5, 1, 2, 2, training);
  Var bd = basic_conv(ps, p + ".branch3x3dbl_1", x, 64, 1, 1, 1, 0, 0, training);
  bd = basic_conv(ps, p + ".branch3x3dbl_2", bd, 96, 3, 3, 1, 1, 1, training);
  bd = basic_conv(ps, p + ".branch3x3dbl_3", bd, 96, 3, 3, 1, 1, 1, training);
  Var bp = avgpool2d(x, 3, 1, 1);
  bp = basic_conv(ps, p + ".branch_pool", bp, pool_features, 1, 1, 1, 0, 0, training);
  return concat_channels({b1, b5, bd, bp});
}

inline Var inception_b(ParamStore& ps, const std::string& p, const Var& x, bool training) {
  Var b3 = basic_conv(ps, p + ".branch3x3", x, 384, 3, 3, 2, 0, 0, training);
  Var bd = basic_conv(ps, p + ".branch3x3dbl_1", x, 64, 1, 1, 1, 0, 0, training);
  bd = basic_conv(ps, p + ".branch3x3dbl_2", bd, 96, 3, 3, 1, 1, 1, training);
  bd = basic_conv(ps, p + ".branch3x3dbl_3", bd, 96, 3, 3, 2, 0, 0, training);
  Var bp = maxpool2d(x, 3, 2);
  return concat_channels({b3, bd, bp});
}

inline Var inception_c(ParamStore& ps, const std::string& p, const Var& x, int c7, bool training) {
  Var b1 = basic_conv(ps, p + ".branch1x1", x, 192, 1, 1, 1, 0, 0, training);
  Var b7 = basic_conv(ps, p + ".branch7x7_1", x, c7, 1, 1, 1, 0, 0, training);
  b7 = basic_conv(ps, p + ".branch7x7_2", b7, c7, 1, 7, 1, 0, 3, training);
  b7 = basic_conv(ps, p + ".branch7x7_3", b7, 192, 7, 1, 1, 3, 0, training);
  Var bd = basic_conv(ps, p + ".branch7x7dbl_1", x, c7, 1, 1, 1, 0, 0, training);
  bd = basic_conv(ps, p + ".branch7x7dbl_2", bd, c7, 7, 1, 1, 3, 0, training);
  bd = basic_conv(ps, p + ".branch7x7dbl_3", bd, c7, 1, 7, 1, 0, 3, training);
  bd = basic_conv(ps, p + ".branch7x7dbl_4", bd, c7, 7, 1, 1, 3, 0, training);
  bd = basic_conv(ps, p + ".branch7x7dbl_5", bd, 192, 1, 7, 1, 0, 3, training);
  Var bp = avgpool2d(x, 3, 1, 1);
  bp = basic_conv(ps, p + ".branch_pool", bp, 192, 1, 1, 1, 0, 0, training);
  return concat_channels({b1, b7, bd, bp});
}

inline Var inception_d(ParamStore& ps, const std::string& p, const Var& x, bool training) {
  Var b3 = basic_conv(ps, p + ".branch3x3_1", x, 192, 1, 1, 1, 0, 0, training);
  b3 = basic_conv(ps, p + ".branch3x3_2", b3, 320, 3, 3, 2, 0, 0, training);
  Var b7 = basic_conv(ps, p + ".branch7x7x3_1", x, 192, 1, 1, 1, 0, 0, training);
  b7 = basic_conv(ps, p + ".branch7x7x3_2", b7, 192, 1, 7, 1, 0, 3, training);
  b7 = basic_conv(ps, p + ".branch7x7x3_3", b7, 192, 7, 1, 1, 3, 0, training);
  b7 = basic_conv(ps, p + ".branch7x7x3_4", b7, 192, 3, 3, 2, 0, 0, training);
  Var bp = maxpool2d(x, 3, 2);
  return concat_channels({b3, b7, bp});
}

inline Var inception_e(ParamStore& ps, const std::string& p, const Var& x, bool training) {
  Var b1 = basic_conv(ps, p + ".branch1x1", x, 320, 1, 1, 1, 0, 0, training);
  Var b3 = basic_conv(ps, p + ".branch3x3_1", x, 384, 1, 1, 1, 0, 0, training);
  Var b3a = basic_conv(ps, p + ".branch3x3_2a", b3, 384, 1, 3, 1, 0, 1, training);
  Var b3b = basic_conv(ps, p + ".branch3x3_2b", b3, 384, 3, 1, 1, 1, 0, training);
  b3 = concat_channels({b3a, b3b});
  Var bd = basic_conv(ps, p + ".branch3x3dbl_1", x, 448, 1, 1, 1, 0, 0, training);
  bd = basic_conv(ps, p + ".branch3x3dbl_2", bd, 384, 3, 3, 1, 1, 1, training);
  Var bda = basic_conv(ps, p + ".branch3x3dbl_3a", bd, 384, 1, 3, 1, 0, 1, training);
  Var bdb = basic_conv(ps, p + ".branch3x3dbl_3b", bd, 384, 3, 1, 1, 1, 0, training);
  bd = concat_channels({bda, bdb});
  Var bp = avgpool2d(x, 3, 1, 1);
  bp = basic_conv(ps, p + ".branch_pool", bp, 192, 1, 1, 1, 0, 0, training);
  return concat_channels({b1, b3, bd, bp});
}

}  // namespace detail

inline Var inception_v3_features(ParamStore& ps, Var x, bool training) {
  using namespace detail;
  x = basic_conv(ps, "Conv2d_1a_3x3", x, 32, 3, 3, 2, 0, 0, training);
  x = basic_conv(ps, "Conv2d_2a_3x3", x, 32, 3, 3, 1, 0, 0, training);
  x = basic_conv(ps, "Conv2d_2b_3x3", x, 64, 3, 3, 1, 1, 1, training);
  x = maxpool2d(x, 3, 2);
  x = basic_conv(ps, "Conv2d_3b_1x1", x, 80, 1, 1, 1, 0, 0, training);
  x = basic_conv(ps, "Conv2d_4a_3x3", x, 192, 3, 3, 1, 0, 0, training);
  x = maxpool2d(x, 3, 2);
  x = inception_a(ps, "Mixed_5b", x, 32, training);
  x = inception_a(ps, "Mixed_5c", x, 64, training);
  x = inception_a(ps, "Mixed_5d", x, 64, training);
  x = inception_b(ps, "Mixed_6a", x, training);
  x = inception_c(ps, "Mixed_6b", x, 128, training);
  x = inception_c(ps, "Mixed_6c", x, 160, training);
  x = inception_c(ps, "Mixed_6d", x, 160, training);
  x = inception_c(ps, "Mixed_6e", x, 192, training);
  x = inception_d(ps, "Mixed_7a", x, training);
  x = inception_e(ps, "Mixed_7b", x, training);
  x = inception_e(ps, "Mixed_7c", x, training);
  return x;
}

// ---- embedder front-end ----

inline const std::vector<std::string>& embedder_names() {
  static const std::vector<std::string> names{"toy",      "alexnet",     "vgg16_bn",
                                              "resnet50", "densenet121", "inception_v3"};
  return names;
}

class InstanceEmbedder {
 public:
  InstanceEmbedder(std::string name, uint64_t init_seed, bool pretrained = false)
      : name_(std::move(name)), pretrained_(pretrained), store_(init_seed) {
    const auto& names = embedder_names();
    require(std::find(names.begin(), names.end(), name_) != names.end(),
            "unknown embedder: ", name_);
  }

  const std::string& name() const { return name_; }
  bool pretrained() const { return pretrained_; }
  void set_weights_loaded() { weights_loaded_ = true; }

  // Channel count of the feature map = embedding width D after spatial max.
  int feature_channels() const {
    if (name_ == "toy") return 192;
    if (name_ == "alexnet") return 256;
    if (name_ == "vgg16_bn") return 512;
    if (name_ == "resnet50") return 2048;
    if (name_ == "densenet121") return 1024;
    return 2048;  // inception_v3
  }

  int input_size() const { return name_ == "toy" ? 8 : 256; }

  // Patch image -> (3,s,s) input tensor with the embedder's normalization:
  // plain [0,1] for toy, channel-standardized with the pretraining-corpus
  // statistics for the CNN backbones.
  Tensor preprocess(const ImageRgb& img) const {
    int s = input_size();
    ImageRgb scaled = (img.width() == s && img.height() == s) ? img : img.resize_box(s, s);
    Tensor t({3, s, s});
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdd[3] = {0.229, 0.224, 0.225};
    bool standardize = name_ != "toy";
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double v = scaled.at(x, y).ch(c) / 255.0;
          if (standardize) v = (v - mean[c]) / stdd[c];
          t.data[(static_cast<size_t>(c) * s + y) * s + x] = v;
        }
    return t;
  }

  // (N,3,s,s) -> feature map (N,C,h,w).
  Var features(const Var& x, bool training) {
    require(x.value().ndim() == 4 && x.value().dim(1) == 3, "embedder expects (N,3,h,w), got ",
            x.value().shape_str());
    require(!pretrained_ || weights_loaded_,
            "embedder ", name_, " requested pretrained weights but none were loaded");
    Var out;
    if (name_ == "toy") {
      // Identity on thumbnails: the flattened input is the embedding.
      require(x.value().dim(2) == 8 && x.value().dim(3) == 8,
              "toy embedder expects 8x8 thumbnails, got ", x.value().shape_str());
      out = reshape(x, {x.value().dim(0), 192, 1, 1});
    } else if (name_ == "alexnet") {
      out = alexnet_features(store_, x, training);
    } else if (name_ == "vgg16_bn") {
      out = vgg16_bn_features(store_, x, training);
    } else if (name_ == "resnet50") {
      out = resnet50_features(store_, x, training);
    } else if (name_ == "densenet121") {
      out = densenet121_features(store_, x, training);
    } else {
      out = inception_v3_features(store_, x, training);
    }
    require(out.value().dim(1) == feature_channels(), "embedder ", name_,
            " produced unexpected channel count ", out.value().dim(1));
    output_shape_ = {out.value().dim(1), out.value().dim(2), out.value().dim(3)};
    return out;
  }

  // (N,3,s,s) -> (N,D): feature map reduced by global spatial max-pooling.
  Var embed(const Var& x, bool training) { return global_spatial_max(features(x, training)); }

  // (channels,h,w) of the most recent features() call.
  const std::vector<int>& output_shape() const {
    require(!output_shape_.empty(), "output_shape unknown before the first forward");
    return output_shape_;
  }

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  std::string name_;
  bool pretrained_ = false;
  bool weights_loaded_ = false;
  ParamStore store_;
  std::vector<int> output_shape_;
};

}  // namespace amilpath::nn
