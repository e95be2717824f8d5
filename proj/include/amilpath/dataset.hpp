#pragma once
// Bridges stored artifacts (patch tiles + bag manifests) to in-memory
// training samples: reads each bag's patch PNGs and stacks the
// preprocessed per-instance tensors into the embedder's input layout.

#include <algorithm>
#include <string>
#include <vector>

#include "amilpath/bagging.hpp"
#include "amilpath/common.hpp"
#include "amilpath/nn/embedders.hpp"
#include "amilpath/png_io.hpp"
#include "amilpath/train.hpp"

namespace amilpath {

// Patches live at <tiles_root>/<slide_id>/<ref>.png.
inline nn::Tensor load_bag_tensor(const Bag& bag, const fs::path& tiles_root,
                                  const nn::InstanceEmbedder& embedder) {
  int s = embedder.input_size();
  int n = static_cast<int>(bag.instance_refs.size());
  require(n > 0, "bag ", bag.bag_id, " has no instances");
  nn::Tensor out({n, 3, s, s});
  size_t stride = static_cast<size_t>(3 * s * s);
  for (int i = 0; i < n; ++i) {
    fs::path p = tiles_root / bag.slide_id / (bag.instance_refs[static_cast<size_t>(i)] + ".png");
    nn::Tensor one = embedder.preprocess(read_png(p));
    std::copy(one.data.begin(), one.data.end(),
              out.data.begin() + static_cast<int64_t>(stride) * i);
  }
  return out;
}

inline TrainSample make_train_sample(const Bag& bag, const fs::path& tiles_root,
                                     const nn::InstanceEmbedder& embedder) {
  TrainSample s;
  s.slide_id = bag.slide_id;
  s.instances = load_bag_tensor(bag, tiles_root, embedder);
  s.clinical = bag.clinical_vec;
  s.label = bag.label;
  return s;
}

inline std::vector<TrainSample> make_train_samples(const std::vector<Bag>& bags,
                                                   const fs::path& tiles_root,
                                                   const nn::InstanceEmbedder& embedder) {
  std::vector<TrainSample> out;
  out.reserve(bags.size());
  for (const auto& bag : bags) out.push_back(make_train_sample(bag, tiles_root, embedder));
  return out;
}

}  // namespace amilpath
