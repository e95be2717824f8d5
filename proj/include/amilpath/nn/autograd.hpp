#pragma once
// Reverse-mode autodiff on a dynamically built graph. Each op returns a Var
// holding the forward value plus a closure that scatters the node's gradient
// into its inputs. backward() walks the graph in reverse topological order.
//
// Only the ops needed by the models here are implemented; all run on CPU in
// double precision, with dgemm doing the heavy lifting.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "amilpath/nn/tensor.hpp"

namespace amilpath::nn {

inline void use_single_blas_thread() {
  static const bool once = [] {
    openblas_set_num_threads(1);  // bitwise-reproducible reductions
    return true;
  }();
  (void)once;
}

struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs

  void ensure_grad() {
    if (grad.data.empty() && value.numel() > 0) grad = Tensor(value.shape);
  }
  void accumulate(const Tensor& g) {
    ensure_grad();
    require(g.same_shape(grad), "gradient shape mismatch: ", g.shape_str(), " vs ",
            grad.shape_str());
    for (size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var input(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  static Var param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value_mut() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.data.empty()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
  }
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op node. The backprop closure may capture input Vars by value
// (inputs are stored on the node, so no reference cycles form) plus any saved
// intermediates.
inline Var make_op(Tensor value, std::vector<Var> ins, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& v : ins) n->requires_grad = n->requires_grad || v.node()->requires_grad;
  if (n->requires_grad) {
    for (const Var& v : ins) n->inputs.push_back(v.node());
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

inline void backward(const Var& loss) {
  require(loss.value().numel() == 1, "backward expects a scalar loss");
  require(loss.node()->requires_grad, "loss does not depend on any parameter");

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backprop) continue;
    node->ensure_grad();
    node->backprop(*node);
  }
}

// ---- elementwise and shape ops ----

inline Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add shape mismatch");
  Tensor out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    if (a.node()->requires_grad) a.node()->accumulate(self.grad);
    if (b.node()->requires_grad) b.node()->accumulate(self.grad);
  });
}

inline Var add_n(const std::vector<Var>& xs) {
  require(!xs.empty(), "add_n of nothing");
  Tensor out = xs[0].value();
  for (size_t k = 1; k < xs.size(); ++k) {
    require(xs[k].value().same_shape(out), "add_n shape mismatch");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += xs[k].value().data[i];
  }
  return make_op(std::move(out), xs, [xs](Node& self) {
    for (const Var& x : xs)
      if (x.node()->requires_grad) x.node()->accumulate(self.grad);
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return make_op(std::move(out), {a}, [a, s](Node& self) {
    if (!a.node()->requires_grad) return;
    Tensor g = self.grad;
    for (double& v : g.data) v *= s;
    a.node()->accumulate(g);
  });
}

inline Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](Node& self) {
    if (a.node()->requires_grad) a.node()->accumulate(self.grad.reshaped(a.value().shape));
  });
}

inline Var flatten_rows(const Var& a) {
  require(a.value().ndim() >= 2, "flatten_rows needs >= 2 dims");
  int n = a.value().dim(0);
  int rest = static_cast<int>(a.value().numel() / n);
  return reshape(a, {n, rest});
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {a}, [a](Node& self) {
    if (!a.node()->requires_grad) return;
    Tensor g = self.grad;
    const Tensor& x = a.value();
    for (size_t i = 0; i < g.data.size(); ++i)
      if (x.data[i] <= 0.0) g.data[i] = 0.0;
    a.node()->accumulate(g);
  });
}

inline Var tanh_act(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  Tensor y = out;
  return make_op(std::move(out), {a}, [a, y](Node& self) {
    if (!a.node()->requires_grad) return;
    Tensor g = self.grad;
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
    a.node()->accumulate(g);
  });
}

// ---- matrix ops ----

// op(a) is (m,k), op(b) is (k,n); returns their (m,n) product.
inline Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false) {
  use_single_blas_thread();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.ndim() == 2 && bv.ndim() == 2, "matmul expects 2-D tensors");
  int m = trans_a ? av.dim(1) : av.dim(0);
  int k = trans_a ? av.dim(0) : av.dim(1);
  int k2 = trans_b ? bv.dim(1) : bv.dim(0);
  int n = trans_b ? bv.dim(0) : bv.dim(1);
  require(k == k2, "matmul inner dims differ: ", k, " vs ", k2);
  Tensor out({m, n});
  gemm(trans_a, trans_b, m, n, k, 1.0, av.data.data(), bv.data.data(), 0.0, out.data.data());
  return make_op(std::move(out), {a, b}, [a, b, trans_a, trans_b, m, n, k](Node& self) {
    const double* g = self.grad.data.data();
    if (a.node()->requires_grad) {
      Tensor ga(a.value().shape);
      if (!trans_a) {
        // dA = G * op(B)^T
        gemm(false, !trans_b, m, k, n, 1.0, g, b.value().data.data(), 0.0, ga.data.data());
      } else {
        // dA = (G * op(B)^T)^T = op(B) * G^T
        gemm(trans_b, true, k, m, n, 1.0, b.value().data.data(), g, 0.0, ga.data.data());
      }
      a.node()->accumulate(ga);
    }
    if (b.node()->requires_grad) {
      Tensor gb(b.value().shape);
      if (!trans_b) {
        // dB = op(A)^T * G
        gemm(!trans_a, false, k, n, m, 1.0, a.value().data.data(), g, 0.0, gb.data.data());
      } else {
        // dB = (op(A)^T * G)^T = G^T * op(A)
        gemm(true, trans_a, n, k, m, 1.0, g, a.value().data.data(), 0.0, gb.data.data());
      }
      b.node()->accumulate(gb);
    }
  });
}

// x:(N,in) w:(out,in) b:(out) -> (N,out). Pass an undefined Var to skip bias.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w, false, true);
  if (!b.defined()) return y;
  const Tensor& bias = b.value();
  require(bias.ndim() == 1 && bias.dim(0) == y.value().dim(1), "bias width mismatch");
  Tensor out = y.value();
  int n = out.dim(0), d = out.dim(1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[static_cast<size_t>(i) * d + j] += bias.data[j];
  return make_op(std::move(out), {y, b}, [y, b, n, d](Node& self) {
    if (y.node()->requires_grad) y.node()->accumulate(self.grad);
    if (b.node()->requires_grad) {
      Tensor gb({d});
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gb.data[j] += self.grad.data[static_cast<size_t>(i) * d + j];
      b.node()->accumulate(gb);
    }
  });
}

// Softmax over one axis of a 2-D tensor.
inline Var softmax(const Var& a, int axis) {
  const Tensor& x = a.value();
  require(x.ndim() == 2, "softmax expects 2-D");
  require(axis == 0 || axis == 1, "softmax axis must be 0 or 1");
  int rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape);
  int slices = axis == 1 ? rows : cols;
  int len = axis == 1 ? cols : rows;
  auto idx = [axis, cols](int s, int i) {
    return axis == 1 ? static_cast<size_t>(s) * cols + i : static_cast<size_t>(i) * cols + s;
  };
  for (int s = 0; s < slices; ++s) {
    double mx = -HUGE_VAL;
    for (int i = 0; i < len; ++i) mx = std::max(mx, x.data[idx(s, i)]);
    double sum = 0.0;
    for (int i = 0; i < len; ++i) {
      double e = std::exp(x.data[idx(s, i)] - mx);
      out.data[idx(s, i)] = e;
      sum += e;
    }
    for (int i = 0; i < len; ++i) out.data[idx(s, i)] /= sum;
  }
  Tensor y = out;
  return make_op(std::move(out), {a}, [a, y, slices, len, idx](Node& self) {
    if (!a.node()->requires_grad) return;
    Tensor g(y.shape);
    for (int s = 0; s < slices; ++s) {
      double dot = 0.0;
      for (int i = 0; i < len; ++i) dot += self.grad.data[idx(s, i)] * y.data[idx(s, i)];
      for (int i = 0; i < len; ++i)
        g.data[idx(s, i)] = y.data[idx(s, i)] * (self.grad.data[idx(s, i)] - dot);
    }
    a.node()->accumulate(g);
  });
}

// Mean over the batch of -log p(label), with p clamped at 1e-12 (warned).
inline Var cross_entropy_from_probs(const Var& probs, const std::vector<int>& labels) {
  const Tensor& p = probs.value();
  require(p.ndim() == 2, "cross_entropy expects (batch, classes)");
  int batch = p.dim(0), classes = p.dim(1);
  require(static_cast<int>(labels.size()) == batch, "labels/batch size mismatch");
  constexpr double kClamp = 1e-12;
  double loss = 0.0;
  for (int i = 0; i < batch; ++i) {
    require(labels[i] >= 0 && labels[i] < classes, "label out of range: ", labels[i]);
    double pl = p.data[static_cast<size_t>(i) * classes + labels[i]];
    if (pl < kClamp) {
      log_warn("cross_entropy: probability %.3e clamped to 1e-12", pl);
      pl = kClamp;
    }
    loss -= std::log(pl);
  }
  loss /= batch;
  return make_op(Tensor({1}, {loss}), {probs},
                 [probs, labels, batch, classes, kClamp](Node& self) {
                   if (!probs.node()->requires_grad) return;
                   double gscale = self.grad.data[0] / batch;
                   Tensor g(probs.value().shape);
                   for (int i = 0; i < batch; ++i) {
                     size_t at = static_cast<size_t>(i) * classes + labels[i];
                     double pl = probs.value().data[at];
                     if (pl >= kClamp) g.data[at] = -gscale / pl;
                   }
                   probs.node()->accumulate(g);
                 });
}

// ---- column plumbing for fusion ----

inline Var concat_cols(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(0) == bv.dim(0),
          "concat_cols expects 2-D tensors with equal rows");
  int n = av.dim(0), da = av.dim(1), db = bv.dim(1);
  Tensor out({n, da + db});
  for (int i = 0; i < n; ++i) {
    std::copy_n(&av.data[static_cast<size_t>(i) * da], da,
                &out.data[static_cast<size_t>(i) * (da + db)]);
    std::copy_n(&bv.data[static_cast<size_t>(i) * db], db,
                &out.data[static_cast<size_t>(i) * (da + db) + da]);
  }
  return make_op(std::move(out), {a, b}, [a, b, n, da, db](Node& self) {
    if (a.node()->requires_grad) {
      Tensor ga({n, da});
      for (int i = 0; i < n; ++i)
        std::copy_n(&self.grad.data[static_cast<size_t>(i) * (da + db)], da,
                    &ga.data[static_cast<size_t>(i) * da]);
      a.node()->accumulate(ga);
    }
    if (b.node()->requires_grad) {
      Tensor gb({n, db});
      for (int i = 0; i < n; ++i)
        std::copy_n(&self.grad.data[static_cast<size_t>(i) * (da + db) + da], db,
                    &gb.data[static_cast<size_t>(i) * db]);
      b.node()->accumulate(gb);
    }
  });
}

// (N,D) -> (N,D*times), columns tiled [x | x | ...].
inline Var repeat_cols(const Var& a, int times) {
  require(times >= 1, "repeat_cols: times must be >= 1");
  const Tensor& av = a.value();
  require(av.ndim() == 2, "repeat_cols expects 2-D");
  int n = av.dim(0), d = av.dim(1);
  Tensor out({n, d * times});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < times; ++t)
      std::copy_n(&av.data[static_cast<size_t>(i) * d], d,
                  &out.data[(static_cast<size_t>(i) * times + t) * d]);
  return make_op(std::move(out), {a}, [a, n, d, times](Node& self) {
    if (!a.node()->requires_grad) return;
    Tensor ga({n, d});
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < times; ++t)
        for (int j = 0; j < d; ++j)
          ga.data[static_cast<size_t>(i) * d + j] +=
              self.grad.data[(static_cast<size_t>(i) * times + t) * d + j];
    a.node()->accumulate(ga);
  });
}

}  // namespace amilpath::nn
