#pragma once

// Minimal reverse-mode autodiff: a tape of recorded operations over dense
// tensors, the operator set of the face network, Adam, and a central
// finite-difference gradient checker.
//
// Instantiated for float (training) and double (gradient checks).

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "facegan/tensor.hpp"

namespace facegan {

template <typename T>
class Graph;

/// Handle to a node on a Graph tape.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    const char* op = "leaf";
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf node. Parameters pass requires_grad = true.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false);

  /// Appends an operation. requires_grad is inherited from the inputs.
  Var<T> record(const char* op, Tensor<T> value, std::vector<int> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Visits each recorded operation once,
  /// newest first.
  void backward(Var<T> loss);

  /// Gradient of a node after backward(); zeros if the node was unreachable.
  Tensor<T> gradient(Var<T> v) const;

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<T>& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Grad buffer of an input node, zero-initialized on first touch.
  Tensor<T>& accumulate(int id);

 private:
  std::deque<Node> nodes_;  // deque: references stay valid as the tape grows
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

// ---- operators -----------------------------------------------------------

/// Stride-1 "same" convolution with an odd square kernel (3x3 or 1x1).
/// input [N,C1,H,W], weight [C2,C1,K,K], bias [C2] -> [N,C2,H,W].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias);

/// 2x2 average pooling with stride 2; H and W must be even.
template <typename T>
Var<T> avg_pool2(Var<T> input);

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample_nearest2(Var<T> input);

enum class Activation { kElu, kTanh };

template <typename T>
Var<T> activation(Activation kind, Var<T> input);

template <typename T>
Var<T> elu(Var<T> input) {
  return activation(Activation::kElu, input);
}

template <typename T>
Var<T> tanh(Var<T> input) {
  return activation(Activation::kTanh, input);
}

/// input [N,D1], weight [D2,D1], bias [D2] -> [N,D2].
template <typename T>
Var<T> fully_connected(Var<T> input, Var<T> weight, Var<T> bias);

/// Mean absolute difference over all elements. Subgradient 0 at equality.
template <typename T>
Var<T> l1_mean(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// a + scale * b, elementwise on equal shapes.
template <typename T>
Var<T> axpy(Var<T> a, T scale, Var<T> b);

template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

/// Concatenates along dim 1 of two rank-4 tensors with equal N, H, W.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

// ---- optimisation --------------------------------------------------------

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;
};

struct AdamOptions {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are indexed like the parameter list
/// they were created for.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions options) : options_(options) {}

  void step(std::span<Parameter<T>> params, double lr);

  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return t_; }

  // exposed for checkpointing
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

// ---- gradient checking ---------------------------------------------------

struct GradCheckResult {
  /// max |analytic - numeric| / max(max |numeric|, max |analytic|, 1e-6),
  /// taken per input tensor and then maximised over inputs.
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t entries_checked = 0;
};

using GradCheckFn = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

/// Compares backward() against central differences for every input of a
/// scalar-valued function. When max_entries_per_input > 0 a seeded random
/// subset of entries is probed instead of all of them.
GradCheckResult check_gradients(const GradCheckFn& f, const std::vector<Tensor<double>>& inputs,
                                double eps = 1e-4, std::size_t max_entries_per_input = 0,
                                std::uint64_t seed = 0);

}  // namespace facegan
