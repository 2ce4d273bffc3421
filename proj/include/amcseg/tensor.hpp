#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace amcseg {

// Reverse-mode autodiff over dense row-major arrays. Activation tensors are
// BCHW. Values are immutable once an op has produced them; gradients
// accumulate into `grad` until the owner zeroes them.

bool grad_enabled();

// Disables graph recording (inference) for the current thread while alive.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

template <class T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;  // pushes this->grad into parent grads

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, T value);
  static Tensor scalar(T value);
  static Tensor from_data(std::vector<int> shape, std::vector<T> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) {
    if (v && !node_->parents.empty())
      throw std::invalid_argument("requires_grad can only be set on leaf tensors");
    node_->requires_grad = v;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  // Scalar extraction; the tensor must hold exactly one element.
  T item() const {
    if (numel() != 1)
      throw std::invalid_argument("item(): tensor has " +
                                  std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  // 4-d accessor for tests and glue code.
  T at(int b, int c, int h, int w) const {
    const auto& s = node_->shape;
    return node_->value[((static_cast<std::size_t>(b) * s[1] + c) * s[2] + h) * s[3] + w];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// ---- structural ops -------------------------------------------------------

// Dilated 2-d convolution over BCHW input, weight (O,I,KH,KW), bias (O).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int dilation, int pad);

// 2x2 max pooling with stride 2; H and W must be even. Gradient flows to the
// argmax position only (first occurrence on ties).
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x);

// Nearest-neighbour 2x upsampling; each pixel becomes a 2x2 block.
template <class T>
Tensor<T> upsample2d(const Tensor<T>& x);

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

// Zeroes whole channels with probability p and rescales survivors by
// 1/(1-p). Identity when p == 0.
template <class T>
Tensor<T> spatial_dropout(const Tensor<T>& x, double p, std::mt19937_64& rng);

// ---- elementwise ops ------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

// add/div: identical shapes, or one side scalar.
// mul additionally broadcasts a (B,1,H,W) map across channels of (B,C,H,W).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// a*x + b, elementwise.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b);
template <class T>
Tensor<T> log(const Tensor<T>& x);
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T exponent);
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// ---- reductions -----------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x);
template <class T>
Tensor<T> mean(const Tensor<T>& x);

// ---- autodiff driver ------------------------------------------------------

// Backpropagates from a scalar loss through the recorded graph, visiting each
// op once in reverse topological order. Gradients accumulate; callers zero
// them between steps.
template <class T>
void backward(const Tensor<T>& loss);

template <class T>
bool all_finite(const Tensor<T>& x);

std::string shape_str(const std::vector<int>& shape);

}  // namespace amcseg
