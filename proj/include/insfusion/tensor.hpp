#pragma once

#include <functional>
#include <memory>
#include <random>
#include <unordered_map>
#include <vector>

#include "insfusion/common.hpp"

namespace insfusion {

using Shape = std::vector<Index>;

Index shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
};

// Dense row-major f64 tensor. Copies share the underlying buffer; gradients
// live on the Tape, not on the tensor (see Tape below).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : d_(std::make_shared<TensorData>(
            TensorData{shape, std::vector<double>(shape_numel(shape), 0.0), false})) {}
  Tensor(Shape shape, std::vector<double> value);

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor full(const Shape& shape, double v);
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0,
                      double mean = 0.0);
  static Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  Index dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  Index numel() const { return static_cast<Index>(d_->value.size()); }

  double* data() { return d_->value.data(); }
  const double* data() const { return d_->value.data(); }
  std::vector<double>& vec() { return d_->value; }
  const std::vector<double>& vec() const { return d_->value; }

  double& operator()(Index i) { return d_->value[static_cast<std::size_t>(i)]; }
  double operator()(Index i) const { return d_->value[static_cast<std::size_t>(i)]; }
  double& operator()(Index i, Index j) {
    return d_->value[static_cast<std::size_t>(i * dim(1) + j)];
  }
  double operator()(Index i, Index j) const {
    return d_->value[static_cast<std::size_t>(i * dim(1) + j)];
  }
  double& operator()(Index i, Index j, Index k) {
    return d_->value[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double operator()(Index i, Index j, Index k) const {
    return d_->value[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }

  double item() const;

  Tensor& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return d_->requires_grad; }

  // Fresh buffer, no grad flag, no tape lineage.
  Tensor detach() const { return Tensor(d_->shape, d_->value); }

  bool all_finite() const;

  const TensorData* id() const { return d_.get(); }
  std::shared_ptr<TensorData> ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Ops append one node per recorded primitive; creation
// order is already topological (parents recorded before children), so
// backward() is a single reverse sweep that visits each node exactly once.
//
// Gradients are stored per tape, keyed by a tape-local id assigned to each
// participating tensor. A fresh tape per training step therefore leaves
// parameters untouched; workers running disjoint tapes in parallel never
// share mutable state.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // True if gradient should flow into t on this tape.
  bool flows(const Tensor& t) const {
    return t.requires_grad() || ids_.count(t.id()) > 0;
  }
  // Assigns (or returns) the tape-local id of t.
  int track(const Tensor& t);

  void record(std::function<void(Tape&)> backward_fn);

  // Accumulation buffer for node `id`, allocated zeroed on first use.
  double* accum(int id);
  // Gradient of node `id`, or nullptr if nothing has flowed into it.
  const double* grad_of(int id) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps all recorded nodes in reverse.
  void backward(const Tensor& loss);

  // Gradient of t after backward(); zeros if t never received gradient.
  std::vector<double> grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::function<void(Tape&)> backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const TensorData*, int> ids_;
  // Pins tracked TensorData so id keys can never alias a recycled address.
  std::vector<std::shared_ptr<TensorData>> tracked_;
  std::vector<std::vector<double>> grads_;
  std::vector<Index> numels_;
  Tape* prev_ = nullptr;
};

}  // namespace insfusion
