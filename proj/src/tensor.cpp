#include "insfusion/tensor.hpp"

#include <cmath>
#include <sstream>

namespace insfusion {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> value) {
  if (shape_numel(shape) != static_cast<Index>(value.size())) {
    throw ShapeError("value size " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  }
  d_ = std::make_shared<TensorData>(TensorData{std::move(shape), std::move(value), false});
}

Tensor Tensor::full(const Shape& shape, double v) {
  Tensor t(shape);
  std::fill(t.vec().begin(), t.vec().end(), v);
  return t;
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, double stddev, double mean) {
  Tensor t(shape);
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return d_->value[0];
}

bool Tensor::all_finite() const {
  for (double v : d_->value) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::track(const Tensor& t) {
  auto it = ids_.find(t.id());
  if (it != ids_.end()) return it->second;
  int id = static_cast<int>(numels_.size());
  ids_.emplace(t.id(), id);
  tracked_.push_back(t.ptr());
  numels_.push_back(t.numel());
  grads_.emplace_back();
  return id;
}

void Tape::record(std::function<void(Tape&)> backward_fn) {
  nodes_.push_back(Node{std::move(backward_fn)});
}

double* Tape::accum(int id) {
  auto& g = grads_[static_cast<std::size_t>(id)];
  if (g.empty()) g.assign(static_cast<std::size_t>(numels_[static_cast<std::size_t>(id)]), 0.0);
  return g.data();
}

const double* Tape::grad_of(int id) const {
  const auto& g = grads_[static_cast<std::size_t>(id)];
  return g.empty() ? nullptr : g.data();
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  auto it = ids_.find(loss.id());
  if (it == ids_.end()) {
    throw ShapeError("backward(): loss is not connected to this tape");
  }
  accum(it->second)[0] += 1.0;
  for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node) {
    node->backward(*this);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  auto it = ids_.find(t.id());
  if (it != ids_.end()) {
    const auto& g = grads_[static_cast<std::size_t>(it->second)];
    if (!g.empty()) return g;
  }
  return std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
}

}  // namespace insfusion
