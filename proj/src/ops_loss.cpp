#include <algorithm>
#include <cmath>

#include "insfusion/ops.hpp"

namespace insfusion {
namespace ops {

Tensor cross_entropy(const Tensor& logits, const std::vector<Index>& labels,
                     const std::vector<double>& weights) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be N×C");
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(weights.size()) != n) {
    throw ShapeError("cross_entropy: labels/weights must have N entries");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) throw ShapeError("cross_entropy: weights sum to zero");

  // log-softmax rows, weighted NLL
  std::vector<double> probs(static_cast<std::size_t>(n * c));
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ShapeError("cross_entropy: label out of range");
    double mx = logits(i, 0);
    for (Index j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
    double denom = 0.0;
    for (Index j = 0; j < c; ++j) {
      const double e = std::exp(logits(i, j) - mx);
      probs[static_cast<std::size_t>(i * c + j)] = e;
      denom += e;
    }
    for (Index j = 0; j < c; ++j) probs[static_cast<std::size_t>(i * c + j)] /= denom;
    loss -= weights[static_cast<std::size_t>(i)] *
            (logits(i, y) - mx - std::log(denom));
  }
  loss /= wsum;
  Tensor out({1}, {loss});
  if (Tape* tape = Tape::active(); tape && tape->flows(logits)) {
    const int il = tape->track(logits);
    const int io = tape->track(out);
    auto probs_s = std::make_shared<std::vector<double>>(std::move(probs));
    auto lab = labels;
    auto wts = weights;
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(il);
      const double f = go[0] / wsum;
      for (Index i = 0; i < n; ++i) {
        const double wi = wts[static_cast<std::size_t>(i)];
        for (Index j = 0; j < c; ++j) {
          double d = (*probs_s)[static_cast<std::size_t>(i * c + j)];
          if (j == lab[static_cast<std::size_t>(i)]) d -= 1.0;
          g[i * c + j] += f * wi * d;
        }
      }
    });
  }
  return out;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("smooth_l1: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (pred.rank() != 2) throw ShapeError("smooth_l1: expected N×D");
  if (beta <= 0.0) throw ShapeError("smooth_l1: beta must be positive");
  const Index n = pred.dim(0), d = pred.dim(1);
  double loss = 0.0;
  for (Index i = 0; i < n * d; ++i) {
    const double diff = pred(i) - target(i);
    const double a = std::abs(diff);
    loss += a < beta ? 0.5 * diff * diff / beta : a - 0.5 * beta;
  }
  loss /= static_cast<double>(n);
  Tensor out({1}, {loss});
  if (Tape* tape = Tape::active(); tape && tape->flows(pred)) {
    const int ip = tape->track(pred);
    const int io = tape->track(out);
    auto pd = pred.ptr(), td = target.ptr();
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ip);
      const double f = go[0] / static_cast<double>(n);
      for (Index i = 0; i < n * d; ++i) {
        const double diff = pd->value[static_cast<std::size_t>(i)] -
                            td->value[static_cast<std::size_t>(i)];
        g[i] += f * std::clamp(diff / beta, -1.0, 1.0);
      }
    });
  }
  return out;
}

Tensor gaussian_focal(const Tensor& pred, const Tensor& target, double alpha, double beta) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("gaussian_focal: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  constexpr double kEps = 1e-12;
  const Index n = pred.numel();
  Index npos = 0;
  for (Index i = 0; i < n; ++i) {
    if (target(i) >= 1.0) ++npos;
  }
  const double norm = static_cast<double>(std::max<Index>(1, npos));
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double p = std::clamp(pred(i), kEps, 1.0 - kEps);
    const double t = target(i);
    if (t >= 1.0) {
      loss -= std::pow(1.0 - p, alpha) * std::log(p);
    } else {
      loss -= std::pow(1.0 - t, beta) * std::pow(p, alpha) * std::log(1.0 - p);
    }
  }
  loss /= norm;
  Tensor out({1}, {loss});
  if (Tape* tape = Tape::active(); tape && tape->flows(pred)) {
    const int ip = tape->track(pred);
    const int io = tape->track(out);
    auto pd = pred.ptr(), td = target.ptr();
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ip);
      const double f = go[0] / norm;
      for (Index i = 0; i < n; ++i) {
        const double raw = pd->value[static_cast<std::size_t>(i)];
        if (raw <= kEps || raw >= 1.0 - kEps) continue;  // clamped region, flat
        const double p = raw;
        const double t = td->value[static_cast<std::size_t>(i)];
        double d;
        if (t >= 1.0) {
          d = alpha * std::pow(1.0 - p, alpha - 1.0) * std::log(p) -
              std::pow(1.0 - p, alpha) / p;
        } else {
          d = std::pow(1.0 - t, beta) *
              (std::pow(p, alpha) / (1.0 - p) -
               alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p));
        }
        g[i] += f * d;
      }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace insfusion
