#include "insfusion/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace insfusion {
namespace ops {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Unary elementwise op with value-dependent derivative.
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  Tensor out(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) out(i) = f(x(i));
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    auto xd = x.ptr();
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* gx = tp.accum(ix);
      const Index m = static_cast<Index>(xd->value.size());
      for (Index i = 0; i < m; ++i) {
        gx[i] += go[i] * df(xd->value[static_cast<std::size_t>(i)]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    const Index n = a.numel();
    for (Index i = 0; i < n; ++i) out(i) = a(i) + b(i);
    if (Tape* tape = Tape::active()) {
      const bool fa = tape->flows(a), fb = tape->flows(b);
      if (fa || fb) {
        const int ia = fa ? tape->track(a) : -1;
        const int ib = fb ? tape->track(b) : -1;
        const int io = tape->track(out);
        tape->record([=](Tape& tp) {
          const double* go = tp.grad_of(io);
          if (!go) return;
          if (ia >= 0) {
            double* g = tp.accum(ia);
            for (Index i = 0; i < n; ++i) g[i] += go[i];
          }
          if (ib >= 0) {
            double* g = tp.accum(ib);
            for (Index i = 0; i < n; ++i) g[i] += go[i];
          }
        });
      }
    }
    return out;
  }
  // Bias-row broadcast: [N×C] + [1×C] (either order).
  const bool a_big = a.rank() == 2 && b.rank() == 2 && b.dim(0) == 1 && a.dim(1) == b.dim(1);
  const bool b_big = a.rank() == 2 && b.rank() == 2 && a.dim(0) == 1 && a.dim(1) == b.dim(1);
  if (!a_big && !b_big) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Tensor& big = a_big ? a : b;
  const Tensor& bias = a_big ? b : a;
  const Index rows = big.dim(0), cols = big.dim(1);
  Tensor out(big.shape());
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = big(i, j) + bias(0, j);
  }
  if (Tape* tape = Tape::active()) {
    const bool fbig = tape->flows(big), fbias = tape->flows(bias);
    if (fbig || fbias) {
      const int ibig = fbig ? tape->track(big) : -1;
      const int ibias = fbias ? tape->track(bias) : -1;
      const int io = tape->track(out);
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        if (ibig >= 0) {
          double* g = tp.accum(ibig);
          for (Index i = 0; i < rows * cols; ++i) g[i] += go[i];
        }
        if (ibias >= 0) {
          double* g = tp.accum(ibias);
          for (Index i = 0; i < rows; ++i) {
            for (Index j = 0; j < cols; ++j) g[j] += go[i * cols + j];
          }
        }
      });
    }
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  return add(a, scale(b, -1.0));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out(i) = a(i) * b(i);
  if (Tape* tape = Tape::active()) {
    const bool fa = tape->flows(a), fb = tape->flows(b);
    if (fa || fb) {
      const int ia = fa ? tape->track(a) : -1;
      const int ib = fb ? tape->track(b) : -1;
      const int io = tape->track(out);
      auto ad = a.ptr(), bd = b.ptr();
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        if (ia >= 0) {
          double* g = tp.accum(ia);
          for (Index i = 0; i < n; ++i) g[i] += go[i] * bd->value[static_cast<std::size_t>(i)];
        }
        if (ib >= 0) {
          double* g = tp.accum(ib);
          for (Index i = 0; i < n; ++i) g[i] += go[i] * ad->value[static_cast<std::size_t>(i)];
        }
      });
    }
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out(i) = a(i) * c;
  if (Tape* tape = Tape::active(); tape && tape->flows(a)) {
    const int ia = tape->track(a);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ia);
      for (Index i = 0; i < n; ++i) g[i] += go[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out(i) = a(i) + c;
  if (Tape* tape = Tape::active(); tape && tape->flows(a)) {
    const int ia = tape->track(a);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ia);
      for (Index i = 0; i < n; ++i) g[i] += go[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) {
        const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return phi + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double v) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return s * (1.0 - s);
      });
}

Tensor tanh_op(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected 2-d operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  MapM(out.data(), m, n).noalias() = CMapM(a.data(), m, k) * CMapM(b.data(), k, n);
  if (Tape* tape = Tape::active()) {
    const bool fa = tape->flows(a), fb = tape->flows(b);
    if (fa || fb) {
      const int ia = fa ? tape->track(a) : -1;
      const int ib = fb ? tape->track(b) : -1;
      const int io = tape->track(out);
      auto ad = a.ptr(), bd = b.ptr();
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        CMapM gout(go, m, n);
        if (ia >= 0) {
          MapM(tp.accum(ia), m, k).noalias() += gout * CMapM(bd->value.data(), k, n).transpose();
        }
        if (ib >= 0) {
          MapM(tp.accum(ib), k, n).noalias() += CMapM(ad->value.data(), m, k).transpose() * gout;
        }
      });
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expected 2-d tensor, got " + shape_str(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) out(j, i) = a(i, j);
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(a)) {
    const int ia = tape->track(a);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ia);
      for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < n; ++j) g[i * n + j] += go[j * m + i];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(shape, x.vec());
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    const Index n = x.numel();
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index i = 0; i < n; ++i) g[i] += go[i];
    });
  }
  return out;
}

namespace {

// Splits a shape at `axis` into outer/extent/inner strides.
struct AxisView {
  Index outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  v.extent = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  Shape out_shape = s0;
  Index total = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != static_cast<int>(s0.size())) {
      throw ShapeError("concat: rank mismatch between inputs");
    }
    for (int d = 0; d < x.rank(); ++d) {
      if (d != axis && x.dim(d) != s0[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(s0) + " outside axis " + std::to_string(axis));
      }
    }
    total += x.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor out(out_shape);
  const AxisView ov = axis_view(out_shape, axis);

  Index offset = 0;
  std::vector<Index> offsets;
  for (const Tensor& x : xs) {
    offsets.push_back(offset);
    const Index ext = x.dim(axis);
    for (Index o = 0; o < ov.outer; ++o) {
      const double* src = x.data() + o * ext * ov.inner;
      double* dst = out.data() + (o * total + offset) * ov.inner;
      std::copy(src, src + ext * ov.inner, dst);
    }
    offset += ext;
  }
  if (Tape* tape = Tape::active()) {
    bool any = false;
    for (const Tensor& x : xs) any = any || tape->flows(x);
    if (any) {
      struct Piece {
        int id;
        Index off, ext;
      };
      std::vector<Piece> pieces;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (tape->flows(xs[i])) {
          pieces.push_back({tape->track(xs[i]), offsets[i], xs[i].dim(axis)});
        }
      }
      const int io = tape->track(out);
      const Index inner = ov.inner, outer = ov.outer;
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        for (const Piece& p : pieces) {
          double* g = tp.accum(p.id);
          for (Index o = 0; o < outer; ++o) {
            const double* src = go + (o * total + p.off) * inner;
            double* dst = g + o * p.ext * inner;
            for (Index i = 0; i < p.ext * inner; ++i) dst[i] += src[i];
          }
        }
      });
    }
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, Index start, Index len) {
  const AxisView v = axis_view(x.shape(), axis);
  if (start < 0 || len < 0 || start + len > v.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for axis extent " +
                     std::to_string(v.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor out(out_shape);
  for (Index o = 0; o < v.outer; ++o) {
    const double* src = x.data() + (o * v.extent + start) * v.inner;
    std::copy(src, src + len * v.inner, out.data() + o * len * v.inner);
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index o = 0; o < v.outer; ++o) {
        double* dst = g + (o * v.extent + start) * v.inner;
        const double* src = go + o * len * v.inner;
        for (Index i = 0; i < len * v.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected 2-d tensor, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  for (Index r : rows) {
    if (r < 0 || r >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
  }
  const Index m = static_cast<Index>(rows.size());
  Tensor out({m, c});
  for (Index i = 0; i < m; ++i) {
    std::copy(x.data() + rows[static_cast<std::size_t>(i)] * c,
              x.data() + (rows[static_cast<std::size_t>(i)] + 1) * c, out.data() + i * c);
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    auto idx = rows;
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index i = 0; i < m; ++i) {
        double* dst = g + idx[static_cast<std::size_t>(i)] * c;
        for (Index j = 0; j < c; ++j) dst[j] += go[i * c + j];
      }
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& x, Index times) {
  if (x.rank() != 2) throw ShapeError("repeat_rows: expected 2-d tensor");
  if (times < 1) throw ShapeError("repeat_rows: times must be >= 1");
  const Index n = x.dim(0), c = x.dim(1);
  Tensor out({n * times, c});
  for (Index i = 0; i < n; ++i) {
    for (Index t = 0; t < times; ++t) {
      std::copy(x.data() + i * c, x.data() + (i + 1) * c, out.data() + (i * times + t) * c);
    }
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index i = 0; i < n; ++i) {
        for (Index t = 0; t < times; ++t) {
          const double* src = go + (i * times + t) * c;
          for (Index j = 0; j < c; ++j) g[i * c + j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor sum_groups(const Tensor& x, Index group) {
  if (x.rank() != 2) throw ShapeError("sum_groups: expected 2-d tensor");
  if (group < 1 || x.dim(0) % group != 0) {
    throw ShapeError("sum_groups: row count " + std::to_string(x.dim(0)) +
                     " not divisible by group " + std::to_string(group));
  }
  const Index g_count = x.dim(0) / group, c = x.dim(1);
  Tensor out({g_count, c});
  for (Index g = 0; g < g_count; ++g) {
    for (Index r = 0; r < group; ++r) {
      const double* src = x.data() + (g * group + r) * c;
      for (Index j = 0; j < c; ++j) out(g, j) += src[j];
    }
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* gx = tp.accum(ix);
      for (Index g = 0; g < g_count; ++g) {
        for (Index r = 0; r < group; ++r) {
          double* dst = gx + (g * group + r) * c;
          for (Index j = 0; j < c; ++j) dst[j] += go[g * c + j];
        }
      }
    });
  }
  return out;
}

Tensor reduce_sum(const Tensor& x) {
  double s = 0.0;
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) s += x(i);
  Tensor out({1}, {s});
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index i = 0; i < n; ++i) g[i] += go[0];
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("reduce_mean: empty tensor");
  return scale(reduce_sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reduce_sum_axis(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape;
  for (int d = 0; d < x.rank(); ++d) {
    if (d != axis) out_shape.push_back(x.dim(d));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  for (Index o = 0; o < v.outer; ++o) {
    for (Index j = 0; j < v.extent; ++j) {
      const double* src = x.data() + (o * v.extent + j) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (Index i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index o = 0; o < v.outer; ++o) {
        for (Index j = 0; j < v.extent; ++j) {
          double* dst = g + (o * v.extent + j) * v.inner;
          const double* src = go + o * v.inner;
          for (Index i = 0; i < v.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  if (v.extent < 1) throw ShapeError("softmax: empty axis");
  Tensor out(x.shape());
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      const Index base = o * v.extent * v.inner + i;
      double mx = x(base);
      for (Index j = 1; j < v.extent; ++j) mx = std::max(mx, x(base + j * v.inner));
      double denom = 0.0;
      for (Index j = 0; j < v.extent; ++j) {
        const double e = std::exp(x(base + j * v.inner) - mx);
        out(base + j * v.inner) = e;
        denom += e;
      }
      for (Index j = 0; j < v.extent; ++j) out(base + j * v.inner) /= denom;
    }
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    auto od = out.ptr();
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      const double* y = od->value.data();
      for (Index o = 0; o < v.outer; ++o) {
        for (Index i = 0; i < v.inner; ++i) {
          const Index base = o * v.extent * v.inner + i;
          double dot = 0.0;
          for (Index j = 0; j < v.extent; ++j) {
            const Index k = base + j * v.inner;
            dot += y[k] * go[k];
          }
          for (Index j = 0; j < v.extent; ++j) {
            const Index k = base + j * v.inner;
            g[k] += y[k] * (go[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm: expected 2-d input, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " elements");
  }
  Tensor out({n, c});
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  std::vector<double> xhat(static_cast<std::size_t>(n * c));
  for (Index i = 0; i < n; ++i) {
    double mean = 0.0;
    for (Index j = 0; j < c; ++j) mean += x(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (Index j = 0; j < c; ++j) {
      const double d = x(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = inv;
    for (Index j = 0; j < c; ++j) {
      const double xh = (x(i, j) - mean) * inv;
      xhat[static_cast<std::size_t>(i * c + j)] = xh;
      out(i, j) = xh * gamma(j) + beta(j);
    }
  }
  if (Tape* tape = Tape::active()) {
    const bool fx = tape->flows(x), fg = tape->flows(gamma), fb = tape->flows(beta);
    if (fx || fg || fb) {
      const int ix = fx ? tape->track(x) : -1;
      const int ig = fg ? tape->track(gamma) : -1;
      const int ib = fb ? tape->track(beta) : -1;
      const int io = tape->track(out);
      auto gd = gamma.ptr();
      auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
      auto inv_s = std::make_shared<std::vector<double>>(std::move(inv_std));
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        const double* xh = xhat_s->data();
        for (Index i = 0; i < n; ++i) {
          const double* gr = go + i * c;
          if (ib >= 0) {
            double* g = tp.accum(ib);
            for (Index j = 0; j < c; ++j) g[j] += gr[j];
          }
          if (ig >= 0) {
            double* g = tp.accum(ig);
            for (Index j = 0; j < c; ++j) g[j] += gr[j] * xh[i * c + j];
          }
          if (ix >= 0) {
            double* g = tp.accum(ix) + i * c;
            double mean_dyg = 0.0, mean_dyg_xh = 0.0;
            for (Index j = 0; j < c; ++j) {
              const double dyg = gr[j] * gd->value[static_cast<std::size_t>(j)];
              mean_dyg += dyg;
              mean_dyg_xh += dyg * xh[i * c + j];
            }
            mean_dyg /= static_cast<double>(c);
            mean_dyg_xh /= static_cast<double>(c);
            const double inv = (*inv_s)[static_cast<std::size_t>(i)];
            for (Index j = 0; j < c; ++j) {
              const double dyg = gr[j] * gd->value[static_cast<std::size_t>(j)];
              g[j] += inv * (dyg - mean_dyg - xh[i * c + j] * mean_dyg_xh);
            }
          }
        }
      });
    }
  }
  return out;
}

Tensor segment_max(const Tensor& x, const std::vector<Index>& seg, Index num_segments) {
  if (x.rank() != 2) throw ShapeError("segment_max: expected 2-d tensor");
  const Index n = x.dim(0), c = x.dim(1);
  if (static_cast<Index>(seg.size()) != n) {
    throw ShapeError("segment_max: segment ids must match row count");
  }
  Tensor out({num_segments, c});
  std::vector<Index> arg(static_cast<std::size_t>(num_segments * c), -1);
  for (Index i = 0; i < n; ++i) {
    const Index s = seg[static_cast<std::size_t>(i)];
    if (s < 0 || s >= num_segments) {
      throw ShapeError("segment_max: segment id " + std::to_string(s) + " out of range");
    }
    for (Index j = 0; j < c; ++j) {
      Index& a = arg[static_cast<std::size_t>(s * c + j)];
      if (a < 0 || x(i, j) > out(s, j)) {
        a = i;
        out(s, j) = x(i, j);
      }
    }
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(x)) {
    const int ix = tape->track(x);
    const int io = tape->track(out);
    auto arg_s = std::make_shared<std::vector<Index>>(std::move(arg));
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ix);
      for (Index s = 0; s < num_segments; ++s) {
        for (Index j = 0; j < c; ++j) {
          const Index a = (*arg_s)[static_cast<std::size_t>(s * c + j)];
          if (a >= 0) g[a * c + j] += go[s * c + j];
        }
      }
    });
  }
  return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw ShapeError("scaled_dot_attention: incompatible shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor attn = softmax(scale(matmul(q, transpose2d(k)), s), 1);
  return matmul(attn, v);
}

}  // namespace ops
}  // namespace insfusion
