#pragma once

#include <vector>

#include "insfusion/tensor.hpp"

namespace insfusion {
namespace ops {

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or N×C + 1×C bias row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor softplus(const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m×k]·[k×n]
Tensor transpose2d(const Tensor& a);
// x[N×in]·W[in×out] + b[1×out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, Index start, Index len);
Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows);
// Row i of x repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& x, Index times);
// Sum of consecutive groups of `group` rows: [(G*group)×C] -> [G×C].
Tensor sum_groups(const Tensor& x, Index group);

// ---- reductions / normalization ----
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_sum_axis(const Tensor& x, int axis);
Tensor softmax(const Tensor& x, int axis);
// Row-wise over the last axis of a 2-d tensor.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// Per-segment max over rows; empty segments yield zero rows.
Tensor segment_max(const Tensor& x, const std::vector<Index>& seg, Index num_segments);

// ---- convolution ----
// x[H×W×Cin], w[3×3×Cin×Cout], b[Cout]; padding 1, stride 1 or 2.
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, Index stride = 1);

// ---- sampling ----
// map[H×W×C], coords[P×2] in (x, y) pixel space with origin at the center of
// cell (0,0). Zero padding outside [-0.5, W-0.5]×[-0.5, H-0.5]. Differentiable
// in both map and coords.
Tensor bilinear_sample(const Tensor& map, const Tensor& coords);

// Deformable attention kernel: for query n and head h, sum over the P points
// p of weights[(n*H+h)*P+p] * bilinear(map, coords[(n*H+h)*P+p]). Heads are
// concatenated: output is [N×(H*C)].
Tensor deformable_attend(const Tensor& map, const Tensor& coords, const Tensor& weights,
                         Index n_queries, Index heads, Index points);

// Pinhole projection of world points into pixel coordinates. Differentiable
// w.r.t. points; calibration is constant. Points behind the camera (z <= near)
// produce zero rows; use project_mask for visibility.
struct Pinhole {
  double fx, fy, cx, cy;
  double r[9];  // world->camera rotation, row-major
  double t[3];  // world->camera translation
  double near = 0.1;
};
Tensor pinhole_project(const Tensor& points, const Pinhole& cam);
// 1.0 where the point is in front of the camera and projects inside
// [-0.5, w-0.5]×[-0.5, h-0.5], else 0.0.
std::vector<double> project_mask(const Tensor& points, const Pinhole& cam, Index img_h,
                                 Index img_w);

// Sinusoidal features of coords[P×D] (no gradient to coords): for every input
// column and frequency k in [0, freqs): sin(2^k*pi*x), cos(2^k*pi*x).
// Output [P×(D*2*freqs)].
Tensor positional_features(const Tensor& coords, Index freqs);

// ---- attention (composed from primitives) ----
// q[n×d], k[m×d], v[m×c] -> [n×c]; softmax(q·kᵀ/√d)·v
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---- losses ----
// logits[N×C]; weighted mean of per-row negative log likelihood.
Tensor cross_entropy(const Tensor& logits, const std::vector<Index>& labels,
                     const std::vector<double>& weights);
// Mean over rows of the summed per-coordinate Huber penalty.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta = 1.0);
// CenterNet-style penalty-reduced focal loss on a sigmoid heatmap.
Tensor gaussian_focal(const Tensor& pred, const Tensor& target, double alpha = 2.0,
                      double beta = 4.0);

}  // namespace ops
}  // namespace insfusion
