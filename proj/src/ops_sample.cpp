#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>

#include "insfusion/ops.hpp"

namespace insfusion {
namespace ops {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

// im2col for a channels-last map with 3x3 kernel and padding 1.
// Output row (ho*Wo+wo) holds the 9*Cin window values in (ky, kx, c) order,
// which matches a [3,3,Cin,Cout] kernel flattened to (9*Cin)×Cout.
void im2col_3x3(const double* x, Index h, Index w, Index c, Index stride, Index ho, Index wo,
                double* col) {
  const Index row_len = 9 * c;
  for (Index i = 0; i < ho; ++i) {
    for (Index j = 0; j < wo; ++j) {
      double* dst = col + (i * wo + j) * row_len;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index sy = i * stride - 1 + ky;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index sx = j * stride - 1 + kx;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = x + (sy * w + sx) * c;
            std::copy(src, src + c, dst);
          }
          dst += c;
        }
      }
    }
  }
}

void col2im_3x3(const double* col, Index h, Index w, Index c, Index stride, Index ho, Index wo,
                double* gx) {
  const Index row_len = 9 * c;
  for (Index i = 0; i < ho; ++i) {
    for (Index j = 0; j < wo; ++j) {
      const double* src = col + (i * wo + j) * row_len;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index sy = i * stride - 1 + ky;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index sx = j * stride - 1 + kx;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            double* dst = gx + (sy * w + sx) * c;
            for (Index k = 0; k < c; ++k) dst[k] += src[k];
          }
          src += c;
        }
      }
    }
  }
}

struct Corner {
  Index cell;   // flat (y*W + x), or -1 if outside the map
  double wgt;
};

// The four bilinear corners of a continuous (x, y) sample point.
inline void bilinear_corners(double x, double y, Index h, Index w, Corner out[4], Index* x0_out,
                             Index* y0_out, double* fx_out, double* fy_out) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const Index x0 = static_cast<Index>(fx0), y0 = static_cast<Index>(fy0);
  const double ax = x - fx0, ay = y - fy0;
  auto cell = [&](Index yy, Index xx) -> Index {
    return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? -1 : yy * w + xx;
  };
  out[0] = {cell(y0, x0), (1.0 - ay) * (1.0 - ax)};
  out[1] = {cell(y0, x0 + 1), (1.0 - ay) * ax};
  out[2] = {cell(y0 + 1, x0), ay * (1.0 - ax)};
  out[3] = {cell(y0 + 1, x0 + 1), ay * ax};
  *x0_out = x0;
  *y0_out = y0;
  *fx_out = ax;
  *fy_out = ay;
}

}  // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, Index stride) {
  if (x.rank() != 3) throw ShapeError("conv2d_3x3: expected H×W×C input, got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != x.dim(2)) {
    throw ShapeError("conv2d_3x3: kernel " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (stride != 1 && stride != 2) throw ShapeError("conv2d_3x3: stride must be 1 or 2");
  const Index h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(3);
  if (b.numel() != cout) throw ShapeError("conv2d_3x3: bias must have Cout elements");
  const Index ho = (h - 1) / stride + 1;
  const Index wo = (wd - 1) / stride + 1;

  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ho * wo * 9 * cin));
  im2col_3x3(x.data(), h, wd, cin, stride, ho, wo, col->data());

  Tensor out({ho, wo, cout});
  MapM om(out.data(), ho * wo, cout);
  om.noalias() = CMapM(col->data(), ho * wo, 9 * cin) * CMapM(w.data(), 9 * cin, cout);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), cout);

  if (Tape* tape = Tape::active()) {
    const bool fx = tape->flows(x), fw = tape->flows(w), fb = tape->flows(b);
    if (fx || fw || fb) {
      const int ix = fx ? tape->track(x) : -1;
      const int iw = fw ? tape->track(w) : -1;
      const int ib = fb ? tape->track(b) : -1;
      const int io = tape->track(out);
      auto wd_ptr = w.ptr();
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        CMapM gout(go, ho * wo, cout);
        if (ib >= 0) {
          Eigen::Map<Eigen::RowVectorXd>(tp.accum(ib), cout) += gout.colwise().sum();
        }
        if (iw >= 0) {
          MapM(tp.accum(iw), 9 * cin, cout).noalias() +=
              CMapM(col->data(), ho * wo, 9 * cin).transpose() * gout;
        }
        if (ix >= 0) {
          std::vector<double> gcol(static_cast<std::size_t>(ho * wo * 9 * cin));
          MapM(gcol.data(), ho * wo, 9 * cin).noalias() =
              gout * CMapM(wd_ptr->value.data(), 9 * cin, cout).transpose();
          col2im_3x3(gcol.data(), h, wd, cin, stride, ho, wo, tp.accum(ix));
        }
      });
    }
  }
  return out;
}

Tensor bilinear_sample(const Tensor& map, const Tensor& coords) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample: map must be H×W×C, got " + shape_str(map.shape()));
  if (coords.rank() != 2 || coords.dim(1) != 2) {
    throw ShapeError("bilinear_sample: coords must be P×2, got " + shape_str(coords.shape()));
  }
  const Index h = map.dim(0), w = map.dim(1), c = map.dim(2), p = coords.dim(0);
  Tensor out({p, c});
  for (Index i = 0; i < p; ++i) {
    Corner cr[4];
    Index x0, y0;
    double ax, ay;
    bilinear_corners(coords(i, 0), coords(i, 1), h, w, cr, &x0, &y0, &ax, &ay);
    double* dst = out.data() + i * c;
    for (const Corner& k : cr) {
      if (k.cell < 0 || k.wgt == 0.0) continue;
      const double* src = map.data() + k.cell * c;
      for (Index j = 0; j < c; ++j) dst[j] += k.wgt * src[j];
    }
  }
  if (Tape* tape = Tape::active()) {
    const bool fm = tape->flows(map), fc = tape->flows(coords);
    if (fm || fc) {
      const int im = fm ? tape->track(map) : -1;
      const int ic = fc ? tape->track(coords) : -1;
      const int io = tape->track(out);
      auto md = map.ptr(), cd = coords.ptr();
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        double* gm = im >= 0 ? tp.accum(im) : nullptr;
        double* gc = ic >= 0 ? tp.accum(ic) : nullptr;
        const double* mv = md->value.data();
        for (Index i = 0; i < p; ++i) {
          Corner cr[4];
          Index x0, y0;
          double ax, ay;
          bilinear_corners(cd->value[static_cast<std::size_t>(i * 2)],
                           cd->value[static_cast<std::size_t>(i * 2 + 1)], h, w, cr, &x0, &y0,
                           &ax, &ay);
          const double* gr = go + i * c;
          if (gm) {
            for (const Corner& k : cr) {
              if (k.cell < 0 || k.wgt == 0.0) continue;
              double* dst = gm + k.cell * c;
              for (Index j = 0; j < c; ++j) dst[j] += k.wgt * gr[j];
            }
          }
          if (gc) {
            // d(out)/dx = (1-ay)*(m01-m00) + ay*(m11-m10); analogous for y.
            auto cell_val = [&](int k, Index j) -> double {
              return cr[k].cell < 0 ? 0.0 : mv[cr[k].cell * c + j];
            };
            double gx = 0.0, gy = 0.0;
            for (Index j = 0; j < c; ++j) {
              const double m00 = cell_val(0, j), m01 = cell_val(1, j);
              const double m10 = cell_val(2, j), m11 = cell_val(3, j);
              gx += gr[j] * ((1.0 - ay) * (m01 - m00) + ay * (m11 - m10));
              gy += gr[j] * ((1.0 - ax) * (m10 - m00) + ax * (m11 - m01));
            }
            gc[i * 2] += gx;
            gc[i * 2 + 1] += gy;
          }
        }
      });
    }
  }
  return out;
}

Tensor deformable_attend(const Tensor& map, const Tensor& coords, const Tensor& weights,
                         Index n_queries, Index heads, Index points) {
  if (map.rank() != 3) throw ShapeError("deformable_attend: map must be H×W×C");
  const Index m = n_queries * heads * points;
  if (coords.rank() != 2 || coords.dim(1) != 2 || coords.dim(0) != m) {
    throw ShapeError("deformable_attend: coords must be (N*H*P)×2, got " +
                     shape_str(coords.shape()));
  }
  if (weights.numel() != m) {
    throw ShapeError("deformable_attend: weights must have N*H*P elements");
  }
  const Index h = map.dim(0), w = map.dim(1), c = map.dim(2);
  Tensor out({n_queries, heads * c});
  for (Index n = 0; n < n_queries; ++n) {
    for (Index hd = 0; hd < heads; ++hd) {
      double* dst = out.data() + n * heads * c + hd * c;
      for (Index pt = 0; pt < points; ++pt) {
        const Index s = (n * heads + hd) * points + pt;
        const double wgt = weights(s);
        Corner cr[4];
        Index x0, y0;
        double ax, ay;
        bilinear_corners(coords(s, 0), coords(s, 1), h, w, cr, &x0, &y0, &ax, &ay);
        for (const Corner& k : cr) {
          if (k.cell < 0 || k.wgt == 0.0) continue;
          const double* src = map.data() + k.cell * c;
          const double f = wgt * k.wgt;
          for (Index j = 0; j < c; ++j) dst[j] += f * src[j];
        }
      }
    }
  }
  if (Tape* tape = Tape::active()) {
    const bool fm = tape->flows(map), fc = tape->flows(coords), fw = tape->flows(weights);
    if (fm || fc || fw) {
      const int im = fm ? tape->track(map) : -1;
      const int ic = fc ? tape->track(coords) : -1;
      const int iw = fw ? tape->track(weights) : -1;
      const int io = tape->track(out);
      auto md = map.ptr(), cd = coords.ptr(), wd = weights.ptr();
      tape->record([=](Tape& tp) {
        const double* go = tp.grad_of(io);
        if (!go) return;
        double* gm = im >= 0 ? tp.accum(im) : nullptr;
        double* gc = ic >= 0 ? tp.accum(ic) : nullptr;
        double* gw = iw >= 0 ? tp.accum(iw) : nullptr;
        const double* mv = md->value.data();
        for (Index n = 0; n < n_queries; ++n) {
          for (Index hd = 0; hd < heads; ++hd) {
            const double* gr = go + n * heads * c + hd * c;
            for (Index pt = 0; pt < points; ++pt) {
              const Index s = (n * heads + hd) * points + pt;
              const double wgt = wd->value[static_cast<std::size_t>(s)];
              Corner cr[4];
              Index x0, y0;
              double ax, ay;
              bilinear_corners(cd->value[static_cast<std::size_t>(s * 2)],
                               cd->value[static_cast<std::size_t>(s * 2 + 1)], h, w, cr, &x0,
                               &y0, &ax, &ay);
              auto cell_val = [&](int k, Index j) -> double {
                return cr[k].cell < 0 ? 0.0 : mv[cr[k].cell * c + j];
              };
              if (gm && wgt != 0.0) {
                for (const Corner& k : cr) {
                  if (k.cell < 0 || k.wgt == 0.0) continue;
                  double* dst = gm + k.cell * c;
                  const double f = wgt * k.wgt;
                  for (Index j = 0; j < c; ++j) dst[j] += f * gr[j];
                }
              }
              if (gc || gw) {
                double gx = 0.0, gy = 0.0, gwgt = 0.0;
                for (Index j = 0; j < c; ++j) {
                  const double m00 = cell_val(0, j), m01 = cell_val(1, j);
                  const double m10 = cell_val(2, j), m11 = cell_val(3, j);
                  const double sample =
                      cr[0].wgt * m00 + cr[1].wgt * m01 + cr[2].wgt * m10 + cr[3].wgt * m11;
                  gx += gr[j] * ((1.0 - ay) * (m01 - m00) + ay * (m11 - m10));
                  gy += gr[j] * ((1.0 - ax) * (m10 - m00) + ax * (m11 - m01));
                  gwgt += gr[j] * sample;
                }
                if (gc) {
                  gc[s * 2] += wgt * gx;
                  gc[s * 2 + 1] += wgt * gy;
                }
                if (gw) gw[s] += gwgt;
              }
            }
          }
        }
      });
    }
  }
  return out;
}

Tensor pinhole_project(const Tensor& points, const Pinhole& cam) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ShapeError("pinhole_project: points must be P×3, got " + shape_str(points.shape()));
  }
  const Index p = points.dim(0);
  Tensor out({p, 2});
  for (Index i = 0; i < p; ++i) {
    const double wx = points(i, 0), wy = points(i, 1), wz = points(i, 2);
    const double xc = cam.r[0] * wx + cam.r[1] * wy + cam.r[2] * wz + cam.t[0];
    const double yc = cam.r[3] * wx + cam.r[4] * wy + cam.r[5] * wz + cam.t[1];
    const double zc = cam.r[6] * wx + cam.r[7] * wy + cam.r[8] * wz + cam.t[2];
    if (zc > cam.near) {
      out(i, 0) = cam.fx * xc / zc + cam.cx;
      out(i, 1) = cam.fy * yc / zc + cam.cy;
    }
  }
  if (Tape* tape = Tape::active(); tape && tape->flows(points)) {
    const int ip = tape->track(points);
    const int io = tape->track(out);
    auto pd = points.ptr();
    const Pinhole cc = cam;
    tape->record([=](Tape& tp) {
      const double* go = tp.grad_of(io);
      if (!go) return;
      double* g = tp.accum(ip);
      for (Index i = 0; i < p; ++i) {
        const double wx = pd->value[static_cast<std::size_t>(i * 3)];
        const double wy = pd->value[static_cast<std::size_t>(i * 3 + 1)];
        const double wz = pd->value[static_cast<std::size_t>(i * 3 + 2)];
        const double xc = cc.r[0] * wx + cc.r[1] * wy + cc.r[2] * wz + cc.t[0];
        const double yc = cc.r[3] * wx + cc.r[4] * wy + cc.r[5] * wz + cc.t[1];
        const double zc = cc.r[6] * wx + cc.r[7] * wy + cc.r[8] * wz + cc.t[2];
        if (zc <= cc.near) continue;
        const double gu = go[i * 2], gv = go[i * 2 + 1];
        const double inv_z2 = 1.0 / (zc * zc);
        for (int j = 0; j < 3; ++j) {
          const double du = cc.fx * (cc.r[j] * zc - xc * cc.r[6 + j]) * inv_z2;
          const double dv = cc.fy * (cc.r[3 + j] * zc - yc * cc.r[6 + j]) * inv_z2;
          g[i * 3 + j] += gu * du + gv * dv;
        }
      }
    });
  }
  return out;
}

std::vector<double> project_mask(const Tensor& points, const Pinhole& cam, Index img_h,
                                 Index img_w) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ShapeError("project_mask: points must be P×3");
  }
  const Index p = points.dim(0);
  std::vector<double> mask(static_cast<std::size_t>(p), 0.0);
  for (Index i = 0; i < p; ++i) {
    const double wx = points(i, 0), wy = points(i, 1), wz = points(i, 2);
    const double xc = cam.r[0] * wx + cam.r[1] * wy + cam.r[2] * wz + cam.t[0];
    const double yc = cam.r[3] * wx + cam.r[4] * wy + cam.r[5] * wz + cam.t[1];
    const double zc = cam.r[6] * wx + cam.r[7] * wy + cam.r[8] * wz + cam.t[2];
    if (zc <= cam.near) continue;
    const double u = cam.fx * xc / zc + cam.cx;
    const double v = cam.fy * yc / zc + cam.cy;
    if (u >= -0.5 && u <= img_w - 0.5 && v >= -0.5 && v <= img_h - 0.5) {
      mask[static_cast<std::size_t>(i)] = 1.0;
    }
  }
  return mask;
}

Tensor positional_features(const Tensor& coords, Index freqs) {
  if (coords.rank() != 2) throw ShapeError("positional_features: coords must be P×D");
  if (freqs < 1) throw ShapeError("positional_features: freqs must be >= 1");
  const Index p = coords.dim(0), d = coords.dim(1);
  Tensor out({p, d * 2 * freqs});
  constexpr double kPi = 3.14159265358979323846;
  for (Index i = 0; i < p; ++i) {
    double* dst = out.data() + i * d * 2 * freqs;
    for (Index j = 0; j < d; ++j) {
      const double x = coords(i, j);
      for (Index k = 0; k < freqs; ++k) {
        const double arg = std::ldexp(kPi, static_cast<int>(k)) * x;
        *dst++ = std::sin(arg);
        *dst++ = std::cos(arg);
      }
    }
  }
  return out;  // non-learned features, never recorded
}

}  // namespace ops
}  // namespace insfusion
