#include "insfusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "insfusion/ops.hpp"

namespace insfusion {
namespace gradcheck {

double check_case(const Case& c, std::mt19937_64& rng, Index max_coords, double h) {
  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    for (const Tensor& t : c.inputs) const_cast<Tensor&>(t).set_requires_grad(true);
    Tape tape;
    Tensor s = c.forward();
    if (s.numel() != 1) throw ShapeError("gradcheck: forward must produce a scalar");
    tape.backward(s);
    for (const Tensor& t : c.inputs) analytic.push_back(tape.grad(t));
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    Tensor t = c.inputs[k];
    const Index n = t.numel();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords > 0 && max_coords < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    for (Index j : coords) {
      const double orig = t(j);
      t(j) = orig + h;
      const double fp = c.forward().item();
      t(j) = orig - h;
      const double fm = c.forward().item();
      t(j) = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][static_cast<std::size_t>(j)];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

Result run_spec(const Spec& spec, std::uint64_t seed) {
  Result r;
  r.name = spec.name;
  r.tol = spec.tol;
  for (int i = 0; i < spec.cases; ++i) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(i));
    Case c = spec.make(rng);
    r.max_rel_err = std::max(r.max_rel_err, check_case(c, rng, spec.max_coords));
    ++r.cases;
  }
  r.pass = r.max_rel_err < spec.tol;
  return r;
}

namespace {

// Random weights make the check scalar sensitive to every output coordinate.
std::function<Tensor(const Tensor&)> make_weigher(const Shape& out_shape,
                                                  std::mt19937_64& rng) {
  Tensor w = Tensor::uniform(out_shape, rng, 0.5, 1.5);
  return [w](const Tensor& out) { return ops::reduce_sum(ops::mul(out, w)); };
}

// Values bounded away from zero, for kinked activations.
Tensor randn_away_from_zero(const Shape& s, std::mt19937_64& rng, double margin = 0.05) {
  Tensor t = Tensor::randn(s, rng);
  for (auto& v : t.vec()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

// Coordinates pushed off the integer lattice, where bilinear weights kink.
void off_lattice(Tensor& coords) {
  for (auto& v : coords.vec()) {
    const double fr = v - std::floor(v);
    if (fr < 0.05) v += 0.1;
    if (fr > 0.95) v -= 0.1;
  }
}

template <typename F>
Spec unary_spec(std::string name, Shape shape, F op, bool avoid_zero = false,
                Shape out_shape = {}) {
  if (out_shape.empty()) out_shape = shape;
  return {std::move(name), [shape, out_shape, op, avoid_zero](std::mt19937_64& rng) {
            Tensor a = avoid_zero ? randn_away_from_zero(shape, rng) : Tensor::randn(shape, rng);
            auto weigh = make_weigher(out_shape, rng);
            return Case{{a}, [a, op, weigh] { return weigh(op(a)); }};
          }};
}

}  // namespace

std::vector<Spec> primitive_specs() {
  std::vector<Spec> specs;

  specs.push_back({"matmul", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({5, 7}, rng);
                     Tensor b = Tensor::randn({7, 3}, rng);
                     auto weigh = make_weigher({5, 3}, rng);
                     return Case{{a, b}, [=] { return weigh(ops::matmul(a, b)); }};
                   }});

  specs.push_back({"add", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({4, 6}, rng);
                     Tensor b = Tensor::randn({4, 6}, rng);
                     auto weigh = make_weigher({4, 6}, rng);
                     return Case{{a, b}, [=] { return weigh(ops::add(a, b)); }};
                   }});

  specs.push_back({"add_bias_row", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({5, 4}, rng);
                     Tensor b = Tensor::randn({1, 4}, rng);
                     auto weigh = make_weigher({5, 4}, rng);
                     return Case{{a, b}, [=] { return weigh(ops::add(a, b)); }};
                   }});

  specs.push_back({"mul", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({3, 8}, rng);
                     Tensor b = Tensor::randn({3, 8}, rng);
                     auto weigh = make_weigher({3, 8}, rng);
                     return Case{{a, b}, [=] { return weigh(ops::mul(a, b)); }};
                   }});

  specs.push_back(unary_spec("scale_add_scalar", {2, 9}, [](const Tensor& a) {
    return ops::add_scalar(ops::scale(a, -1.7), 0.3);
  }));
  specs.push_back(unary_spec("relu", {4, 5}, [](const Tensor& a) { return ops::relu(a); }, true));
  specs.push_back(unary_spec("gelu", {4, 5}, [](const Tensor& a) { return ops::gelu(a); }));
  specs.push_back(
      unary_spec("sigmoid", {4, 5}, [](const Tensor& a) { return ops::sigmoid(a); }));
  specs.push_back(unary_spec("tanh", {4, 5}, [](const Tensor& a) { return ops::tanh_op(a); }));
  specs.push_back(
      unary_spec("softplus", {4, 5}, [](const Tensor& a) { return ops::softplus(a); }));
  specs.push_back(
      unary_spec("softmax_last", {4, 6}, [](const Tensor& a) { return ops::softmax(a, 1); }));
  specs.push_back(
      unary_spec("softmax_axis0", {5, 3}, [](const Tensor& a) { return ops::softmax(a, 0); }));
  specs.push_back(unary_spec(
      "transpose2d", {3, 7}, [](const Tensor& a) { return ops::transpose2d(a); }, false,
      {7, 3}));

  specs.push_back({"linear", [](std::mt19937_64& rng) {
                     Tensor x = Tensor::randn({4, 6}, rng);
                     Tensor w = Tensor::randn({6, 3}, rng);
                     Tensor b = Tensor::randn({1, 3}, rng);
                     auto weigh = make_weigher({4, 3}, rng);
                     return Case{{x, w, b}, [=] { return weigh(ops::linear(x, w, b)); }};
                   }});

  specs.push_back({"layer_norm", [](std::mt19937_64& rng) {
                     Tensor x = Tensor::randn({4, 8}, rng);
                     Tensor g = Tensor::randn({8}, rng, 0.5, 1.0);
                     Tensor b = Tensor::randn({8}, rng, 0.5);
                     auto weigh = make_weigher({4, 8}, rng);
                     return Case{{x, g, b}, [=] { return weigh(ops::layer_norm(x, g, b)); }};
                   }});

  specs.push_back({"reshape_concat_slice", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({3, 4}, rng);
                     Tensor b = Tensor::randn({2, 4}, rng);
                     auto weigh = make_weigher({4, 3}, rng);
                     return Case{{a, b}, [=] {
                                   Tensor cat = ops::concat({a, b}, 0);
                                   Tensor sl = ops::slice(cat, 0, 1, 3);
                                   return weigh(ops::reshape(sl, {4, 3}));
                                 }};
                   }});

  specs.push_back({"concat_axis1", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({3, 2}, rng);
                     Tensor b = Tensor::randn({3, 5}, rng);
                     auto weigh = make_weigher({3, 7}, rng);
                     return Case{{a, b}, [=] { return weigh(ops::concat({a, b}, 1)); }};
                   }});

  specs.push_back({"reduce_sum_mean", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({4, 5}, rng);
                     return Case{{a}, [a] {
                                   return ops::add(ops::reduce_sum(a), ops::reduce_mean(a));
                                 }};
                   }});

  specs.push_back({"reduce_sum_axis", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({4, 3, 2}, rng);
                     auto weigh = make_weigher({4, 2}, rng);
                     return Case{{a}, [=] { return weigh(ops::reduce_sum_axis(a, 1)); }};
                   }});

  specs.push_back({"gather_repeat_sumgroups", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({5, 4}, rng);
                     std::vector<Index> idx = {4, 0, 2, 2};
                     auto weigh = make_weigher({6, 4}, rng);
                     return Case{{a}, [=] {
                                   Tensor g = ops::gather_rows(a, idx);
                                   Tensor rep = ops::repeat_rows(g, 3);
                                   return weigh(ops::sum_groups(rep, 2));
                                 }};
                   }});

  specs.push_back({"segment_max", [](std::mt19937_64& rng) {
                     Tensor a = Tensor::randn({9, 4}, rng);
                     std::vector<Index> seg = {0, 1, 1, 3, 0, 2, 2, 1, 3};
                     auto weigh = make_weigher({5, 4}, rng);
                     return Case{{a}, [=] { return weigh(ops::segment_max(a, seg, 5)); }};
                   }});

  specs.push_back({"conv2d_3x3_s1", [](std::mt19937_64& rng) {
                     Tensor x = Tensor::randn({6, 7, 3}, rng);
                     Tensor w = Tensor::randn({3, 3, 3, 4}, rng, 0.4);
                     Tensor b = Tensor::randn({4}, rng, 0.2);
                     auto weigh = make_weigher({6, 7, 4}, rng);
                     return Case{{x, w, b}, [=] { return weigh(ops::conv2d_3x3(x, w, b, 1)); }};
                   }});

  specs.push_back({"conv2d_3x3_s2", [](std::mt19937_64& rng) {
                     Tensor x = Tensor::randn({8, 6, 2}, rng);
                     Tensor w = Tensor::randn({3, 3, 2, 3}, rng, 0.4);
                     Tensor b = Tensor::randn({3}, rng, 0.2);
                     auto weigh = make_weigher({4, 3, 3}, rng);
                     return Case{{x, w, b}, [=] { return weigh(ops::conv2d_3x3(x, w, b, 2)); }};
                   }});

  specs.push_back({"bilinear_sample", [](std::mt19937_64& rng) {
                     Tensor map = Tensor::randn({7, 9, 3}, rng);
                     Tensor coords = Tensor::uniform({6, 2}, rng, -1.3, 9.3);
                     off_lattice(coords);
                     auto weigh = make_weigher({6, 3}, rng);
                     return Case{{map, coords},
                                 [=] { return weigh(ops::bilinear_sample(map, coords)); }};
                   }});

  specs.push_back({"deformable_attend", [](std::mt19937_64& rng) {
                     const Index n = 3, hd = 2, pt = 2;
                     Tensor map = Tensor::randn({6, 6, 4}, rng);
                     Tensor coords = Tensor::uniform({n * hd * pt, 2}, rng, 0.2, 4.8);
                     off_lattice(coords);
                     Tensor wts = Tensor::uniform({n * hd * pt}, rng, 0.1, 1.0);
                     auto weigh = make_weigher({n, hd * 4}, rng);
                     return Case{{map, coords, wts}, [=] {
                                   return weigh(ops::deformable_attend(map, coords, wts, n, hd, pt));
                                 }};
                   }});

  specs.push_back({"pinhole_project", [](std::mt19937_64& rng) {
                     ops::Pinhole cam;
                     cam.fx = 50.0;
                     cam.fy = 55.0;
                     cam.cx = 32.0;
                     cam.cy = 24.0;
                     for (int i = 0; i < 9; ++i) cam.r[i] = (i % 4 == 0) ? 1.0 : 0.0;
                     cam.t[0] = cam.t[1] = cam.t[2] = 0.0;
                     Tensor pts = Tensor::uniform({5, 3}, rng, -2.0, 2.0);
                     for (Index i = 0; i < 5; ++i) pts(i, 2) = 3.0 + std::abs(pts(i, 2));
                     auto weigh = make_weigher({5, 2}, rng);
                     return Case{{pts}, [=] { return weigh(ops::pinhole_project(pts, cam)); }};
                   }});

  specs.push_back({"scaled_dot_attention", [](std::mt19937_64& rng) {
                     Tensor q = Tensor::randn({4, 6}, rng);
                     Tensor k = Tensor::randn({5, 6}, rng);
                     Tensor v = Tensor::randn({5, 3}, rng);
                     auto weigh = make_weigher({4, 3}, rng);
                     return Case{{q, k, v},
                                 [=] { return weigh(ops::scaled_dot_attention(q, k, v)); }};
                   }});

  specs.push_back({"cross_entropy", [](std::mt19937_64& rng) {
                     Tensor logits = Tensor::randn({6, 4}, rng, 1.5);
                     std::vector<Index> labels(6);
                     std::vector<double> weights(6);
                     std::uniform_int_distribution<Index> li(0, 3);
                     std::uniform_real_distribution<double> wi(0.1, 1.0);
                     for (int i = 0; i < 6; ++i) {
                       labels[static_cast<std::size_t>(i)] = li(rng);
                       weights[static_cast<std::size_t>(i)] = wi(rng);
                     }
                     return Case{{logits}, [logits, labels, weights] {
                                   return ops::cross_entropy(logits, labels, weights);
                                 }};
                   }});

  specs.push_back({"smooth_l1", [](std::mt19937_64& rng) {
                     Tensor pred = Tensor::randn({5, 8}, rng);
                     Tensor target = Tensor::randn({5, 8}, rng);
                     // keep |diff| away from the beta kink
                     for (Index i = 0; i < pred.numel(); ++i) {
                       const double d = pred(i) - target(i);
                       if (std::abs(std::abs(d) - 1.0) < 0.02) pred(i) += 0.05;
                     }
                     return Case{{pred}, [pred, target] { return ops::smooth_l1(pred, target); }};
                   }});

  specs.push_back({"gaussian_focal", [](std::mt19937_64& rng) {
                     Tensor logits = Tensor::randn({6, 6}, rng, 1.2);
                     Tensor target({6, 6});
                     std::uniform_real_distribution<double> u(0.0, 1.0);
                     for (auto& v : target.vec()) {
                       const double r = u(rng);
                       v = r > 0.9 ? 1.0 : r * 0.8;
                     }
                     return Case{{logits}, [logits, target] {
                                   return ops::gaussian_focal(ops::sigmoid(logits), target);
                                 }};
                   }});

  return specs;
}

}  // namespace gradcheck
}  // namespace insfusion
