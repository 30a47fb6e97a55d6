#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "insfusion/gradcheck.hpp"
#include "insfusion/ops.hpp"
#include "insfusion/serialize.hpp"
#include "insfusion/tensor.hpp"

using namespace insfusion;

TEST_CASE("matmul identity and hand-computed cases") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {3, 4, 5, 6});
  Tensor r = ops::matmul(eye, b);
  CHECK(r.vec() == b.vec());

  Tensor a({1, 2}, {1, 2});
  Tensor c({2, 1}, {3, 4});
  CHECK(ops::matmul(a, c).item() == doctest::Approx(11.0).epsilon(1e-14));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({2, 3});
  CHECK_THROWS_WITH_AS(ops::matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("softmax symmetry and stability") {
  Tensor x({3}, {0, 0, 0});
  Tensor y = ops::softmax(x, 0);
  for (Index i = 0; i < 3; ++i) CHECK(y(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor big({2}, {1000.0, 0.0});
  Tensor yb = ops::softmax(big, 0);
  CHECK(std::abs(yb(0) - 1.0) < 1e-12);
  CHECK(std::abs(yb(1)) < 1e-12);

  // rows sum to 1 within 1e-12
  auto rng = make_rng(7);
  Tensor r = Tensor::randn({5, 6}, rng, 3.0);
  Tensor sr = ops::softmax(r, 1);
  for (Index i = 0; i < 5; ++i) {
    double s = 0;
    for (Index j = 0; j < 6; ++j) s += sr(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("bilinear sampling at grid points and midpoints") {
  auto rng = make_rng(3);
  Tensor map = Tensor::randn({5, 6, 3}, rng);
  Tensor coords({3, 2}, {3, 2, 0, 0, 5, 4});
  Tensor out = ops::bilinear_sample(map, coords);
  for (Index c = 0; c < 3; ++c) {
    CHECK(std::abs(out(0, c) - map(2, 3, c)) < 1e-12);
    CHECK(std::abs(out(1, c) - map(0, 0, c)) < 1e-12);
    CHECK(std::abs(out(2, c) - map(4, 5, c)) < 1e-12);
  }

  Tensor two({1, 2, 1}, {4, 8});
  Tensor mid({1, 2}, {0.5, 0.0});
  CHECK(ops::bilinear_sample(two, mid).item() == doctest::Approx(6.0).epsilon(1e-15));

  // outside the border band -> zeros
  Tensor far({2, 2}, {-2.0, 1.0, 8.5, 1.0});
  Tensor z = ops::bilinear_sample(two, far);
  CHECK(z(0, 0) == 0.0);
  CHECK(z(1, 0) == 0.0);
}

TEST_CASE("bilinear midpoint is the four-cell mean") {
  auto rng = make_rng(11);
  Tensor map = Tensor::randn({4, 4, 2}, rng);
  Tensor mid({1, 2}, {1.5, 2.5});
  Tensor out = ops::bilinear_sample(map, mid);
  for (Index c = 0; c < 2; ++c) {
    const double mean = 0.25 * (map(2, 1, c) + map(2, 2, c) + map(3, 1, c) + map(3, 2, c));
    CHECK(std::abs(out(0, c) - mean) < 1e-12);
  }
}

TEST_CASE("tape: fresh tapes do not corrupt gradients") {
  auto rng = make_rng(5);
  Tensor w = Tensor::randn({3, 3}, rng);
  w.set_requires_grad(true);
  Tensor x = Tensor::randn({2, 3}, rng);

  std::vector<double> g1, g2;
  {
    Tape tape;
    Tensor loss = ops::reduce_sum(ops::matmul(x, w));
    tape.backward(loss);
    g1 = tape.grad(w);
  }
  {
    Tape tape;
    Tensor loss = ops::reduce_sum(ops::matmul(x, w));
    tape.backward(loss);
    g2 = tape.grad(w);
  }
  CHECK(g1 == g2);
}

TEST_CASE("tape: detached tensors receive no gradient") {
  auto rng = make_rng(6);
  Tensor w = Tensor::randn({2, 2}, rng);
  w.set_requires_grad(true);
  Tensor d = w.detach();
  Tape tape;
  Tensor loss = ops::reduce_sum(ops::matmul(d, w));
  tape.backward(loss);
  auto gd = tape.grad(d);
  for (double v : gd) CHECK(v == 0.0);
  auto gw = tape.grad(w);
  bool any = false;
  for (double v : gw) any = any || v != 0.0;
  CHECK(any);
}

TEST_CASE("determinism: same seed gives bitwise-equal outputs and gradients") {
  auto run = [] {
    auto rng = make_rng(42);
    Tensor a = Tensor::randn({4, 4}, rng);
    Tensor b = Tensor::randn({4, 4}, rng);
    a.set_requires_grad(true);
    Tape tape;
    Tensor loss = ops::reduce_sum(ops::gelu(ops::matmul(a, b)));
    tape.backward(loss);
    auto g = tape.grad(a);
    g.push_back(loss.item());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("segment_max: empty segments are zero, values are true maxima") {
  Tensor x({4, 2}, {1, -5, 3, -7, 2, -6, 0, -8});
  std::vector<Index> seg = {0, 0, 2, 2};
  Tensor out = ops::segment_max(x, seg, 3);
  CHECK(out(0, 0) == 3.0);
  CHECK(out(0, 1) == -5.0);
  CHECK(out(1, 0) == 0.0);  // empty segment
  CHECK(out(1, 1) == 0.0);
  CHECK(out(2, 0) == 2.0);
  CHECK(out(2, 1) == -6.0);
}

TEST_CASE("positional features are injective on distinct grid cells") {
  Tensor a({2, 2}, {0.25, 0.5, 0.3, 0.5});
  Tensor f = ops::positional_features(a, 6);
  bool differ = false;
  for (Index j = 0; j < f.dim(1); ++j) differ = differ || f(0, j) != f(1, j);
  CHECK(differ);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto rng = make_rng(9);
  ParamStore store;
  store.add("a.w", Tensor::randn({3, 4}, rng));
  store.add("a.b", Tensor::randn({1, 4}, rng));
  store.add("b.k", Tensor::randn({2, 2, 2, 2}, rng));
  const std::string path = "test_ckpt_roundtrip.insf";
  write_checkpoint(path, store);
  auto loaded = read_checkpoint(path);
  REQUIRE(loaded.size() == 3);
  for (const auto& name : store.names()) {
    REQUIRE(loaded.count(name) == 1);
    CHECK(loaded.at(name).shape() == store.get(name).shape());
    CHECK(loaded.at(name).vec() == store.get(name).vec());
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic and truncation") {
  auto rng = make_rng(10);
  ParamStore store;
  store.add("x", Tensor::randn({5}, rng));
  const std::string path = "test_ckpt_corrupt.insf";
  write_checkpoint(path, store);
  std::string data = read_file(path);

  std::string bad = data;
  bad[0] = 'X';
  write_file(path, bad);
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);

  write_file(path, data.substr(0, data.size() - 1));
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("gradient suite: tensor_core primitives vs central finite differences") {
  for (const auto& spec : gradcheck::primitive_specs()) {
    auto r = gradcheck::run_spec(spec, 1234);
    INFO(spec.name, " max rel err ", r.max_rel_err);
    CHECK(r.pass);
  }
}
