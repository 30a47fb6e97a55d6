#pragma once

#include <functional>
#include <string>
#include <vector>

#include "insfusion/tensor.hpp"

namespace insfusion {
namespace gradcheck {

// One randomized gradient-check instance: differentiable inputs plus a
// scalar-valued forward closure over them (and any constants).
struct Case {
  std::vector<Tensor> inputs;
  std::function<Tensor()> forward;
};

struct Spec {
  std::string name;
  std::function<Case(std::mt19937_64&)> make;
  double tol = 1e-5;
  int cases = 5;
  // Central-difference coordinates evaluated per input (-1 = all).
  Index max_coords = -1;
};

struct Result {
  std::string name;
  double max_rel_err = 0.0;
  int cases = 0;
  bool pass = false;
  double tol = 0.0;
};

// Central finite differences (step h) against the tape gradient; returns the
// max of |analytic - numeric| / max(|analytic|, |numeric|, 1).
double check_case(const Case& c, std::mt19937_64& rng, Index max_coords, double h = 1e-6);

Result run_spec(const Spec& spec, std::uint64_t seed);

// The tensor_core primitive suite.
std::vector<Spec> primitive_specs();

}  // namespace gradcheck
}  // namespace insfusion
