#pragma once

#include <string>

#include "xbert/ops.hpp"
#include "xbert/params.hpp"
#include "xbert/rng.hpp"

namespace xbert {

struct Dense {
  Tensor w, b;

  Dense() = default;
  Dense(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
    w = param_normal(store, name + ".w", {in, out}, rng);
    b = param_zeros(store, name + ".b", {out});
  }

  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

// Layer norm with learnable scale and shift, composed from primitives.
struct Norm {
  Tensor gamma, beta;
  float eps = 1e-5f;

  Norm() = default;
  Norm(ParamStore& store, const std::string& name, int dim) {
    gamma = param_ones(store, name + ".gamma", {dim});
    beta = param_zeros(store, name + ".beta", {dim});
  }

  Tensor forward(const Tensor& x) const {
    return add_rowvec(mul_rowvec(layer_norm_rows(x, eps), gamma), beta);
  }
};

}  // namespace xbert
