#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "xbert/tensor.hpp"

// Central finite-difference oracle. The quotient arithmetic runs in double;
// the function under test stays fp32 like the engine itself.
namespace gradcheck {

struct Result {
  double rel_err = 0.0;
  bool ok = false;
};

// Analytic gradient of `loss_fn` (which must rebuild the graph on every
// call) w.r.t. each tensor in `leaves`, compared against central finite
// differences. Norm-based symmetric relative error.
inline Result check(const std::vector<xbert::Tensor>& leaves,
                    const std::function<xbert::Tensor()>& loss_fn, double h = 1e-3,
                    double tol = 1e-3) {
  using namespace xbert;

  // Analytic pass.
  for (const auto& t : leaves) const_cast<Tensor&>(t).zero_grad();
  std::vector<std::vector<float>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (const auto& t : leaves) analytic.push_back(t.grad());
  }

  // Finite differences, one element at a time.
  double num = 0.0, denom_a = 0.0, denom_f = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor t = leaves[li];
    for (size_t j = 0; j < t.values().size(); ++j) {
      const float saved = t.values()[j];
      t.values()[j] = static_cast<float>(saved + h);
      const double f_plus = static_cast<double>(loss_fn().item());
      t.values()[j] = static_cast<float>(saved - h);
      const double f_minus = static_cast<double>(loss_fn().item());
      t.values()[j] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double ad = static_cast<double>(analytic[li][j]);
      num += (fd - ad) * (fd - ad);
      denom_a += ad * ad;
      denom_f += fd * fd;
    }
  }
  Result r;
  const double scale = std::max({std::sqrt(denom_a), std::sqrt(denom_f), 1e-8});
  r.rel_err = std::sqrt(num) / scale;
  r.ok = r.rel_err < tol;
  return r;
}

}  // namespace gradcheck
