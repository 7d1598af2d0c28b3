// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient oracle (test-only). Independent of the
// backward pass it checks: losses are recomputed forward-only at perturbed
// parameter values.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vtlab/rng.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab::testing {

using DTensor = TensorT<double>;

struct FdReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

// make_loss() must rebuild the graph from the current parameter values and
// return the scalar loss tensor. Checks up to samples_per_param entries of
// each parameter against central differences.
inline FdReport fd_check(std::vector<DTensor> params,
                         const std::function<DTensor()>& make_loss, Rng& rng,
                         size_t samples_per_param = 6, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  DTensor loss = make_loss();
  loss.backward();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    grads.emplace_back(p.has_grad() ? p.grad_view()
                                    : std::vector<double>(p.size(), 0.0));
  }

  FdReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const size_t n = p.size();
    const size_t samples = std::min(samples_per_param, n);
    for (size_t s = 0; s < samples; ++s) {
      const size_t j = samples == n ? s : rng.uniform_index(n);
      const double orig = p.data()[j];
      p.data()[j] = orig + h;
      const double up = make_loss().item();
      p.data()[j] = orig - h;
      const double down = make_loss().item();
      p.data()[j] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double g = grads[pi][j];
      const double err = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.checked;
    }
  }
  for (auto& p : params) p.zero_grad();
  return report;
}

}  // namespace vtlab::testing
