#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tkd/encoder.hpp"
#include "tkd/tensor.hpp"

namespace tkd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// (f(θ+h) − f(θ−h)) / 2h for every coordinate of every tensor in `params`.
/// Per coordinate the error is |analytic − numeric| / max(1e-8, |analytic| +
/// |numeric|); the maximum is returned. `loss_fn` must rebuild the loss from
/// the current parameter values on every call. Results are meaningless at
/// nonsmooth points (|θ| at 0, relu kinks); callers pick inputs away from them.
GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                  double h);

struct ModelGradCheck {
  ModelConfig config{2, 2, 8, 16, 20, 6, 2, 1e-5};
  std::size_t batch = 4;
  std::size_t seq_len = 6;
  double h = 1e-4;
  std::uint64_t seed = 1;
};

/// Whole-model check on a random batch (with padded tail positions) against
/// random soft targets, through the task and distillation losses combined at
/// alpha = 0.5.
GradCheckResult model_gradcheck(const ModelGradCheck& setup);

}  // namespace tkd
