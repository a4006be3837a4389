#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "st/error.hpp"
#include "st/tensor.hpp"

namespace st {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for one parameter tensor.
template <class T>
struct AdamSlot {
  std::vector<T> m, v;
};

template <class T>
struct AdamState {
  std::vector<AdamSlot<T>> slots;
  std::size_t step = 0;
};

// One bias-corrected Adam update. `frozen_rows[i]` rows of params[i] (e.g. the
// PAD embedding row) are left untouched. Gradients are consumed and zeroed.
template <class T>
void adam_step(std::vector<Tensor<T>*>& params, AdamState<T>& state, const AdamOptions& opt,
               const std::vector<long>& frozen_rows = {}) {
  if (state.slots.empty()) {
    for (auto* p : params) state.slots.push_back({std::vector<T>(p->size()), std::vector<T>(p->size())});
  }
  if (state.slots.size() != params.size()) throw Error(ErrorKind::internal, "adam state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const T b1 = T(opt.beta1), b2 = T(opt.beta2);
  const T step_size = T(opt.lr / bc1);
  const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
  const T eps = T(opt.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& slot = state.slots[k];
    if (slot.m.size() != p.size() || slot.v.size() != p.size())
      throw Error(ErrorKind::internal, "adam moments do not match parameter " + std::to_string(k));
    if (!p.has_grad()) p.ensure_grad();
    auto g = p.grad();
    auto data = p.data();
    std::size_t skip_begin = 0, skip_end = 0;
    if (k < frozen_rows.size() && frozen_rows[k] >= 0) {
      skip_begin = static_cast<std::size_t>(frozen_rows[k]) * p.cols();
      skip_end = skip_begin + p.cols();
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (i >= skip_begin && i < skip_end) {
        g[i] = T(0);
        continue;
      }
      slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g[i];
      slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g[i] * g[i];
      data[i] -= step_size * slot.m[i] / (std::sqrt(slot.v[i]) * inv_sqrt_bc2 + eps);
      g[i] = T(0);
    }
  }
}

}  // namespace st
