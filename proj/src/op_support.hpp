#pragma once

#include "enclab/tensor.hpp"

namespace enclab::ops::detail {

inline bool grad_needed_for(std::initializer_list<const Tensor*> ins) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// Dual f32 / shadow-f64 output store; the shadow is kept only under
// PreciseEval.
struct OutWriter {
  explicit OutWriter(Tensor& out) : f32(out.data()) {
    if (PreciseEval::active()) {
      out.node()->data64.resize(static_cast<size_t>(out.numel()));
      f64 = out.node()->data64.data();
    }
  }
  void set(int64_t i, double v) {
    f32[i] = static_cast<float>(v);
    if (f64) f64[i] = v;
  }
  float* f32;
  double* f64 = nullptr;
};

}  // namespace enclab::ops::detail
