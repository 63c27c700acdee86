#include "enclab/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "op_support.hpp"

namespace enclab {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0)
      throw std::invalid_argument("tensor shape has non-positive extent " +
                                  shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.node_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor data size " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (!node_ || node_->numel() != 1)
    throw std::runtime_error("item() requires a scalar tensor, got " +
                             (node_ ? shape_str(node_->shape)
                                    : std::string("undefined")));
  return node_->data[0];
}

double Tensor::item64() const {
  if (!node_ || node_->numel() != 1)
    throw std::runtime_error("item64() requires a scalar tensor, got " +
                             (node_ ? shape_str(node_->shape)
                                    : std::string("undefined")));
  return std::isnan(node_->scalar64) ? double(node_->data[0]) : node_->scalar64;
}

std::span<const float> Tensor::grad() const {
  if (!has_grad())
    throw std::runtime_error("tensor has no gradient; run backward first");
  return node_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad())
    throw std::runtime_error("tensor has no gradient; run backward first");
  return Tensor::from_data(node_->shape, node_->grad);
}

// ---------------------------------------------------------------------------
// PreciseEval

namespace {
thread_local bool g_precise_eval = false;
}

PreciseEval::PreciseEval() : prev_(g_precise_eval) { g_precise_eval = true; }
PreciseEval::~PreciseEval() { g_precise_eval = prev_; }
bool PreciseEval::active() { return g_precise_eval; }

// ---------------------------------------------------------------------------
// GradTape

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::GradTape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

GradTape::~GradTape() {
  // Drop accumulated gradients so the next tape starts clean.
  for (auto& e : entries_) {
    e.out->grad.clear();
    for (auto& in : e.inputs) in->grad.clear();
  }
  g_active_tape = prev_;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::shared_ptr<detail::TensorNode> out,
                      std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                      std::function<void()> fn) {
  entries_.push_back(Entry{std::move(out), std::move(inputs), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::runtime_error("backward requires a scalar loss, got " +
                             (loss.defined() ? shape_str(loss.shape())
                                             : std::string("undefined")));
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->out->grad.empty()) it->fn();
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

using detail::OutWriter;

namespace {

bool grad_needed(std::initializer_list<const Tensor*> ins) {
  return detail::grad_needed_for(ins);
}

void mark_result(Tensor& out) { out.set_requires_grad(true); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto* an_ = a.node();
  const auto* bn_ = b.node();
  OutWriter w(out);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) w.set(i, an_->value64(i) + bn_->value64(i));
  if (n == 1) out.node()->set_scalar64(a.item64() + b.item64());

  if (grad_needed({&a, &b})) {
    mark_result(out);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    GradTape::active()->record(on, {an, bn}, [=]() {
      const float* g = on->grad.data();
      if (ga) {
        an->ensure_grad();
        for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bn->grad[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto* an_ = a.node();
  const auto* bn_ = b.node();
  OutWriter w(out);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) w.set(i, an_->value64(i) - bn_->value64(i));
  if (n == 1) out.node()->set_scalar64(a.item64() - b.item64());

  if (grad_needed({&a, &b})) {
    mark_result(out);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    GradTape::active()->record(on, {an, bn}, [=]() {
      const float* g = on->grad.data();
      if (ga) {
        an->ensure_grad();
        for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bn->grad[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto* an_ = a.node();
  const auto* bn_ = b.node();
  OutWriter w(out);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) w.set(i, an_->value64(i) * bn_->value64(i));
  if (n == 1) out.node()->set_scalar64(a.item64() * b.item64());

  if (grad_needed({&a, &b})) {
    mark_result(out);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    GradTape::active()->record(on, {an, bn}, [=]() {
      const float* g = on->grad.data();
      if (ga) {
        an->ensure_grad();
        for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->data[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto* an_ = a.node();
  OutWriter w(out);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) w.set(i, an_->value64(i) * double(c));
  if (n == 1) out.node()->set_scalar64(a.item64() * double(c));

  if (grad_needed({&a})) {
    mark_result(out);
    auto an = a.node_ptr(), on = out.node_ptr();
    GradTape::active()->record(on, {an}, [=]() {
      an->ensure_grad();
      const float* g = on->grad.data();
      for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0))
    throw std::invalid_argument("add_bias: incompatible shapes " +
                                shape_str(x.shape()) + " vs " +
                                shape_str(bias.shape()));
  const int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  const auto* bn_ = bias.node();
  OutWriter w(out);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      w.set(i * n + j, xn_->value64(i * n + j) + bn_->value64(j));

  if (grad_needed({&x, &bias})) {
    mark_result(out);
    auto xn = x.node_ptr(), bn = bias.node_ptr(), on = out.node_ptr();
    bool gx = x.requires_grad(), gb = bias.requires_grad();
    GradTape::active()->record(on, {xn, bn}, [=]() {
      const float* g = on->grad.data();
      if (gx) {
        xn->ensure_grad();
        for (int64_t i = 0; i < m * n; ++i) xn->grad[i] += g[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (int64_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < m; ++i) acc += g[i * n + j];
          bn->grad[j] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

namespace {

// C[m,n] (+)= A[m,k] * B[k,n], 64-bit accumulation, f32 in/out.
void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  std::vector<double> row(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    if (accumulate) {
      for (int64_t j = 0; j < n; ++j) row[j] = c[i * n + j];
    } else {
      for (int64_t j = 0; j < n; ++j) row[j] = 0.0;
    }
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const float* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    for (int64_t j = 0; j < n; ++j) c[i * n + j] = static_cast<float>(row[j]);
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T, f32 in/out.
void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      const float* arow = a + i * k;
      const float* brow = b + j * k;
      for (int64_t p = 0; p < k; ++p) acc += double(arow[p]) * brow[p];
      c[i * n + j] = static_cast<float>(acc);
    }
  }
}

// C[k,n] (+)= A[m,k]^T * B[m,n], f32 in/out.
void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  std::vector<double> row(static_cast<size_t>(n));
  for (int64_t p = 0; p < k; ++p) {
    if (accumulate) {
      for (int64_t j = 0; j < n; ++j) row[j] = c[p * n + j];
    } else {
      for (int64_t j = 0; j < n; ++j) row[j] = 0.0;
    }
    for (int64_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const float* brow = b + i * n;
      for (int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    for (int64_t j = 0; j < n; ++j) c[p * n + j] = static_cast<float>(row[j]);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  const auto* an_ = a.node();
  const auto* bn_ = b.node();
  OutWriter w(out);
  {
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) row[j] = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        const double av = an_->value64(i * k + p);
        for (int64_t j = 0; j < n; ++j) row[j] += av * bn_->value64(p * n + j);
      }
      for (int64_t j = 0; j < n; ++j) w.set(i * n + j, row[j]);
    }
  }

  if (grad_needed({&a, &b})) {
    mark_result(out);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    GradTape::active()->record(on, {an, bn}, [=]() {
      const float* g = on->grad.data();
      if (ga) {  // dA = dC * B^T
        an->ensure_grad();
        gemm_nt(g, bn->data.data(), an->grad.data(), m, n, k, true);
      }
      if (gb) {  // dB = A^T * dC
        bn->ensure_grad();
        gemm_tn(an->data.data(), g, bn->grad.data(), m, k, n, true);
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: inner dimensions disagree " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  const auto* an_ = a.node();
  const auto* bn_ = b.node();
  OutWriter w(out);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p)
        acc += an_->value64(i * k + p) * bn_->value64(j * k + p);
      w.set(i * n + j, acc);
    }
  }

  if (grad_needed({&a, &b})) {
    mark_result(out);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    GradTape::active()->record(on, {an, bn}, [=]() {
      const float* g = on->grad.data();
      if (ga) {  // dA = dC * B
        an->ensure_grad();
        gemm_nn(g, bn->data.data(), an->grad.data(), m, n, k, true);
      }
      if (gb) {  // dB = dC^T * A
        bn->ensure_grad();
        gemm_tn(g, an->data.data(), bn->grad.data(), m, n, k, true);
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), x.to_vector());
  if (PreciseEval::active()) {
    out.node()->data64.resize(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i)
      out.node()->data64[static_cast<size_t>(i)] = x.node()->value64(i);
  }

  if (grad_needed({&x})) {
    mark_result(out);
    auto xn = x.node_ptr(), on = out.node_ptr();
    const int64_t n = x.numel();
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float* g = on->grad.data();
      for (int64_t i = 0; i < n; ++i) xn->grad[i] += g[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int32_t>& ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("gather_rows: table must be rank-2, got " +
                                shape_str(table.shape()));
  const int64_t rows = table.dim(0), d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= rows)
      throw std::out_of_range("gather_rows: id " + std::to_string(id) +
                              " outside table of " + std::to_string(rows) +
                              " rows");
  const int64_t m = static_cast<int64_t>(ids.size());
  Tensor out = Tensor::zeros({m, d});
  const auto* tn_ = table.node();
  OutWriter w(out);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < d; ++j)
      w.set(i * d + j, tn_->value64(ids[static_cast<size_t>(i)] * d + j));

  if (grad_needed({&table})) {
    mark_result(out);
    auto tn = table.node_ptr(), on = out.node_ptr();
    auto idv = ids;
    GradTape::active()->record(on, {tn}, [=]() {
      tn->ensure_grad();
      const float* g = on->grad.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j)
          tn->grad[idv[i] * d + j] += g[i * d + j];
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw std::invalid_argument("concat_cols: row counts disagree " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int64_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  Tensor out = Tensor::zeros({m, p + q});
  const auto* an_ = a.node();
  const auto* bn_ = b.node();
  OutWriter w(out);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < p; ++j)
      w.set(i * (p + q) + j, an_->value64(i * p + j));
    for (int64_t j = 0; j < q; ++j)
      w.set(i * (p + q) + p + j, bn_->value64(i * q + j));
  }

  if (grad_needed({&a, &b})) {
    mark_result(out);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    GradTape::active()->record(on, {an, bn}, [=]() {
      const float* g = on->grad.data();
      if (ga) {
        an->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < p; ++j)
            an->grad[i * p + j] += g[i * (p + q) + j];
      }
      if (gb) {
        bn->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < q; ++j)
            bn->grad[i * q + j] += g[i * (p + q) + p + j];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const auto* xn_ = x.node();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += xn_->value64(i);
  Tensor out = Tensor::scalar(0.0f);
  out.node()->set_scalar64(acc);

  if (grad_needed({&x})) {
    mark_result(out);
    auto xn = x.node_ptr(), on = out.node_ptr();
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float g = on->grad[0];
      for (int64_t i = 0; i < n; ++i) xn->grad[i] += g;
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int64_t axis,
               std::vector<uint8_t>* masked_lanes) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " invalid for " + shape_str(x.shape()));
  const int64_t d = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  OutWriter w(out);
  if (masked_lanes) masked_lanes->assign(static_cast<size_t>(outer * inner), 0);

  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * d * inner + in;
      double mx = neg_inf;
      for (int64_t j = 0; j < d; ++j)
        mx = std::max(mx, xn_->value64(base + j * inner));
      if (mx == neg_inf) {
        // fully masked lane: all-zero output, flagged
        for (int64_t j = 0; j < d; ++j) w.set(base + j * inner, 0.0);
        if (masked_lanes) (*masked_lanes)[static_cast<size_t>(o * inner + in)] = 1;
        continue;
      }
      double z = 0.0;
      for (int64_t j = 0; j < d; ++j)
        z += std::exp(xn_->value64(base + j * inner) - mx);
      for (int64_t j = 0; j < d; ++j)
        w.set(base + j * inner,
              std::exp(xn_->value64(base + j * inner) - mx) / z);
    }
  }

  if (grad_needed({&x})) {
    mark_result(out);
    auto xn = x.node_ptr(), on = out.node_ptr();
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float* g = on->grad.data();
      const float* p = on->data.data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * d * inner + in;
          double dot = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const int64_t idx = base + j * inner;
            dot += double(g[idx]) * p[idx];
          }
          for (int64_t j = 0; j < d; ++j) {
            const int64_t idx = base + j * inner;
            xn->grad[idx] += static_cast<float>(p[idx] * (double(g[idx]) - dot));
          }
        }
      }
    });
  }
  return out;
}

int64_t cross_entropy_count(const std::vector<int32_t>& targets,
                            int32_t ignore_index) {
  int64_t c = 0;
  for (int32_t t : targets)
    if (t != ignore_index) ++c;
  return c;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     int32_t ignore_index, Reduction reduction) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be rank-2, got " +
                                shape_str(logits.shape()));
  const int64_t n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  for (int32_t t : targets)
    if (t != ignore_index && (t < 0 || t >= v))
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(v));
  const int64_t count = cross_entropy_count(targets, ignore_index);
  if (count == 0) throw std::runtime_error("cross_entropy: empty loss");

  const auto* ln_ = logits.node();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_index) continue;
    double mx = ln_->value64(i * v);
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, ln_->value64(i * v + j));
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(ln_->value64(i * v + j) - mx);
    total += std::log(z) + mx - ln_->value64(i * v + targets[i]);
  }
  const double denom = reduction == Reduction::Mean ? double(count) : 1.0;
  Tensor out = Tensor::scalar(0.0f);
  out.node()->set_scalar64(total / denom);

  if (grad_needed({&logits})) {
    mark_result(out);
    auto ln = logits.node_ptr(), on = out.node_ptr();
    auto tv = targets;
    GradTape::active()->record(on, {ln}, [=]() {
      ln->ensure_grad();
      const double gscale = double(on->grad[0]) / denom;
      const float* rowbase = ln->data.data();
      for (int64_t i = 0; i < n; ++i) {
        if (tv[i] == ignore_index) continue;
        const float* row = rowbase + i * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, double(row[j]));
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(double(row[j]) - mx);
        for (int64_t j = 0; j < v; ++j) {
          double p = std::exp(double(row[j]) - mx) / z;
          double delta = (j == tv[i]) ? 1.0 : 0.0;
          ln->grad[i * v + j] += static_cast<float>((p - delta) * gscale);
        }
      }
    });
  }
  return out;
}

}  // namespace ops

}  // namespace enclab
