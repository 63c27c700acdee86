#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace enclab {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// Storage plus the gradient accumulator for one logical tensor. Gradients are
// keyed by node identity: every use of the same node accumulates into the
// same buffer.
struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until touched by a backward pass
  bool requires_grad = false;
  // Scalars produced by 64-bit reductions carry their unrounded value so
  // finite-difference checks are not limited by float32 rounding of the loss.
  double scalar64 = std::numeric_limits<double>::quiet_NaN();
  // Under PreciseEval, ops additionally store their unrounded outputs here
  // and read inputs from it, giving finite-difference oracles a 64-bit
  // evaluation of the same computation.
  std::vector<double> data64;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  double value64(int64_t i) const {
    return data64.empty() ? double(data[i]) : data64[i];
  }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
  void set_scalar64(double v) {
    data[0] = static_cast<float>(v);
    scalar64 = v;
  }
};

}  // namespace detail

// While alive on a thread, ops propagate 64-bit shadows of their outputs.
// Used by grad_check so the numeric side of the comparison is not limited by
// float32 rounding of intermediates. Tensor storage stays float32.
class PreciseEval {
 public:
  PreciseEval();
  ~PreciseEval();
  PreciseEval(const PreciseEval&) = delete;
  static bool active();

 private:
  bool prev_;
};

namespace detail {

}  // namespace detail

// Dense row-major float32 tensor. Copying a Tensor copies a handle; the
// underlying buffer is shared. Reshapes copy data; there are no strided
// views.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }

  float* data() { return node_->data.data(); }
  const float* data() const { return node_->data.data(); }
  std::span<const float> values() const { return node_->data; }
  std::vector<float> to_vector() const { return node_->data; }

  // Scalar extraction; throws unless numel() == 1.
  float item() const;
  // 64-bit value for reduction-produced scalars; falls back to item().
  double item64() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const float> grad() const;
  Tensor grad_tensor() const;
  void zero_grad() {
    if (node_) node_->grad.clear();
  }

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of the primitive operations executed while the tape is
// active on this thread. backward() replays the record in reverse and
// accumulates one gradient per requires_grad tensor reachable from the loss.
// Single writer: one training step builds and consumes one tape.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void backward(const Tensor& loss);

  size_t size() const { return entries_.size(); }

  static GradTape* active();

  // Registers the backward step for one primitive op. `fn` reads the output
  // node's grad and accumulates into the inputs' grads; it runs only if the
  // output received a gradient.
  void record(std::shared_ptr<detail::TensorNode> out,
              std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::function<void()> fn);

 private:
  struct Entry {
    std::shared_ptr<detail::TensorNode> out;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::function<void()> fn;
  };

  std::vector<Entry> entries_;
  GradTape* prev_ = nullptr;
};

namespace ops {

// Core differentiable primitives. Reductions and dot products accumulate in
// 64-bit; storage stays float32.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);

// [m,n] + row vector [n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// C[i,j] = sum_k A[i,k] * B[k,j].
Tensor matmul(const Tensor& a, const Tensor& b);
// C[i,j] = sum_k A[i,k] * B[j,k]  (B used transposed).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Copies into a new shape with the same element count.
Tensor reshape(const Tensor& x, Shape shape);

// Gather rows of a [n,d] table; backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int32_t>& ids);

// [m,p] ++ [m,q] -> [m,p+q].
Tensor concat_cols(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);

// Max-subtracted softmax along `axis`. A lane whose maximum is -inf (fully
// masked) yields all zeros instead of NaN; if `masked_lanes` is given, one
// flag per lane reports which lanes were zeroed.
Tensor softmax(const Tensor& x, int64_t axis,
               std::vector<uint8_t>* masked_lanes = nullptr);

enum class Reduction { Mean, Sum };

// Mean (or sum) negative log-softmax of the target class per row. Rows whose
// target equals `ignore_index` contribute nothing to value or gradient.
Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     int32_t ignore_index, Reduction reduction = Reduction::Mean);

int64_t cross_entropy_count(const std::vector<int32_t>& targets,
                            int32_t ignore_index);

}  // namespace ops

}  // namespace enclab
