#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace dq {

struct TensorImpl {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  // Empty until the first gradient contribution arrives.
  std::vector<float> grad;
  bool requires_grad = false;
  // Produced by a recorded operation (as opposed to a user-created leaf).
  bool is_leaf = true;
};

/// Dense row-major 2-D f32 array with an optional gradient slot.
///
/// Tensor is a handle: copies share storage. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, float fill = 0.0f);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<float> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor scalar(float value) { return {1, 1, value}; }

  bool defined() const { return impl_ != nullptr; }
  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t size() const { return impl_->data.size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float* row(std::size_t r) { return impl_->data.data() + r * impl_->cols; }
  const float* row(std::size_t r) const { return impl_->data.data() + r * impl_->cols; }
  float& operator()(std::size_t r, std::size_t c) { return impl_->data[r * impl_->cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->cols + c]; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->is_leaf; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; empty span when nothing has been accumulated.
  std::span<const float> grad() const { return impl_->grad; }
  std::span<float> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy of the values, detached from any tape.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const { return impl_; }
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Adds `g` into the gradient slot of `t`, allocating it on first use.
/// No-op for tensors that do not require gradients.
void accumulate_grad(TensorImpl& t, std::span<const float> g);

/// Define-by-run record of differentiable operations.
///
/// Operations record themselves on the tape that is active on the current
/// thread (see TapeScope) whenever at least one input requires a gradient.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const float> grad_out)>;

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward);

  /// Propagates d(loss)/d(.) to every tensor recorded on this tape.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor& loss);

  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

  static Tape* active();

 private:
  struct Op {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Op> ops_;

  friend class TapeScope;
};

/// Makes a tape the active recording target for the enclosing scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// True when an op taking `inputs` must be recorded.
bool needs_recording(std::initializer_list<const Tensor*> inputs);

}  // namespace dq
