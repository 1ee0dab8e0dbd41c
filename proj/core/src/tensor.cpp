#include "dq/tensor.hpp"

#include <algorithm>

#include "dq/error.hpp"

namespace dq {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tensor::Tensor(std::size_t rows, std::size_t cols, float fill)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->rows = rows;
  impl_->cols = cols;
  impl_->data.assign(rows * cols, fill);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<float> values) {
  if (values.size() != rows * cols) {
    throw DimensionError("Tensor::from: " + std::to_string(values.size()) +
                         " values for shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->rows = rows;
  t.impl_->cols = cols;
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Tensor::from_rows: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from(r, c, std::move(values));
}

float Tensor::item() const {
  if (!is_scalar()) throw ContractError("Tensor::item on non-scalar tensor");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

std::span<float> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  return from(rows(), cols(), impl_->data);
}

void accumulate_grad(TensorImpl& t, std::span<const float> g) {
  if (!t.requires_grad) return;
  if (t.grad.empty()) {
    t.grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward) {
  Op op;
  op.inputs.reserve(inputs.size());
  for (const auto& in : inputs) op.inputs.push_back(in.shared_impl());
  op.output = output.shared_impl();
  op.output->requires_grad = true;
  op.output->is_leaf = false;
  op.backward = std::move(backward);
  ops_.push_back(std::move(op));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ContractError("backward: loss must be a 1x1 tensor");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss was not produced by a recorded operation");
  }
  for (auto& op : ops_) op.output->grad.clear();
  loss.impl()->grad.assign(1, 1.0f);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

bool needs_recording(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

}  // namespace dq
