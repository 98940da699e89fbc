#include "pcsep/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pcsep/errors.hpp"

namespace pcsep {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError("non-finite value in " + what + " at flat index " + std::to_string(i));
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
  node_->tracked = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values.size(); }

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::tracked() const { return node_ && node_->tracked; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->values, false); }

GradTape::Scope::Scope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

GradTape::Scope::~Scope() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

bool GradTape::should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->tracked()) return true;
  }
  return false;
}

bool GradTape::should_record(std::span<const Tensor> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor& t : inputs) {
    if (t.tracked()) return true;
  }
  return false;
}

void GradTape::record(std::vector<const TensorNode*> inputs, Tensor& output, BackwardFn fn) {
  output.node_->tracked = true;
  entries_.push_back(Entry{std::move(inputs), output, std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (entries_.empty()) throw ContractError("backward on an empty tape");
  if (!loss.tracked()) throw ContractError("backward on a loss that was not recorded");
  grad_buffer(loss)[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (grads_.contains(it->output.id())) it->backward(*this);
  }
}

std::span<const double> GradTape::grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return it->second;
}

std::span<double> GradTape::grad_buffer(const Tensor& t) {
  auto [it, inserted] = grads_.try_emplace(t.id());
  if (inserted) it->second.assign(t.numel(), 0.0);
  return it->second;
}

void GradTape::accumulate_into_leaves(std::span<const Tensor> leaves) const {
  for (const Tensor& leaf : leaves) {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) continue;
    auto& dst = leaf.node_->grad;
    if (dst.empty()) dst.assign(leaf.numel(), 0.0);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += it->second[i];
  }
}

void GradTape::clear() {
  entries_.clear();
  grads_.clear();
}

}  // namespace pcsep
