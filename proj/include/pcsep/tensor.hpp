#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace pcsep {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class GradTape;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  // Reducer-owned gradient of a leaf; empty when absent.
  std::vector<double> grad;
  bool requires_grad = false;
  // True when the node is a requires_grad leaf or was produced by a recorded op.
  bool tracked = false;
};

// Dense row-major float64 tensor. Copies share the underlying node; values
// of recorded intermediates are never modified after creation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutable access for parameters and freshly built inputs only.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool tracked() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // A fresh untracked copy of the values.
  Tensor detach() const;

  const TensorNode* id() const { return node_.get(); }

 private:
  std::shared_ptr<TensorNode> node_;
  friend class GradTape;
};

// Records differentiable operations of one thread. Ops consult the tape that
// is active on the calling thread; without one, nothing is recorded.
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&)>;

  struct Entry {
    std::vector<const TensorNode*> inputs;
    Tensor output;
    BackwardFn backward;
  };

  // Activates a tape for the current thread for the lifetime of the scope.
  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

  static GradTape* active();

  // True when an op over these inputs must be recorded: a tape is active and
  // any input is tracked.
  static bool should_record(std::initializer_list<const Tensor*> inputs);
  static bool should_record(std::span<const Tensor> inputs);

  // Appends an entry and marks output as tracked.
  void record(std::vector<const TensorNode*> inputs, Tensor& output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and replays entries in reverse order.
  void backward(const Tensor& loss);

  // Gradient reached for t, or an empty span.
  std::span<const double> grad(const Tensor& t) const;
  // Accumulation buffer for t, zero-initialised on first use.
  std::span<double> grad_buffer(const Tensor& t);

  // Adds the tape gradients of the given leaves to their grad fields. This is
  // the single-reducer step when several tapes share parameters.
  void accumulate_into_leaves(std::span<const Tensor> leaves) const;

  void clear();
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

// Throws NumericalError naming `what` if any value is NaN or Inf.
void check_finite(std::span<const double> values, const std::string& what);

}  // namespace pcsep
