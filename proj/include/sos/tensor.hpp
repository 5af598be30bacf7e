#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sos {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

// One primitive application in a recorded graph.
struct RecordEntry {
  std::string op;
  std::vector<const void*> inputs;
  const void* output = nullptr;
};

// Backward rule for a custom op. Receives the gradient of the output and
// the inputs' grad buffers (empty span for inputs that do not need one).
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<std::span<double>> input_grads)>;

// Dense row-major float64 tensor with an optional gradient accumulator.
//
// A Tensor is a shared handle: copies alias the same storage, which is what
// lets parameter structs hand the same leaf to an optimizer and to the
// forward pass. Results of differentiable ops keep references to their
// inputs so that backward() can walk the recorded graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // Gradient accumulator; all zeros until something is accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // True when this tensor was produced by a recorded op (not a leaf).
  bool has_record() const;
  std::string_view op_name() const;

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires
  // gradients. `this` must be a recorded scalar.
  void backward() const;

  // Same values, no history, no gradient.
  Tensor detach() const;
  Tensor clone() const;

  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend std::vector<RecordEntry> computation_record(const Tensor& root);
  friend Tensor apply_op(std::string_view, Shape, std::vector<double>, std::vector<Tensor>,
                         BackwardFn);
};

// Topologically ordered record of every op reachable from `root`: each
// entry's inputs are produced by earlier entries or are leaves.
std::vector<RecordEntry> computation_record(const Tensor& root);

// Records a primitive: builds the output tensor and, when gradients are
// enabled and some input requires them, attaches `backward` to it.
Tensor apply_op(std::string_view name, Shape shape, std::vector<double> values,
                std::vector<Tensor> inputs, BackwardFn backward);

bool grad_enabled();

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace sos
