#include "sos/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "sos/errors.hpp"

namespace sos {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::span<double> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape, std::size_t values) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values) {
    std::ostringstream os;
    os << "shape " << shape_string(shape) << " needs " << shape_size(shape) << " values, got "
       << values;
    throw ShapeError(os.str());
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  auto g = node_->grad_buffer();
  std::fill(g.begin(), g.end(), 0.0);
}

bool Tensor::has_record() const { return node_ && static_cast<bool>(node_->backward); }
std::string_view Tensor::op_name() const { return node_->op; }

namespace {

// Post-order DFS without recursion; inputs always precede their consumers.
std::vector<detail::Node*> topological_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  if (!has_record()) throw UsageError("backward() called on a tensor with no computation record");
  if (size() != 1) throw UsageError("backward() needs a scalar, got shape " + shape_string(shape()));

  auto order = topological_order(node_.get());
  for (auto* node : order) {
    if (node->backward) {
      auto g = node->grad_buffer();
      std::fill(g.begin(), g.end(), 0.0);
    }
  }
  node_->grad_buffer()[0] += 1.0;

  std::vector<std::span<double>> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->backward) continue;
    input_grads.clear();
    for (auto& input : node->inputs) {
      input_grads.push_back(input->requires_grad ? input->grad_buffer() : std::span<double>{});
    }
    node->backward(node->grad, input_grads);
  }
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from(shape(), node_->data, requires_grad()); }

std::vector<RecordEntry> computation_record(const Tensor& root) {
  std::vector<RecordEntry> record;
  if (!root.defined()) return record;
  for (auto* node : topological_order(root.node_.get())) {
    if (!node->backward) continue;
    RecordEntry entry{node->op, {}, node};
    for (auto& input : node->inputs) entry.inputs.push_back(input.get());
    record.push_back(std::move(entry));
  }
  return record;
}

Tensor apply_op(std::string_view name, Shape shape, std::vector<double> values,
                std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->op = std::string(name);
  out.node_->backward = std::move(backward);
  out.node_->inputs.reserve(inputs.size());
  for (auto& input : inputs) out.node_->inputs.push_back(input.node_);
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace sos
