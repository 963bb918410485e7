#include "mseg/tensor.hpp"

#include <sstream>

#include "mseg/errors.hpp"

namespace mseg {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw ValidationError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<Node>();
  node->data.assign(static_cast<std::size_t>(mseg::numel(shape)), round_to(dtype, value));
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  return full(std::move(shape), 0.0, dtype, requires_grad);
}

Tensor Tensor::ones(Shape shape, DType dtype, bool requires_grad) {
  return full(std::move(shape), 1.0, dtype, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, DType dtype, bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != mseg::numel(shape)) {
    throw ValidationError("data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  detail::round_output(*node);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, DType dtype) { return from_data({1}, {value}, dtype); }

Tensor Tensor::randn(Shape shape, Rng& rng, DType dtype, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(static_cast<std::size_t>(mseg::numel(shape)));
  for (auto& v : data) v = dist(rng);
  return from_data(std::move(shape), std::move(data), dtype);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(static_cast<std::size_t>(mseg::numel(shape)));
  for (auto& v : data) v = dist(rng);
  return from_data(std::move(shape), std::move(data), dtype);
}

std::int64_t Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw ValidationError("axis out of range");
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != ndim()) throw ValidationError("at(): rank mismatch");
  std::int64_t offset = 0;
  int axis = 0;
  for (auto i : index) {
    const auto d = node_->shape[static_cast<std::size_t>(axis++)];
    if (i < 0 || i >= d) throw ValidationError("at(): index out of range");
    offset = offset * d + i;
  }
  return node_->data[static_cast<std::size_t>(offset)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (!has_grad()) return zeros(shape(), dtype());
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->dtype = node_->dtype;
  node->data = node_->grad;
  return Tensor(std::move(node));
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->dtype = node_->dtype;
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

Tensor Tensor::to(DType dtype) const {
  Tensor t = clone();
  t.node_->dtype = dtype;
  detail::round_output(*t.node_);
  return t;
}

namespace detail {

NodePtr make_node(std::string op, Shape shape, DType dtype, const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->dtype = dtype;
  node->data.assign(static_cast<std::size_t>(mseg::numel(shape)), 0.0);
  node->shape = std::move(shape);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
    }
  }
  return node;
}

NodePtr make_node(std::string op, Shape shape, DType dtype, std::initializer_list<Tensor> inputs) {
  return make_node(std::move(op), std::move(shape), dtype, std::vector<Tensor>(inputs));
}

void round_output(Node& node) {
  if (node.dtype != DType::f32) return;
  for (auto& v : node.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace detail

}  // namespace mseg
