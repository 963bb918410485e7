#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mseg {

/// Storage precision of a tensor. Values are held in double internally;
/// f32 tensors are rounded to single precision after every op so their
/// numerics match a float pipeline.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

inline double round_to(DType dtype, double v) {
  return dtype == DType::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

inline DType promote(DType a, DType b) {
  return (a == DType::f64 || b == DType::f64) ? DType::f64 : DType::f32;
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the autodiff graph. `backward` reads `grad` of the node it
/// is attached to and accumulates into the grads of `inputs`.
struct Node {
  Shape shape;
  DType dtype = DType::f32;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  bool is_leaf() const { return !backward; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::f32, bool requires_grad = false);
  static Tensor ones(Shape shape, DType dtype = DType::f32, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32,
                     bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, DType dtype = DType::f32,
                          bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::f32);
  static Tensor randn(Shape shape, Rng& rng, DType dtype = DType::f32, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype = DType::f32);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
  DType dtype() const { return node_->dtype; }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access, for optimizers and weight loading. Values written
  /// here are not rounded; callers are expected to respect dtype.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad_data() const { return node_->grad; }
  /// Gradient as a fresh tensor; zeros if none was accumulated.
  Tensor grad() const;
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  Node* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Allocates the output node of an op and wires its inputs when any of them
/// requires grad and recording is enabled.
NodePtr make_node(std::string op, Shape shape, DType dtype, std::initializer_list<Tensor> inputs);
NodePtr make_node(std::string op, Shape shape, DType dtype, const std::vector<Tensor>& inputs);
void round_output(Node& node);

}  // namespace detail

}  // namespace mseg
