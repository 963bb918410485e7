#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

struct TapeRecord {
  std::string op;
  std::vector<std::size_t> inputs;  // record ids of the inputs
  std::size_t output = 0;           // record id of this node
};

/// Topologically ordered view of the graph that produced a tensor.
/// Inputs always precede the nodes that consume them.
class Tape {
 public:
  static Tape record(const Tensor& root);

  const std::vector<TapeRecord>& records() const { return records_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and runs every backward closure once in
  /// reverse order. The interior graph is released afterwards.
  void backward();

 private:
  std::vector<NodePtr> nodes_;
  std::vector<TapeRecord> records_;
};

/// Ordered registry of uniquely named parameters.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::int64_t total_numel() const;
  std::vector<std::string> names() const;
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Runs reverse mode from a scalar loss, accumulating into leaf grads.
void backward(const Tensor& loss);

/// Same, returning d(loss)/d(param) for every registered parameter.
/// Parameters that do not influence the loss get an all-zero gradient.
std::map<std::string, Tensor> backward(const Tensor& loss, const ParameterStore& params);

}  // namespace mseg
