#include "mseg/autograd.hpp"

#include <unordered_map>

#include "mseg/errors.hpp"

namespace mseg {

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_map<const Node*, std::size_t> ids;
  // Iterative post-order DFS so deep graphs do not exhaust the stack.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  std::unordered_map<const Node*, bool> visited;
  stack.emplace_back(root.node_ptr(), 0);
  visited[root.node()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (!visited[child.get()]) {
        visited[child.get()] = true;
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    const std::size_t id = tape.nodes_.size();
    ids[node.get()] = id;
    TapeRecord rec;
    rec.op = node->op;
    rec.output = id;
    for (const auto& in : node->inputs) rec.inputs.push_back(ids.at(in.get()));
    tape.records_.push_back(std::move(rec));
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  Node& root = *nodes_.back();
  root.ensure_grad();
  for (auto& g : root.grad) g += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (!node.backward) continue;
    if (node.grad.size() != node.data.size()) continue;  // nothing flowed here
    node.backward(node);
  }
  for (auto& node : nodes_) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ValidationError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  Tape::record(loss).backward();
}

std::map<std::string, Tensor> backward(const Tensor& loss, const ParameterStore& params) {
  backward(loss);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, p] : params.entries()) grads.emplace(name, p.grad());
  return grads;
}

Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(tensor));
  return entries_.back().second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return entries_[it->second].second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::int64_t ParameterStore::total_numel() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

}  // namespace mseg
