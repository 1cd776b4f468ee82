#include "metalens/numerics/autograd.hpp"

#include "metalens/errors.hpp"

namespace metalens::numerics {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

GradTape::Scope::Scope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

GradTape::Scope::~Scope() { g_active_tape = previous_; }

void GradTape::record(std::string_view op, std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
                      BackwardFn backward) {
  if (consumed_) throw ContractError("recording onto a tape that was already replayed; reset it first");
  output->requires_grad = true;
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape without reset");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("loss was not built from tape-recorded operations");

  Node* root = loss.node().get();
  root->grad.assign(1, 1.0);
  visit_order_.clear();
  std::vector<Node*> raw;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    Entry& e = entries_[i];
    visit_order_.push_back(i);
    if (e.output->grad.empty()) continue;  // no path to the loss
    raw.clear();
    for (auto& in : e.inputs) raw.push_back(in.get());
    e.backward(*e.output, raw);
  }
  // Leaves with no path to the loss still get an explicit zero gradient.
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in->requires_grad && in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
    }
  }
  consumed_ = true;
}

void GradTape::reset() {
  entries_.clear();
  visit_order_.clear();
  consumed_ = false;
}

std::vector<std::string_view> GradTape::recorded_ops() const {
  std::vector<std::string_view> ops;
  ops.reserve(entries_.size());
  for (const auto& e : entries_) ops.push_back(e.op);
  return ops;
}

void backward(const Tensor& loss) {
  GradTape* tape = GradTape::active();
  if (!tape) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

namespace detail {

std::vector<double>* grad_buffer(TensorNode* node) {
  if (!node || !node->requires_grad) return nullptr;
  if (node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
  return &node->grad;
}

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool recording(std::span<const Tensor> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record(std::string_view op, std::initializer_list<const Tensor*> inputs, Tensor& output,
            GradTape::BackwardFn fn) {
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor* t : inputs) nodes.push_back(t->node());
  GradTape::active()->record(op, std::move(nodes), output.node(), std::move(fn));
}

void record(std::string_view op, std::span<const Tensor> inputs, Tensor& output, GradTape::BackwardFn fn) {
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& t : inputs) nodes.push_back(t.node());
  GradTape::active()->record(op, std::move(nodes), output.node(), std::move(fn));
}

}  // namespace detail

}  // namespace metalens::numerics
