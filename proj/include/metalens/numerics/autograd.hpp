#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "metalens/numerics/tensor.hpp"

namespace metalens::numerics {

/// Eager reverse-mode tape.
///
/// Operations append an entry whenever a tape is active on the calling
/// thread and at least one input requires a gradient. `backward` replays
/// the entries in reverse order of execution, exactly once; call `reset`
/// before reusing the tape.
class GradTape {
 public:
  using Node = detail::TensorNode;
  using BackwardFn = std::function<void(const Node& output, std::span<Node* const> inputs)>;

  struct Entry {
    std::string_view op;
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    BackwardFn backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::string_view op, std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
              BackwardFn backward);

  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  std::vector<std::string_view> recorded_ops() const;
  /// Entry indices in the order the last backward pass visited them.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

  static GradTape* active();

  /// Makes a tape the active one for the current thread for the scope's lifetime.
  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

 private:
  std::vector<Entry> entries_;
  std::vector<std::size_t> visit_order_;
  bool consumed_ = false;
};

/// Runs backward on the thread's active tape.
void backward(const Tensor& loss);

namespace detail {

/// Gradient buffer of `node`, zero-allocated on first use; null when the
/// node does not take part in differentiation.
std::vector<double>* grad_buffer(TensorNode* node);

/// True when an op over these inputs must be recorded.
bool recording(std::initializer_list<const Tensor*> inputs);
bool recording(std::span<const Tensor> inputs);

/// Records `output` as produced from `inputs` on the active tape.
void record(std::string_view op, std::initializer_list<const Tensor*> inputs, Tensor& output,
            GradTape::BackwardFn fn);
void record(std::string_view op, std::span<const Tensor> inputs, Tensor& output, GradTape::BackwardFn fn);

}  // namespace detail

}  // namespace metalens::numerics
