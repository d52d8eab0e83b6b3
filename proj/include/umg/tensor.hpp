#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "umg/common.hpp"

namespace umg {

class Tape;

// Dense n-dimensional array. Value type with a shared data buffer; ops never
// mutate their inputs. A tensor participates in autodiff iff node >= 0.
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<real>> store;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<real> values);
    explicit Tensor(std::vector<int> s, real fill = 0);

    int64_t numel() const;
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool on_tape() const { return node >= 0; }

    const std::vector<real>& data() const { return *store; }
    std::vector<real>& data() { return *store; }

    /// Value of a 1-element tensor.
    real scalar() const;
};

Tensor scalar_tensor(real v);
bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const std::vector<int>& s);
int64_t shape_numel(const std::vector<int>& s);

/// Throws NumericError if any value is NaN/Inf. Every forward op calls this.
void check_finite(const Tensor& t, const char* op);

// Reverse-mode gradient tape. One tape per training step; ops append nodes,
// backward() walks them in reverse creation order (deterministic accumulation)
// and then frees the graph.
class Tape {
  public:
    using BackFn = std::function<void(Tape&)>;

    /// Registers value as a differentiable leaf. Returns a view on the same
    /// buffer with a tape node attached.
    Tensor leaf(const Tensor& value);

    /// Gradients of a scalar loss for every leaf, keyed by node id. Leaves
    /// not connected to the loss get zero gradients. The graph is released.
    std::unordered_map<int, std::vector<real>> backward(const Tensor& loss);

    // --- op-construction interface ---
    int add_node(int64_t out_numel, BackFn back);
    std::vector<real>& grad(int node);            // allocates zeros on demand
    const std::vector<real>& grad_of(int node) const;
    bool wants_grad(int node) const { return node >= 0; }

    size_t node_count() const { return nodes_.size(); }
    void clear();

  private:
    struct Node {
        int64_t numel;
        BackFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<real>> grads_;
    std::vector<int> leaves_;
};

/// Binds every parameter to the tape, in order. Element i of the result
/// shares parameters[i]'s buffer and carries its tape node.
std::vector<Tensor> bind_params(Tape& tape, const std::vector<Tensor*>& params);

/// Extracts grads for the given bound tensors from a backward() result,
/// zero-filling any parameter the loss never reached.
std::vector<std::vector<real>> grads_for(const std::unordered_map<int, std::vector<real>>& gm,
                                         const std::vector<Tensor>& bound);

}  // namespace umg
