#pragma once

#include <functional>
#include <vector>

#include "finsent/rng.hpp"
#include "finsent/tensor.hpp"

namespace finsent {

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode differentiation tape. Operations append nodes in execution
/// order; parents always precede children, so walking the node list backwards
/// replays the computation in exact reverse order. backward(loss) accumulates
/// gradients for every recorded node that the loss depends on, then adds leaf
/// gradients into their external sinks (the `+=` is what makes gradient
/// accumulation across micro-batches work).
///
/// Every op validates shapes up front (ContractError) and checks its output
/// for non-finite values (NumericsError) so NaNs never propagate silently.
///
/// A tape is single-threaded; independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Non-differentiable leaf (data, masks, targets). The tensor is copied.
    Var input(Tensor value);

    /// Differentiable leaf. `value` is referenced, not copied, and must
    /// outlive the tape. After backward, the leaf's gradient is added into
    /// `grad_sink` (shape must match; pass nullptr to discard).
    Var leaf(const Tensor& value, Tensor* grad_sink);

    // -- differentiable operations (2-D unless noted) ----------------------
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);                       // same shape, any rank
    Var mul(Var a, Var b);                       // elementwise, same shape
    Var add_bias(Var x, Var bias);               // x: [m x n], bias: [n]
    Var scale(Var x, float s);                   // any rank
    Var transpose(Var x);
    Var slice_cols(Var x, int begin, int count);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_rows(Var x, std::vector<int> rows);  // also the embedding lookup
    Var softmax(Var x, int axis);                // any rank; max-shifted
    Var layer_norm(Var x, Var gamma, Var beta, float eps);  // normalizes last axis
    Var gelu(Var x);                             // tanh approximation
    Var tanh(Var x);
    Var dropout(Var x, float p, bool training, Rng& rng);
    Var cross_entropy(Var logits, const std::vector<int>& targets);  // mean over rows
    Var mse(Var pred, const Tensor& target);     // mean squared difference
    Var sum(Var x);

    /// Runs reverse-mode accumulation from a scalar loss. May be called once
    /// per tape.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    /// Gradient of a recorded node after backward; zeros if the loss did not
    /// depend on it. Returns by value.
    Tensor grad(Var v) const;

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;                          // owned unless external_value set
        const Tensor* external_value = nullptr;
        Tensor grad;                           // allocated during backward
        Tensor* grad_sink = nullptr;
        bool needs_grad = false;
        std::vector<Var> parents;
        std::function<void(Tape&, int self)> back;
    };

    Var emplace(Node node, const char* op_name);
    Node& node(Var v) { return nodes_[v.id]; }
    const Node& node(Var v) const { return nodes_[v.id]; }
    Tensor& grad_ref(Var v) { return nodes_[v.id].grad; }
    void check_var(Var v, const char* op_name) const;
    bool parent_needs_grad(const std::vector<Var>& parents) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace finsent
