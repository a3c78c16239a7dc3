#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "procver/tensor.hpp"

namespace procver {

// A named trainable tensor plus its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() {
        grad.data.assign(grad.data.size(), 0.0);
    }
};

// Reverse-mode tape over the fixed op set the model is built from. One tape
// per forward/backward pass; node handles are indices into the tape, so the
// creation order is already a topological order. Every op validates operand
// shapes and rejects non-finite outputs.
class Tape {
public:
    using NodeId = int;

    // Leaves. constant() is not differentiated through; input() is (its
    // gradient is readable after backward); param() additionally flushes the
    // gradient into the Parameter when backward() finishes.
    NodeId constant(Tensor v);
    NodeId input(Tensor v);
    NodeId param(Parameter& p);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);                   // same shape
    NodeId add_row_broadcast(NodeId m, NodeId row);   // (r x c) + (c,)
    NodeId affine(NodeId a, double mul, double shift); // mul*x + shift, elementwise
    NodeId scale(NodeId a, double k) { return affine(a, k, 0.0); }
    NodeId transpose(NodeId a);
    NodeId reshape(NodeId a, std::vector<std::size_t> shape);
    NodeId slice_cols(NodeId a, std::size_t begin, std::size_t count);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId softmax_rows(NodeId a);                    // rank-1 treated as one row
    NodeId layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    NodeId gelu(NodeId a);
    NodeId mean_over_axis(NodeId a, int axis);        // rank-2; axis 0 or 1
    NodeId mean_all(NodeId a);
    NodeId l2_normalize_rows(NodeId a);               // rank-1 treated as one row
    NodeId cross_entropy_from_logits(NodeId logits, std::size_t target);
    NodeId abs_sum(NodeId a);
    NodeId diagonal(NodeId a);                        // (n x n) -> (n,)

    // Standard scaled-dot-product multi-head self-attention over x (k x d),
    // composed from the primitive ops above so gradients come for free.
    NodeId multi_head_attention(NodeId x,
                                NodeId wq, NodeId bq,
                                NodeId wk, NodeId bk,
                                NodeId wv, NodeId bv,
                                NodeId wo, NodeId bo,
                                std::size_t heads);

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be
    // scalar. Parameter gradients are accumulated (+=), matching zeroed grads
    // at step start.
    void backward(NodeId root);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    // Gradient of the last backward() root w.r.t. this node. Zero tensor if
    // the node was never reached.
    Tensor grad(NodeId id) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> backward;
        Parameter* bound_param = nullptr;
        bool needs_grad = false;
    };

    NodeId push(Tensor value, std::vector<NodeId> parents, std::function<void(Tape&, NodeId)> bw,
                const char* op_name);
    void accumulate(NodeId id, const Tensor& delta);
    Tensor& grad_slot(NodeId id);
    bool any_needs_grad(const std::vector<NodeId>& ids) const;
    void check_id(NodeId id) const;

    // deque keeps value() references stable while later ops are pushed
    std::deque<Node> nodes_;
    std::vector<Tensor> grads_;
};

} // namespace procver
