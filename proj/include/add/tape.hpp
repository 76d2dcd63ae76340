#pragma once
// Reverse-mode autodiff over Tensor values. A Tape records primitive ops in
// creation order; backward() walks them in exact reverse order, accumulating
// adjoints. Long reductions (matmul inner products, sums, logsumexp) use
// 64-bit accumulators and truncate to float at the end.
//
// Subgradient conventions (needed for a well-defined CVaR gradient):
//   min2(a,b) routes the gradient to the a-branch when a <= b;
//   clamp passes the gradient only when lo <= x <= hi, zero outside.
#include <functional>
#include <vector>

#include "add/tensor.hpp"

namespace add {

class Tape {
public:
    using NodeId = int;

    NodeId leaf(Tensor v, bool requires_grad = false);

    // elementwise, shapes must match
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId min2(NodeId a, NodeId b);

    // elementwise with a constant
    NodeId scale(NodeId a, float c);
    NodeId add_const(NodeId a, float c);
    NodeId relu(NodeId a);
    NodeId tanh_op(NodeId a);
    NodeId exp_op(NodeId a);
    NodeId log_op(NodeId a);
    NodeId square(NodeId a);
    NodeId clamp_op(NodeId a, float lo, float hi);

    // matrix ops; operands viewed as [rows, cols]
    NodeId matmul(NodeId a, NodeId w);                    // [m,k] x [k,n] -> [m,n]
    NodeId add_rowvec(NodeId a, NodeId b);                // [m,n] + [n]
    NodeId sub_colvec(NodeId a, NodeId c);                // [m,n] - [m,1]
    NodeId mul_colvec(NodeId a, NodeId c);                // [m,n] * [m,1]
    NodeId concat_cols(NodeId a, NodeId b);               // [m,n1] ++ [m,n2]
    NodeId gather_cols(NodeId a, std::vector<int> idx);   // [m,n] -> [m,1]; idx per row
    NodeId sum_cols(NodeId a);                            // [m,n] -> [m,1]
    NodeId logsumexp_cols(NodeId a);                      // [m,n] -> [m,1]
    NodeId slice_flat(NodeId a, int64_t offset, std::vector<int64_t> shape); // contiguous window

    // reductions to a scalar [1]
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);

    // log-softmax over columns, composed from primitives
    NodeId log_softmax_cols(NodeId a) { return sub_colvec(a, logsumexp_cols(a)); }

    // runs adjoint accumulation from a scalar loss; callable once per tape
    void backward(NodeId loss);

    const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].val; }
    const Tensor& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool requires_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].rg; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad; // allocated zero-filled on creation
        bool rg = false;
        std::function<void(Tape&)> back; // empty for leaves / grad-free nodes
    };

    NodeId push(Tensor val, bool rg, std::function<void(Tape&)> back);
    Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Central finite-difference oracle for tape-built scalar functions.
// f maps (tape, input node) -> loss node. Returns the worst relative error
// against backward()'s gradient, denominator max(|analytic|, |numeric|, 1e-8).
using TapeFn = std::function<Tape::NodeId(Tape&, Tape::NodeId)>;
float finite_diff_check(const TapeFn& f, const Tensor& x, float step);

} // namespace add
