#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fa/attention.hpp"
#include "fa/tensor.hpp"

namespace fa::ad {

using ValueId = std::size_t;

enum class OpKind {
    Input,
    Permute,
    Unfold,
    Fold,
    MatMul,
    RowSoftmax,
    ChannelLinear,
    Add,
    Mul,
    Sum,
};

/// Gradients of one backward pass, indexed by the tape node they belong to.
/// Only Input leaves reachable from the seeded output carry a gradient.
class Gradients {
public:
    explicit Gradients(std::size_t node_count) : grads_(node_count) {}

    bool has(ValueId id) const { return id < grads_.size() && grads_[id].has_value(); }
    const Tensor& grad(ValueId id) const;
    void accumulate(ValueId id, const Tensor& shape_like, const Tensor& delta);
    Tensor& ensure(ValueId id, const Shape& shape);

private:
    std::vector<std::optional<Tensor>> grads_;
};

/// Append-only record of primitive applications. Nodes are stored in
/// topological order by construction; every node owns its output value, so a
/// tape can be replayed or differentiated after the fact. Recording calls the
/// same kernels as the untaped code paths, so taped forwards are bitwise
/// identical to untaped ones.
class Tape {
public:
    struct Node {
        OpKind kind;
        std::string label;
        std::vector<ValueId> args;
        Tensor value;
        Permutation perm;  // Permute / Unfold / Fold
        Shape fold_shape;  // Fold
    };

    ValueId input(Tensor value, std::string label = "input");
    ValueId permute(ValueId x, Permutation p);
    ValueId unfold(ValueId x, Permutation p);
    ValueId fold(ValueId m, Permutation p, Shape original_shape);
    /// Rank-2 transpose, recorded as a (1,0) permute.
    ValueId transpose(ValueId m) { return permute(m, Permutation({1, 0})); }
    ValueId matmul(ValueId a, ValueId b);
    ValueId row_softmax(ValueId m);
    ValueId channel_linear(ValueId x, ValueId w);
    ValueId channel_linear(ValueId x, ValueId w, ValueId b);
    ValueId add(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    /// Sum of all elements, as a one-element tensor.
    ValueId sum(ValueId x);

    std::size_t size() const { return nodes_.size(); }
    const Node& node(ValueId id) const { return nodes_[id]; }
    const Tensor& value(ValueId id) const { return nodes_[id].value; }
    double scalar(ValueId id) const;

    /// Replace a leaf's value. Downstream values are stale until replay().
    void set_input(ValueId id, Tensor value);

    /// Recompute every node from the current leaf values, in record order.
    void replay();

    /// Adjoints of <seed, output> with respect to every reachable node.
    /// seed must match the output node's shape.
    Gradients backward(ValueId output, const Tensor& seed) const;

private:
    ValueId push(Node node);
    Tensor eval(const Node& node) const;

    std::vector<Node> nodes_;
};

/// Handles to the leaves and output of a recorded folded-attention forward.
struct FaRecording {
    ValueId x = 0;
    ValueId theta_w = 0;
    ValueId phi_w = 0;
    ValueId g_w = 0;
    ValueId output = 0;
};

/// Records the folded-attention forward pass (shared theta/phi, bias-less)
/// on the tape. Honors params.reapply_g; per-mode parameters and biases are
/// not recordable.
FaRecording record_folded_attention(Tape& tape, const Tensor& x, const FaParams& params);

/// Worst finite-difference disagreement across the checked leaves.
struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::string worst_leaf;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries_checked = 0;

    bool pass(double rtol) const { return max_rel_err <= rtol; }
};

/// Central-difference check of a scalar loss node against backward(). For
/// each entry of each leaf: numeric = (L(p + h e_i) - L(p - h e_i)) / 2h,
/// relative error = |a - n| / max(|a|, |n|, 1e-8). Restores the tape before
/// returning.
FiniteDiffReport finite_diff_check(Tape& tape, ValueId loss, std::span<const ValueId> leaves,
                                   double step = 1e-5);

}  // namespace fa::ad
