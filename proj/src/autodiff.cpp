#include "fa/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace fa::ad {

namespace {

Matrix as_matrix(const Tensor& t) {
    if (t.rank() != 2) throw std::invalid_argument("tape: rank-2 value required");
    return Matrix(t.shape()[0], t.shape()[1], t.values());
}

Tensor as_tensor(Matrix m) { return Tensor({m.rows, m.cols}, std::move(m.data)); }

void check_finite(const Tensor& t, ValueId id, const std::string& label, const char* phase) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::isnan(t[i]))
            throw std::domain_error(std::string("tape ") + phase + ": NaN at node " + std::to_string(id) +
                                    " (" + label + ")");
}

}  // namespace

// ---- Gradients ---------------------------------------------------------------

const Tensor& Gradients::grad(ValueId id) const {
    if (!has(id)) throw std::out_of_range("Gradients: no gradient recorded for node " + std::to_string(id));
    return *grads_[id];
}

Tensor& Gradients::ensure(ValueId id, const Shape& shape) {
    if (!grads_[id].has_value()) grads_[id].emplace(shape);
    return *grads_[id];
}

void Gradients::accumulate(ValueId id, const Tensor& shape_like, const Tensor& delta) {
    Tensor& g = ensure(id, shape_like.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// ---- Tape: recording ---------------------------------------------------------

ValueId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

Tensor Tape::eval(const Node& node) const {
    switch (node.kind) {
        case OpKind::Input:
            return node.value;
        case OpKind::Permute:
            return permute_axes(nodes_[node.args[0]].value, node.perm);
        case OpKind::Unfold:
            return as_tensor(fa::unfold(nodes_[node.args[0]].value, node.perm));
        case OpKind::Fold:
            return fa::fold(as_matrix(nodes_[node.args[0]].value), node.perm, node.fold_shape);
        case OpKind::MatMul:
            return as_tensor(fa::matmul(as_matrix(nodes_[node.args[0]].value),
                                        as_matrix(nodes_[node.args[1]].value)));
        case OpKind::RowSoftmax:
            return as_tensor(fa::row_softmax(as_matrix(nodes_[node.args[0]].value)));
        case OpKind::ChannelLinear: {
            const Tensor& x = nodes_[node.args[0]].value;
            const Matrix w = as_matrix(nodes_[node.args[1]].value);
            if (node.args.size() == 3)
                return fa::channel_linear(x, w, nodes_[node.args[2]].value.values());
            return fa::channel_linear(x, w);
        }
        case OpKind::Add: {
            const Tensor& a = nodes_[node.args[0]].value;
            const Tensor& b = nodes_[node.args[1]].value;
            if (!same_shape(a, b)) throw std::invalid_argument("tape add: shape mismatch");
            Tensor out = a;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
            return out;
        }
        case OpKind::Mul: {
            const Tensor& a = nodes_[node.args[0]].value;
            const Tensor& b = nodes_[node.args[1]].value;
            if (!same_shape(a, b)) throw std::invalid_argument("tape mul: shape mismatch");
            Tensor out = a;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
            return out;
        }
        case OpKind::Sum: {
            const Tensor& a = nodes_[node.args[0]].value;
            double acc = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
            return Tensor({1}, {acc});
        }
    }
    throw std::logic_error("tape: unsupported primitive");
}

ValueId Tape::input(Tensor value, std::string label) {
    Node n{OpKind::Input, std::move(label), {}, std::move(value), {}, {}};
    return push(std::move(n));
}

ValueId Tape::permute(ValueId x, Permutation p) {
    Node n{OpKind::Permute, "permute", {x}, {}, std::move(p), {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::unfold(ValueId x, Permutation p) {
    Node n{OpKind::Unfold, "unfold", {x}, {}, std::move(p), {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::fold(ValueId m, Permutation p, Shape original_shape) {
    Node n{OpKind::Fold, "fold", {m}, {}, std::move(p), std::move(original_shape)};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::matmul(ValueId a, ValueId b) {
    Node n{OpKind::MatMul, "matmul", {a, b}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::row_softmax(ValueId m) {
    Node n{OpKind::RowSoftmax, "row_softmax", {m}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::channel_linear(ValueId x, ValueId w) {
    Node n{OpKind::ChannelLinear, "channel_linear", {x, w}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::channel_linear(ValueId x, ValueId w, ValueId b) {
    if (nodes_[b].value.rank() != 1) throw std::invalid_argument("tape channel_linear: bias must be rank 1");
    Node n{OpKind::ChannelLinear, "channel_linear", {x, w, b}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::add(ValueId a, ValueId b) {
    Node n{OpKind::Add, "add", {a, b}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::mul(ValueId a, ValueId b) {
    Node n{OpKind::Mul, "mul", {a, b}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

ValueId Tape::sum(ValueId x) {
    Node n{OpKind::Sum, "sum", {x}, {}, {}, {}};
    n.value = eval(n);
    return push(std::move(n));
}

double Tape::scalar(ValueId id) const {
    const Tensor& v = nodes_[id].value;
    if (v.size() != 1) throw std::invalid_argument("tape scalar: node is not a single value");
    return v[0];
}

void Tape::set_input(ValueId id, Tensor value) {
    Node& n = nodes_[id];
    if (n.kind != OpKind::Input) throw std::invalid_argument("tape set_input: node is not a leaf");
    if (value.shape() != n.value.shape())
        throw std::invalid_argument("tape set_input: shape mismatch");
    n.value = std::move(value);
}

void Tape::replay() {
    for (Node& n : nodes_)
        if (n.kind != OpKind::Input) n.value = eval(n);
}

// ---- Tape: backward ----------------------------------------------------------

Gradients Tape::backward(ValueId output, const Tensor& seed) const {
    if (output >= nodes_.size()) throw std::out_of_range("backward: unknown output node");
    if (seed.shape() != nodes_[output].value.shape())
        throw std::invalid_argument("backward: seed shape does not match output shape");

    Gradients grads(nodes_.size());
    grads.accumulate(output, nodes_[output].value, seed);

    for (std::size_t id = nodes_.size(); id-- > 0;) {
        if (!grads.has(id)) continue;
        const Node& n = nodes_[id];
        const Tensor& g = grads.grad(id);
        check_finite(g, id, n.label, "backward");
        switch (n.kind) {
            case OpKind::Input:
                break;
            case OpKind::Permute:
                grads.accumulate(n.args[0], nodes_[n.args[0]].value, permute_axes(g, n.perm.inverse()));
                break;
            case OpKind::Unfold:
                // Adjoint of unfold is fold back onto the source shape.
                grads.accumulate(n.args[0], nodes_[n.args[0]].value,
                                 fa::fold(as_matrix(g), n.perm, nodes_[n.args[0]].value.shape()));
                break;
            case OpKind::Fold:
                grads.accumulate(n.args[0], nodes_[n.args[0]].value, as_tensor(fa::unfold(g, n.perm)));
                break;
            case OpKind::MatMul: {
                const Matrix ga = fa::matmul(as_matrix(g), fa::transpose(as_matrix(nodes_[n.args[1]].value)));
                const Matrix gb = fa::matmul(fa::transpose(as_matrix(nodes_[n.args[0]].value)), as_matrix(g));
                grads.accumulate(n.args[0], nodes_[n.args[0]].value, as_tensor(ga));
                grads.accumulate(n.args[1], nodes_[n.args[1]].value, as_tensor(gb));
                break;
            }
            case OpKind::RowSoftmax: {
                // Saved softmax output s: dL_j = (g_j - <g_row, s_row>) * s_j.
                const Tensor& s = n.value;
                const std::size_t rows = s.shape()[0], cols = s.shape()[1];
                Tensor dx(s.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * s[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c)
                        dx[r * cols + c] = (g[r * cols + c] - dot) * s[r * cols + c];
                }
                grads.accumulate(n.args[0], nodes_[n.args[0]].value, dx);
                break;
            }
            case OpKind::ChannelLinear: {
                const Tensor& x = nodes_[n.args[0]].value;
                const Matrix w = as_matrix(nodes_[n.args[1]].value);
                const std::size_t in_c = x.channels();
                const std::size_t out_c = w.rows;
                const std::size_t positions = x.size() / in_c;
                Tensor gx(x.shape());
                Tensor gw(nodes_[n.args[1]].value.shape());
                for (std::size_t pos = 0; pos < positions; ++pos) {
                    const double* gy = g.data() + pos * out_c;
                    const double* xi = x.data() + pos * in_c;
                    for (std::size_t o = 0; o < out_c; ++o) {
                        const double go = gy[o];
                        for (std::size_t c = 0; c < in_c; ++c) {
                            gx[pos * in_c + c] += w(o, c) * go;
                            gw[o * in_c + c] += go * xi[c];
                        }
                    }
                }
                grads.accumulate(n.args[0], x, gx);
                grads.accumulate(n.args[1], nodes_[n.args[1]].value, gw);
                if (n.args.size() == 3) {
                    Tensor gb(nodes_[n.args[2]].value.shape());
                    for (std::size_t pos = 0; pos < positions; ++pos)
                        for (std::size_t o = 0; o < out_c; ++o) gb[o] += g[pos * out_c + o];
                    grads.accumulate(n.args[2], nodes_[n.args[2]].value, gb);
                }
                break;
            }
            case OpKind::Add:
                grads.accumulate(n.args[0], nodes_[n.args[0]].value, g);
                grads.accumulate(n.args[1], nodes_[n.args[1]].value, g);
                break;
            case OpKind::Mul: {
                const Tensor& a = nodes_[n.args[0]].value;
                const Tensor& b = nodes_[n.args[1]].value;
                Tensor ga(a.shape()), gb(b.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] * b[i];
                    gb[i] = g[i] * a[i];
                }
                grads.accumulate(n.args[0], a, ga);
                grads.accumulate(n.args[1], b, gb);
                break;
            }
            case OpKind::Sum: {
                const Tensor& a = nodes_[n.args[0]].value;
                grads.accumulate(n.args[0], a, Tensor::full(a.shape(), g[0]));
                break;
            }
        }
    }
    return grads;
}

// ---- Folded-attention graph ----------------------------------------------------

FaRecording record_folded_attention(Tape& tape, const Tensor& x, const FaParams& params) {
    if (!params.theta_per_mode.empty() || !params.phi_per_mode.empty())
        throw std::invalid_argument("record_folded_attention: per-mode parameters are not recordable");
    if (!params.theta.bias.empty() || !params.phi.bias.empty() || !params.g.bias.empty())
        throw std::invalid_argument("record_folded_attention: biased embeddings are not recordable");

    FaRecording rec;
    rec.x = tape.input(x, "x");
    rec.theta_w = tape.input(Tensor({params.theta.weight.rows, params.theta.weight.cols},
                                    params.theta.weight.data),
                             "theta");
    rec.phi_w = tape.input(Tensor({params.phi.weight.rows, params.phi.weight.cols}, params.phi.weight.data),
                           "phi");
    rec.g_w = tape.input(Tensor({params.g.weight.rows, params.g.weight.cols}, params.g.weight.data), "g");

    const auto order = params.mode_order.empty() ? canonical_mode_order(x.rank()) : params.mode_order;

    const ValueId theta_x = tape.channel_linear(rec.x, rec.theta_w);
    const ValueId phi_x = tape.channel_linear(rec.x, rec.phi_w);
    std::vector<ValueId> affinities;
    affinities.reserve(order.size());
    for (const Permutation& p : order) {
        const ValueId logits = tape.matmul(tape.unfold(theta_x, p), tape.transpose(tape.unfold(phi_x, p)));
        affinities.push_back(tape.row_softmax(logits));
    }

    ValueId z = params.reapply_g ? rec.x : tape.channel_linear(rec.x, rec.g_w);
    for (std::size_t s = 0; s < order.size(); ++s) {
        if (params.reapply_g) z = tape.channel_linear(z, rec.g_w);
        z = tape.fold(tape.matmul(affinities[s], tape.unfold(z, order[s])), order[s], x.shape());
    }
    if (params.residual) z = tape.add(z, rec.x);
    rec.output = z;
    return rec;
}

// ---- Finite differences --------------------------------------------------------

FiniteDiffReport finite_diff_check(Tape& tape, ValueId loss, std::span<const ValueId> leaves,
                                   double step) {
    if (tape.value(loss).size() != 1)
        throw std::invalid_argument("finite_diff_check: loss node must be scalar");

    const Gradients analytic = tape.backward(loss, Tensor({1}, {1.0}));

    FiniteDiffReport report;
    for (ValueId leaf : leaves) {
        const Tensor original = tape.value(leaf);
        const std::string& label = tape.node(leaf).label;
        for (std::size_t i = 0; i < original.size(); ++i) {
            Tensor bumped = original;
            bumped[i] = original[i] + step;
            tape.set_input(leaf, bumped);
            tape.replay();
            const double up = tape.scalar(loss);

            bumped[i] = original[i] - step;
            tape.set_input(leaf, bumped);
            tape.replay();
            const double down = tape.scalar(loss);

            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.has(leaf) ? analytic.grad(leaf)[i] : 0.0;
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_leaf = label;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        tape.set_input(leaf, original);
    }
    tape.replay();
    return report;
}

}  // namespace fa::ad
