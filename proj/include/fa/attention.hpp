#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "fa/tensor.hpp"

namespace fa {

/// Thrown when an operation would exceed a configured size or memory budget.
/// The CLI maps this to its configuration-rejection exit code.
struct GuardError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Affine map applied along the channel axis; carrier for the theta, phi and
/// g embeddings.
struct LinearMap {
    Matrix weight;             // (out_channels, in_channels)
    std::vector<double> bias;  // empty = no bias

    static LinearMap identity(std::size_t channels) { return {Matrix::identity(channels), {}}; }
    static LinearMap zero(std::size_t out_c, std::size_t in_c) { return {Matrix(out_c, in_c, 0.0), {}}; }

    std::size_t out_dim() const { return weight.rows; }
    std::size_t in_dim() const { return weight.cols; }
    Tensor apply(const Tensor& x) const { return channel_linear(x, weight, bias); }
};

/// Parameters of the attention operators. theta and phi build affinity logits
/// and share one weight set across modes unless per-mode overrides are given;
/// g embeds the features that get aggregated and must preserve the channel
/// count so outputs keep the input shape.
struct FaParams {
    LinearMap theta;
    LinearMap phi;
    LinearMap g;

    /// Aggregation order. Empty means the canonical order: one mode-leading
    /// permutation per axis, axis 0 first.
    std::vector<Permutation> mode_order;

    /// Optional per-mode embeddings, indexed by axis. Empty = shared theta/phi.
    std::vector<LinearMap> theta_per_mode;
    std::vector<LinearMap> phi_per_mode;

    /// Re-apply g at every aggregation stage instead of once up front. The
    /// rank-one enumeration oracle only matches the default (single g).
    bool reapply_g = false;

    /// Add the input back onto the output. Off by default; no acceptance
    /// check uses it.
    bool residual = false;

    std::size_t embed_dim() const { return theta.out_dim(); }

    static FaParams identity(std::size_t channels);
};

/// Row-stochastic square matrix attending over one tensor axis.
struct SubAffinity {
    std::size_t mode = 0;  // axis this matrix mixes
    Matrix m;
};

/// Rank-one affinity tensor of one anchor element: entry at w is the product
/// of one sub-affinity row weight per mode. Entries are positive and sum to 1.
struct AffinityTensor {
    std::vector<std::size_t> anchor;
    Tensor weights;
};

/// oracle_aggregate refuses tensors with more elements than this; it is the
/// intentionally slow per-element reference.
inline constexpr std::size_t kOracleElementGuard = 10000;

/// Memory budget for the dense N x N affinity in self_attention. Reads
/// FA_MEM_BUDGET_BYTES from the environment, defaulting to 1 GiB.
std::size_t default_memory_budget();

std::vector<Permutation> canonical_mode_order(std::size_t rank);

/// Embedded-Gaussian self-attention baseline: Z = SM(theta(X) phi(X)^T) g(X)
/// over the N x C view of x, N = product of non-channel axes. Refuses inputs
/// whose N x N affinity would exceed the memory budget (0 = default budget).
Tensor self_attention(const Tensor& x, const FaParams& params, std::size_t memory_budget_bytes = 0);

/// A^p = SM(u(theta(X), p) u(phi(X), p)^T), always computed from the original
/// input. The result is d x d where d is x's length along p's leading axis;
/// for the channel axis this requires embed_dim == channels.
SubAffinity compute_sub_affinity(const Tensor& x, const FaParams& params, const Permutation& p);

/// One sub-affinity per entry of params.mode_order (shared theta/phi applied
/// once, so repeated calls cost one embedding pass).
std::vector<SubAffinity> compute_all_sub_affinities(const Tensor& x, const FaParams& params);

/// Mode-p stochastic mixing: unfold y along p, left-multiply by a.m, fold
/// back. An n-mode product with a row-stochastic matrix.
Tensor aggregate_mode(const Tensor& y, const SubAffinity& a, const Permutation& p);

/// Cascaded mode mixing applied to an already-embedded tensor, one stage per
/// permutation in order.
Tensor cascade_aggregate(const Tensor& y, std::span<const SubAffinity> subs,
                         std::span<const Permutation> order);

/// Folded attention: computes every sub-affinity from x, embeds once with g
/// (or per stage when params.reapply_g), then mixes along each mode in
/// params.mode_order. Output shape equals input shape.
Tensor folded_attention(const Tensor& x, const FaParams& params);

/// A_v for anchor v: outer product of one row per mode. subs must hold one
/// sub-affinity per axis, in axis order.
AffinityTensor rank_one_affinity(std::span<const SubAffinity> subs,
                                 std::span<const std::size_t> anchor);

/// Per-element enumeration reference: Z[v] = sum_w A_v[w] * g(x)[w]. Ground
/// truth for folded_attention; guarded to small tensors.
Tensor oracle_aggregate(const Tensor& x, const FaParams& params);

/// Same enumeration but over caller-supplied sub-affinities and an already
/// embedded tensor, so tests can force degenerate affinities directly.
Tensor oracle_aggregate_given(std::span<const SubAffinity> subs, const Tensor& gx);

/// The two-mode case from the mechanism's introductory illustration:
/// Z_ij = (a^row_i (x) a^col_j) . g(X) on a rank-2 tensor. Identical code
/// path to folded_attention, named for discoverability.
Tensor two_mode_illustration(const Tensor& x, const FaParams& params);

}  // namespace fa
