#include "fa/attention.hpp"

#include <cstdlib>
#include <string>

namespace fa {

namespace {

void validate_params(const Tensor& x, const FaParams& params) {
    const std::size_t c = x.channels();
    if (params.theta.in_dim() != c)
        throw std::invalid_argument("FaParams: theta expects " + std::to_string(params.theta.in_dim()) +
                                    " channels, input has " + std::to_string(c));
    if (params.phi.in_dim() != c)
        throw std::invalid_argument("FaParams: phi channel count mismatch");
    if (params.phi.out_dim() != params.theta.out_dim())
        throw std::invalid_argument("FaParams: theta and phi must share one embed dimension");
    if (params.g.in_dim() != c || params.g.out_dim() != c)
        throw std::invalid_argument("FaParams: g must preserve the channel count");
    if (!params.theta_per_mode.empty() && params.theta_per_mode.size() != x.rank())
        throw std::invalid_argument("FaParams: per-mode theta list must cover every axis");
    if (!params.phi_per_mode.empty() && params.phi_per_mode.size() != x.rank())
        throw std::invalid_argument("FaParams: per-mode phi list must cover every axis");
}

std::vector<Permutation> effective_mode_order(const Tensor& x, const FaParams& params) {
    if (params.mode_order.empty()) return canonical_mode_order(x.rank());
    std::vector<bool> seen(x.rank(), false);
    for (const Permutation& p : params.mode_order) {
        if (p.rank() != x.rank())
            throw std::invalid_argument("FaParams: mode_order permutation rank mismatch");
        const std::size_t mode = p.leading_axis();
        if (seen[mode])
            throw std::invalid_argument("FaParams: mode " + std::to_string(mode) +
                                        " appears twice in mode_order");
        seen[mode] = true;
    }
    return params.mode_order;
}

const LinearMap& theta_for_mode(const FaParams& params, std::size_t mode) {
    return params.theta_per_mode.empty() ? params.theta : params.theta_per_mode[mode];
}

const LinearMap& phi_for_mode(const FaParams& params, std::size_t mode) {
    return params.phi_per_mode.empty() ? params.phi : params.phi_per_mode[mode];
}

// Softmax-normalized similarity of the mode-leading unfoldings.
SubAffinity sub_affinity_from_embeddings(const Tensor& x, const Tensor& theta_x, const Tensor& phi_x,
                                         const Permutation& p) {
    const std::size_t mode = p.leading_axis();
    const std::size_t side = x.shape()[mode];
    if (theta_x.shape()[mode] != side)
        throw std::invalid_argument(
            "compute_sub_affinity: embedding changes the length of axis " + std::to_string(mode) +
            " from " + std::to_string(side) + " to " + std::to_string(theta_x.shape()[mode]) +
            "; the channel-axis sub-affinity requires embed_dim == channels");
    Matrix logits = matmul(unfold(theta_x, p), transpose(unfold(phi_x, p)));
    return SubAffinity{mode, row_softmax(logits)};
}

Matrix as_rows_by_channels(const Tensor& x) {
    // Channel-last row-major buffer already is (positions, channels).
    const std::size_t c = x.channels();
    return Matrix(x.size() / c, c, x.values());
}

}  // namespace

FaParams FaParams::identity(std::size_t channels) {
    FaParams p;
    p.theta = LinearMap::identity(channels);
    p.phi = LinearMap::identity(channels);
    p.g = LinearMap::identity(channels);
    return p;
}

std::size_t default_memory_budget() {
    if (const char* env = std::getenv("FA_MEM_BUDGET_BYTES")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
        throw GuardError("FA_MEM_BUDGET_BYTES is not a positive integer");
    }
    return std::size_t{1} << 30;
}

std::vector<Permutation> canonical_mode_order(std::size_t rank) {
    std::vector<Permutation> order;
    order.reserve(rank);
    for (std::size_t mode = 0; mode < rank; ++mode) order.push_back(Permutation::mode_leading(mode, rank));
    return order;
}

Tensor self_attention(const Tensor& x, const FaParams& params, std::size_t memory_budget_bytes) {
    validate_params(x, params);
    const std::size_t budget = memory_budget_bytes ? memory_budget_bytes : default_memory_budget();
    const std::size_t n = x.size() / x.channels();
    if (n > budget / sizeof(double) / n)
        throw GuardError("self_attention: dense affinity needs " + std::to_string(n) + "x" +
                         std::to_string(n) + " doubles, over the " + std::to_string(budget) +
                         "-byte budget");
    Matrix theta_m = as_rows_by_channels(params.theta.apply(x));
    Matrix phi_m = as_rows_by_channels(params.phi.apply(x));
    Matrix g_m = as_rows_by_channels(params.g.apply(x));
    Matrix affinity = row_softmax(matmul(theta_m, transpose(phi_m)));
    Matrix z = matmul(affinity, g_m);
    Tensor out(x.shape(), std::move(z.data));
    if (params.residual)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    return out;
}

SubAffinity compute_sub_affinity(const Tensor& x, const FaParams& params, const Permutation& p) {
    validate_params(x, params);
    if (p.rank() != x.rank()) throw std::invalid_argument("compute_sub_affinity: permutation rank mismatch");
    const std::size_t mode = p.leading_axis();
    const Tensor theta_x = theta_for_mode(params, mode).apply(x);
    const Tensor phi_x = phi_for_mode(params, mode).apply(x);
    return sub_affinity_from_embeddings(x, theta_x, phi_x, p);
}

std::vector<SubAffinity> compute_all_sub_affinities(const Tensor& x, const FaParams& params) {
    validate_params(x, params);
    const auto order = effective_mode_order(x, params);
    std::vector<SubAffinity> subs;
    subs.reserve(order.size());
    if (params.theta_per_mode.empty() && params.phi_per_mode.empty()) {
        const Tensor theta_x = params.theta.apply(x);
        const Tensor phi_x = params.phi.apply(x);
        for (const Permutation& p : order) subs.push_back(sub_affinity_from_embeddings(x, theta_x, phi_x, p));
    } else {
        for (const Permutation& p : order) subs.push_back(compute_sub_affinity(x, params, p));
    }
    return subs;
}

Tensor aggregate_mode(const Tensor& y, const SubAffinity& a, const Permutation& p) {
    if (p.rank() != y.rank()) throw std::invalid_argument("aggregate_mode: permutation rank mismatch");
    const std::size_t side = y.shape()[p.leading_axis()];
    if (a.m.rows != a.m.cols || a.m.rows != side)
        throw std::invalid_argument("aggregate_mode: affinity is " + std::to_string(a.m.rows) + "x" +
                                    std::to_string(a.m.cols) + " but axis " +
                                    std::to_string(p.leading_axis()) + " has length " +
                                    std::to_string(side));
    return fold(matmul(a.m, unfold(y, p)), p, y.shape());
}

Tensor cascade_aggregate(const Tensor& y, std::span<const SubAffinity> subs,
                         std::span<const Permutation> order) {
    if (subs.size() != order.size())
        throw std::invalid_argument("cascade_aggregate: one sub-affinity per stage required");
    Tensor z = y;
    for (std::size_t s = 0; s < order.size(); ++s) z = aggregate_mode(z, subs[s], order[s]);
    return z;
}

Tensor folded_attention(const Tensor& x, const FaParams& params) {
    validate_params(x, params);
    const auto order = effective_mode_order(x, params);
    const auto subs = compute_all_sub_affinities(x, params);
    Tensor z = params.reapply_g ? x : params.g.apply(x);
    for (std::size_t s = 0; s < order.size(); ++s) {
        if (params.reapply_g) z = params.g.apply(z);
        z = aggregate_mode(z, subs[s], order[s]);
    }
    if (params.residual)
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += x[i];
    return z;
}

AffinityTensor rank_one_affinity(std::span<const SubAffinity> subs,
                                 std::span<const std::size_t> anchor) {
    const std::size_t k = subs.size();
    if (k == 0) throw std::invalid_argument("rank_one_affinity: no sub-affinities");
    if (anchor.size() != k) throw std::invalid_argument("rank_one_affinity: anchor rank mismatch");
    // One matrix per axis, in axis order.
    Shape shape(k);
    std::vector<const Matrix*> rows(k);
    std::vector<bool> covered(k, false);
    for (const SubAffinity& s : subs) {
        if (s.mode >= k || covered[s.mode])
            throw std::invalid_argument("rank_one_affinity: sub-affinities must cover each mode once");
        covered[s.mode] = true;
        shape[s.mode] = s.m.rows;
        rows[s.mode] = &s.m;
    }
    for (std::size_t m = 0; m < k; ++m)
        if (anchor[m] >= shape[m]) throw std::out_of_range("rank_one_affinity: anchor out of bounds");

    AffinityTensor out;
    out.anchor.assign(anchor.begin(), anchor.end());
    out.weights = Tensor(shape);
    std::vector<std::size_t> w(k, 0);
    std::size_t lin = 0;
    do {
        double prod = 1.0;
        for (std::size_t m = 0; m < k; ++m) prod *= (*rows[m])(anchor[m], w[m]);
        out.weights[lin++] = prod;
    } while (increment_index(w, shape));
    return out;
}

Tensor oracle_aggregate(const Tensor& x, const FaParams& params) {
    validate_params(x, params);
    if (x.size() > kOracleElementGuard)
        throw GuardError("oracle_aggregate: " + std::to_string(x.size()) + " elements exceeds the " +
                         std::to_string(kOracleElementGuard) + "-element guard");
    // Sub-affinities in axis order regardless of the cascade order.
    FaParams axis_ordered = params;
    axis_ordered.mode_order.clear();
    const auto subs = compute_all_sub_affinities(x, axis_ordered);
    return oracle_aggregate_given(subs, params.g.apply(x));
}

Tensor oracle_aggregate_given(std::span<const SubAffinity> subs, const Tensor& gx) {
    if (gx.size() > kOracleElementGuard)
        throw GuardError("oracle_aggregate_given: element guard exceeded");
    Tensor z(gx.shape());
    std::vector<std::size_t> v(gx.rank(), 0);
    std::size_t lin = 0;
    do {
        const AffinityTensor a = rank_one_affinity(subs, v);
        if (a.weights.shape() != gx.shape())
            throw std::invalid_argument("oracle_aggregate_given: affinity shape mismatch");
        double acc = 0.0;
        for (std::size_t wpos = 0; wpos < gx.size(); ++wpos) acc += a.weights[wpos] * gx[wpos];
        z[lin++] = acc;
    } while (increment_index(v, gx.shape()));
    return z;
}

Tensor two_mode_illustration(const Tensor& x, const FaParams& params) {
    if (x.rank() != 2) throw std::invalid_argument("two_mode_illustration: rank-2 input required");
    return folded_attention(x, params);
}

}  // namespace fa
