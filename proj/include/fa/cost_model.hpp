#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fa::cost {

/// Four-axis problem size. N and M are the pixel count and dimension sum used
/// throughout the complexity accounting.
struct ShapeSpec {
    std::uint64_t h = 1, w = 1, d = 1, c = 1;

    std::uint64_t pixels() const;   // N = h*w*d
    std::uint64_t dim_sum() const;  // M = h+w+d+c
    std::uint64_t total() const;    // N*c

    static ShapeSpec cube(std::uint64_t s) { return {s, s, s, s}; }
};

struct CostOptions {
    /// Element width used to price affinity storage (GPU-practice default).
    std::uint64_t bytes_per_affinity_element = 4;
    /// Affinity storage above this is flagged infeasible.
    std::uint64_t budget_bytes = 64'000'000'000ull;
};

/// Exact operation counts for one attention variant. flops() is the
/// multiply-add count (2 ops per MAC) over the embeddings, the affinity
/// build and the aggregation; softmax exp/div ops are itemized separately at
/// 4 per affinity entry. All arithmetic is overflow-checked.
struct CostReport {
    std::string variant;
    ShapeSpec shape;

    std::uint64_t embed_flops = 0;           // theta/phi/g applications
    std::uint64_t affinity_build_flops = 0;  // logits
    std::uint64_t aggregation_flops = 0;     // affinity x features
    std::uint64_t extra_flops = 0;           // e.g. DA's elementwise sum
    std::uint64_t softmax_flops = 0;

    std::uint64_t affinity_elements = 0;
    std::uint64_t affinity_bytes = 0;
    bool infeasible = false;

    std::uint64_t flops() const;
    std::uint64_t total_flops() const;
};

/// Embedded-Gaussian self-attention over N pixels of C channels.
CostReport cost_sa(const ShapeSpec& s, const CostOptions& opts = {});

/// SA generalized to element granularity: N*C scalar tokens and an
/// (N*C)^2 affinity. Flagged infeasible once its storage passes the budget.
CostReport cost_naive_spatial_channel(const ShapeSpec& s, const CostOptions& opts = {});

/// Dual attention: spatial SA plus a C x C channel attention, outputs summed
/// elementwise.
CostReport cost_da(const ShapeSpec& s, const CostOptions& opts = {});

/// Folded attention: one d x d sub-affinity per axis and a cascade of mode
/// mixes. Aggregation is exactly Sum_modes 2*d_mode*(N*C) = 2*N*C*M, matching
/// the instrumented kernel counters.
CostReport cost_fa(const ShapeSpec& s, const CostOptions& opts = {});

/// One row per size per variant, in SA, naive, DA, FA order.
std::vector<CostReport> scaling_table(std::span<const ShapeSpec> sizes, const CostOptions& opts = {});

/// Flat interchange row shared by the CSV and JSON table formats.
struct TableRecord {
    std::string variant;
    std::uint64_t h = 0, w = 0, d = 0, c = 0;
    std::uint64_t flops = 0;
    std::uint64_t affinity_elements = 0;
    std::uint64_t affinity_bytes = 0;

    friend bool operator==(const TableRecord&, const TableRecord&) = default;
};

TableRecord record_of(const CostReport& r);

/// header: variant,h,w,d,c,flops,affinity_elements,affinity_bytes
std::string table_to_csv(std::span<const CostReport> table);

/// JSON array of the same records as the CSV.
std::string table_to_json(std::span<const CostReport> table);

std::vector<TableRecord> parse_table_json(const std::string& text);

/// Least-squares slope of log(values) against log(sizes).
double loglog_slope(std::span<const double> sizes, std::span<const double> values);

}  // namespace fa::cost
