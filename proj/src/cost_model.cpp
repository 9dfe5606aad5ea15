#include "fa/cost_model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fa::cost {

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out)) throw std::overflow_error("cost model: count overflows 64 bits");
    return out;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b) {
    std::uint64_t out = 0;
    if (__builtin_add_overflow(a, b, &out)) throw std::overflow_error("cost model: count overflows 64 bits");
    return out;
}

void check_positive(const ShapeSpec& s) {
    if (s.h == 0 || s.w == 0 || s.d == 0 || s.c == 0)
        throw std::invalid_argument("ShapeSpec: sizes must be positive");
}

void price_storage(CostReport& r, const CostOptions& opts) {
    r.affinity_bytes = mul(r.affinity_elements, opts.bytes_per_affinity_element);
    r.infeasible = r.affinity_bytes > opts.budget_bytes;
}

// Embedded-Gaussian SA over n tokens of ch features: three channel maps, an
// n x n affinity, softmax, and the aggregation product.
CostReport sa_core(std::uint64_t n, std::uint64_t ch) {
    CostReport r;
    r.embed_flops = mul(3, mul(2, mul(n, mul(ch, ch))));
    r.affinity_build_flops = mul(2, mul(mul(n, n), ch));
    r.softmax_flops = mul(4, mul(n, n));
    r.aggregation_flops = mul(2, mul(mul(n, n), ch));
    r.affinity_elements = mul(n, n);
    return r;
}

}  // namespace

std::uint64_t ShapeSpec::pixels() const { return mul(mul(h, w), d); }
std::uint64_t ShapeSpec::dim_sum() const { return add(add(h, w), add(d, c)); }
std::uint64_t ShapeSpec::total() const { return mul(pixels(), c); }

std::uint64_t CostReport::flops() const {
    return add(add(embed_flops, affinity_build_flops), add(aggregation_flops, extra_flops));
}

std::uint64_t CostReport::total_flops() const { return add(flops(), softmax_flops); }

CostReport cost_sa(const ShapeSpec& s, const CostOptions& opts) {
    check_positive(s);
    CostReport r = sa_core(s.pixels(), s.c);
    r.variant = "sa";
    r.shape = s;
    price_storage(r, opts);
    return r;
}

CostReport cost_naive_spatial_channel(const ShapeSpec& s, const CostOptions& opts) {
    check_positive(s);
    CostReport r = sa_core(s.total(), 1);
    r.variant = "naive";
    r.shape = s;
    price_storage(r, opts);
    return r;
}

CostReport cost_da(const ShapeSpec& s, const CostOptions& opts) {
    check_positive(s);
    CostReport r = sa_core(s.pixels(), s.c);
    r.variant = "da";
    r.shape = s;
    const std::uint64_t n = s.pixels();
    // Channel branch: c x c affinity built from and applied to the N x c view,
    // then an elementwise sum with the spatial branch.
    r.affinity_build_flops = add(r.affinity_build_flops, mul(2, mul(mul(s.c, s.c), n)));
    r.aggregation_flops = add(r.aggregation_flops, mul(2, mul(mul(s.c, s.c), n)));
    r.softmax_flops = add(r.softmax_flops, mul(4, mul(s.c, s.c)));
    r.extra_flops = mul(n, s.c);
    r.affinity_elements = add(r.affinity_elements, mul(s.c, s.c));
    price_storage(r, opts);
    return r;
}

CostReport cost_fa(const ShapeSpec& s, const CostOptions& opts) {
    check_positive(s);
    CostReport r;
    r.variant = "fa";
    r.shape = s;
    const std::uint64_t total = s.total();
    const std::uint64_t modes[4] = {s.h, s.w, s.d, s.c};
    r.embed_flops = mul(3, mul(2, mul(s.pixels(), mul(s.c, s.c))));
    for (std::uint64_t dm : modes) {
        r.affinity_build_flops = add(r.affinity_build_flops, mul(2, mul(dm, total)));
        r.aggregation_flops = add(r.aggregation_flops, mul(2, mul(dm, total)));
        r.softmax_flops = add(r.softmax_flops, mul(4, mul(dm, dm)));
        r.affinity_elements = add(r.affinity_elements, mul(dm, dm));
    }
    price_storage(r, opts);
    return r;
}

std::vector<CostReport> scaling_table(std::span<const ShapeSpec> sizes, const CostOptions& opts) {
    std::vector<CostReport> table;
    table.reserve(sizes.size() * 4);
    for (const ShapeSpec& s : sizes) {
        table.push_back(cost_sa(s, opts));
        table.push_back(cost_naive_spatial_channel(s, opts));
        table.push_back(cost_da(s, opts));
        table.push_back(cost_fa(s, opts));
    }
    return table;
}

TableRecord record_of(const CostReport& r) {
    return {r.variant, r.shape.h, r.shape.w, r.shape.d, r.shape.c,
            r.flops(), r.affinity_elements, r.affinity_bytes};
}

std::string table_to_csv(std::span<const CostReport> table) {
    std::ostringstream os;
    os << "variant,h,w,d,c,flops,affinity_elements,affinity_bytes\n";
    for (const CostReport& r : table) {
        const TableRecord rec = record_of(r);
        os << rec.variant << ',' << rec.h << ',' << rec.w << ',' << rec.d << ',' << rec.c << ','
           << rec.flops << ',' << rec.affinity_elements << ',' << rec.affinity_bytes << '\n';
    }
    return os.str();
}

std::string table_to_json(std::span<const CostReport> table) {
    nlohmann::json arr = nlohmann::json::array();
    for (const CostReport& r : table) {
        const TableRecord rec = record_of(r);
        arr.push_back({{"variant", rec.variant},
                       {"h", rec.h},
                       {"w", rec.w},
                       {"d", rec.d},
                       {"c", rec.c},
                       {"flops", rec.flops},
                       {"affinity_elements", rec.affinity_elements},
                       {"affinity_bytes", rec.affinity_bytes}});
    }
    return arr.dump(2) + "\n";
}

std::vector<TableRecord> parse_table_json(const std::string& text) {
    const nlohmann::json arr = nlohmann::json::parse(text);
    if (!arr.is_array()) throw std::invalid_argument("cost table JSON must be an array");
    std::vector<TableRecord> table;
    for (const auto& rec : arr) {
        table.push_back({rec.at("variant").get<std::string>(), rec.at("h").get<std::uint64_t>(),
                         rec.at("w").get<std::uint64_t>(), rec.at("d").get<std::uint64_t>(),
                         rec.at("c").get<std::uint64_t>(), rec.at("flops").get<std::uint64_t>(),
                         rec.at("affinity_elements").get<std::uint64_t>(),
                         rec.at("affinity_bytes").get<std::uint64_t>()});
    }
    return table;
}

double loglog_slope(std::span<const double> sizes, std::span<const double> values) {
    if (sizes.size() != values.size() || sizes.size() < 2)
        throw std::invalid_argument("loglog_slope: need at least two matching points");
    const std::size_t n = sizes.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(sizes[i]);
        my += std::log(values[i]);
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = std::log(sizes[i]) - mx;
        num += dx * (std::log(values[i]) - my);
        den += dx * dx;
    }
    return num / den;
}

}  // namespace fa::cost
