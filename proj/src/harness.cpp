#include "fa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fa/autodiff.hpp"

namespace fa::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Shape shape_of(const RunConfig& cfg) {
    return Shape(cfg.shape.begin(), cfg.shape.end());
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

bool SuiteReport::verdict() const {
    for (const CheckResult& c : checks)
        if (c.gating && !c.pass) return false;
    return true;
}

// ---- Rng ---------------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
}

std::uint64_t Rng::integer(std::uint64_t bound) {
    // Modulo is fine here: bounds are tiny against 2^64.
    return bound ? eng_() % bound : 0;
}

Rng trial_rng(std::uint64_t seed, std::uint64_t trial) { return Rng(mix64(seed + mix64(trial))); }

Tensor random_tensor(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

namespace {

Matrix random_weight(std::size_t out_c, std::size_t in_c, Rng& rng) {
    Matrix w(out_c, in_c);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_c));
    for (double& v : w.data) v = rng.normal() * scale;
    return w;
}

}  // namespace

FaParams random_params(std::size_t channels, Rng& rng) {
    FaParams p;
    p.theta = {random_weight(channels, channels, rng), {}};
    p.phi = {random_weight(channels, channels, rng), {}};
    p.g = {random_weight(channels, channels, rng), {}};
    return p;
}

// ---- Reference self-attention --------------------------------------------------

Tensor reference_self_attention(const Tensor& x, const FaParams& params) {
    const std::size_t c = x.channels();
    const std::size_t n = x.size() / c;
    const std::size_t e = params.embed_dim();
    const Matrix& wt = params.theta.weight;
    const Matrix& wp = params.phi.weight;
    const Matrix& wg = params.g.weight;

    auto embed = [&](const Matrix& w, std::size_t out_c) {
        std::vector<double> out(n * out_c, 0.0);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t o = 0; o < out_c; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < c; ++i) acc += w.data[o * c + i] * x[p * c + i];
                out[p * out_c + o] = acc;
            }
        return out;
    };
    const std::vector<double> theta = embed(wt, e);
    const std::vector<double> phi = embed(wp, e);
    const std::vector<double> gx = embed(wg, c);

    std::vector<double> affinity(n * n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            double acc = 0.0;
            for (std::size_t k = 0; k < e; ++k) acc += theta[p * e + k] * phi[q * e + k];
            affinity[p * n + q] = acc;
        }
        double mx = affinity[p * n];
        for (std::size_t q = 1; q < n; ++q) mx = std::max(mx, affinity[p * n + q]);
        double sum = 0.0;
        for (std::size_t q = 0; q < n; ++q) {
            affinity[p * n + q] = std::exp(affinity[p * n + q] - mx);
            sum += affinity[p * n + q];
        }
        for (std::size_t q = 0; q < n; ++q) affinity[p * n + q] /= sum;
    }

    Tensor z(x.shape());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t o = 0; o < c; ++o) {
            double acc = 0.0;
            for (std::size_t q = 0; q < n; ++q) acc += affinity[p * n + q] * gx[q * c + o];
            z[p * c + o] = acc;
        }
    if (params.residual)
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += x[i];
    return z;
}

// ---- run_equivalence ------------------------------------------------------------

SuiteReport run_equivalence(const RunConfig& cfg) {
    const Shape shape = shape_of(cfg);
    const std::size_t total = shape_product(shape);
    if (total > kOracleElementGuard)
        throw GuardError("equivalence: shape " + shape_to_string(shape) + " has " + std::to_string(total) +
                         " elements, over the " + std::to_string(kOracleElementGuard) + "-element oracle guard");
    if (cfg.trials < 1) throw GuardError("equivalence: trials must be >= 1");

    SuiteReport report;
    report.command = "equivalence";
    report.config = cfg;

    CheckResult fa_vs_oracle{"fa_vs_oracle", true, !cfg.reapply_g, 0.0, cfg.atol,
                             cfg.reapply_g ? "informational: reapply_g diverges from the g-once oracle" : "",
                             0.0};
    CheckResult sa_vs_explicit{"sa_vs_explicit_affinity", true, true, 0.0, cfg.atol, "", 0.0};
    CheckResult rank_one{"rank_one_unfoldings", true, true, 0.0, 1e-10, "sigma2/sigma1 over all mode unfoldings", 0.0};
    CheckResult affinity_sums{"affinity_tensor_sums", true, true, 0.0, 1e-10, "|sum(A_v) - 1|", 0.0};
    CheckResult row_stochastic{"sub_affinity_rows", true, true, 0.0, 1e-12, "|row sum - 1| and entries in (0,1)", 0.0};
    CheckResult mode_order{"mode_order_invariance", true, !cfg.reapply_g, 0.0, cfg.atol,
                           cfg.reapply_g ? "informational: stages are not order-free when g is reapplied" : "",
                           0.0};

    const auto start = Clock::now();
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        Rng rng = trial_rng(cfg.seed, trial);
        const Tensor x = random_tensor(shape, rng);
        FaParams params = random_params(shape.back(), rng);
        params.reapply_g = cfg.reapply_g;

        const Tensor fa_out = folded_attention(x, params);
        const Tensor oracle = oracle_aggregate(x, params);
        fa_vs_oracle.metric = std::max(fa_vs_oracle.metric, max_abs_diff(fa_out, oracle));

        const Tensor sa_out = self_attention(x, params);
        sa_vs_explicit.metric = std::max(sa_vs_explicit.metric, max_abs_diff(sa_out, reference_self_attention(x, params)));

        const auto subs = compute_all_sub_affinities(x, params);
        for (const SubAffinity& s : subs)
            for (std::size_t r = 0; r < s.m.rows; ++r) {
                double sum = 0.0;
                for (std::size_t cc = 0; cc < s.m.cols; ++cc) {
                    const double v = s.m(r, cc);
                    sum += v;
                    if (v <= 0.0 || v >= 1.0 + 1e-12) row_stochastic.pass = false;
                }
                row_stochastic.metric = std::max(row_stochastic.metric, std::abs(sum - 1.0));
            }

        for (int pick = 0; pick < 2; ++pick) {
            std::vector<std::size_t> anchor(shape.size());
            for (std::size_t m = 0; m < shape.size(); ++m) anchor[m] = rng.integer(shape[m]);
            const AffinityTensor av = rank_one_affinity(subs, anchor);
            double sum = 0.0;
            for (std::size_t i = 0; i < av.weights.size(); ++i) sum += av.weights[i];
            affinity_sums.metric = std::max(affinity_sums.metric, std::abs(sum - 1.0));
            for (std::size_t m = 0; m < shape.size(); ++m) {
                const SingularPair sv =
                    top_two_singular_values(unfold(av.weights, Permutation::mode_leading(m, shape.size())));
                if (sv.first > 0.0) rank_one.metric = std::max(rank_one.metric, sv.second / sv.first);
            }
        }

        FaParams reversed = params;
        reversed.mode_order = canonical_mode_order(shape.size());
        std::reverse(reversed.mode_order.begin(), reversed.mode_order.end());
        mode_order.metric = std::max(mode_order.metric, max_abs_diff(folded_attention(x, reversed), fa_out));
    }
    const double elapsed = seconds_since(start);

    for (CheckResult* c : {&fa_vs_oracle, &sa_vs_explicit, &rank_one, &affinity_sums, &row_stochastic, &mode_order}) {
        c->seconds = elapsed;
        if (c->metric > c->threshold) c->pass = false;
        report.checks.push_back(*c);
    }
    return report;
}

// ---- run_gradcheck --------------------------------------------------------------

SuiteReport run_gradcheck(const RunConfig& cfg) {
    const Shape shape = shape_of(cfg);
    const std::size_t total = shape_product(shape);
    if (total > 1000)
        throw GuardError("gradcheck: shape " + shape_to_string(shape) + " has " + std::to_string(total) +
                         " elements, over the 1000-element finite-difference guard");
    if (cfg.trials < 1) throw GuardError("gradcheck: trials must be >= 1");

    SuiteReport report;
    report.command = "gradcheck";
    report.config = cfg;

    CheckResult check{"fa_finite_difference", true, true, 0.0, cfg.rtol, "", 0.0};
    const auto start = Clock::now();
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        Rng rng = trial_rng(cfg.seed, trial);
        const Tensor x = random_tensor(shape, rng);
        FaParams params = random_params(shape.back(), rng);
        params.reapply_g = cfg.reapply_g;

        ad::Tape tape;
        const ad::FaRecording rec = ad::record_folded_attention(tape, x, params);
        const ad::ValueId loss = tape.sum(tape.mul(rec.output, rec.output));
        const std::array<ad::ValueId, 4> leaves{rec.x, rec.theta_w, rec.phi_w, rec.g_w};
        const ad::FiniteDiffReport fd = ad::finite_diff_check(tape, loss, leaves, kFaLossFdStep);
        if (fd.max_rel_err > check.metric) {
            check.metric = fd.max_rel_err;
            std::ostringstream os;
            os << "worst: trial " << trial << ", " << fd.worst_leaf << "[" << fd.worst_index
               << "], analytic " << fd.worst_analytic << ", numeric " << fd.worst_numeric;
            check.detail = os.str();
        }
    }
    check.seconds = seconds_since(start);
    check.pass = check.metric <= check.threshold;
    report.checks.push_back(check);
    return report;
}

// ---- run_cost -------------------------------------------------------------------

CostRun run_cost(const RunConfig& cfg) {
    if (cfg.cost_sizes.empty()) throw GuardError("cost: size sweep must be nonempty");

    CostRun out;
    out.report.command = "cost";
    out.report.config = cfg;

    std::vector<cost::ShapeSpec> sizes;
    sizes.reserve(cfg.cost_sizes.size());
    for (std::uint64_t s : cfg.cost_sizes) sizes.push_back(cost::ShapeSpec::cube(s));
    out.table = cost::scaling_table(sizes);

    const auto start = Clock::now();
    std::vector<double> xs, fa_flops, sa_flops;
    for (std::uint64_t s : cfg.cost_sizes) {
        xs.push_back(static_cast<double>(s));
        fa_flops.push_back(static_cast<double>(cost::cost_fa(cost::ShapeSpec::cube(s)).flops()));
        sa_flops.push_back(static_cast<double>(cost::cost_sa(cost::ShapeSpec::cube(s)).flops()));
    }

    CheckResult fa_slope{"fa_flops_loglog_slope", true, true, cost::loglog_slope(xs, fa_flops), 0.1,
                         "distance from slope 5 over the equal-dims sweep", 0.0};
    fa_slope.pass = std::abs(fa_slope.metric - 5.0) <= fa_slope.threshold;
    CheckResult sa_slope{"sa_flops_loglog_slope", true, true, cost::loglog_slope(xs, sa_flops), 0.1,
                         "distance from slope 7 over the equal-dims sweep", 0.0};
    sa_slope.pass = std::abs(sa_slope.metric - 7.0) <= sa_slope.threshold;

    const cost::CostReport ref_fa = cost::cost_fa(kReferenceShape);
    const cost::CostReport ref_sa = cost::cost_sa(kReferenceShape);
    const cost::CostReport ref_naive = cost::cost_naive_spatial_channel(kReferenceShape);

    CheckResult reduction{"fa_vs_sa_affinity_reduction_pct", true, true, 0.0, 99.99, "", 0.0};
    reduction.metric = 100.0 * (1.0 - static_cast<double>(ref_fa.affinity_elements) /
                                          static_cast<double>(ref_sa.affinity_elements));
    reduction.pass = reduction.metric >= reduction.threshold;
    {
        std::ostringstream os;
        os << "reference shape c=64,h=w=d=32: fa " << ref_fa.affinity_elements << " vs sa "
           << ref_sa.affinity_elements << " affinity elements";
        reduction.detail = os.str();
    }

    CheckResult naive_flag{"naive_flagged_infeasible", ref_naive.infeasible, true,
                           static_cast<double>(ref_naive.affinity_bytes),
                           static_cast<double>(cost::CostOptions{}.budget_bytes),
                           "naive (N*C)^2 affinity bytes vs budget", 0.0};

    CheckResult naive_reduction{"fa_vs_naive_affinity_reduction_pct", true, false, 0.0, 99.99, "", 0.0};
    naive_reduction.metric = 100.0 * (1.0 - static_cast<double>(ref_fa.affinity_elements) /
                                                static_cast<double>(ref_naive.affinity_elements));
    naive_reduction.pass = naive_reduction.metric >= naive_reduction.threshold;

    const double elapsed = seconds_since(start);
    for (CheckResult* c : {&fa_slope, &sa_slope, &reduction, &naive_flag, &naive_reduction}) {
        c->seconds = elapsed;
        out.report.checks.push_back(*c);
    }
    return out;
}

// ---- run_bench ------------------------------------------------------------------

SuiteReport run_bench(const RunConfig& cfg) {
    if (cfg.trials < 1) throw GuardError("bench: trials must be >= 1");
    const Shape shape = shape_of(cfg);

    SuiteReport report;
    report.command = "bench";
    report.config = cfg;

    std::vector<double> fa_ms, sa_ms;
    std::string sa_skip_reason;
    OpCounters fa_counters{}, sa_counters{};
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        Rng rng = trial_rng(cfg.seed, trial);
        const Tensor x = random_tensor(shape, rng);
        FaParams params = random_params(shape.back(), rng);
        params.reapply_g = cfg.reapply_g;

        op_counters().reset();
        auto t0 = Clock::now();
        const Tensor fa_out = folded_attention(x, params);
        fa_ms.push_back(seconds_since(t0) * 1e3);
        if (trial == 0) fa_counters = op_counters();
        (void)fa_out;

        try {
            op_counters().reset();
            t0 = Clock::now();
            const Tensor sa_out = self_attention(x, params);
            sa_ms.push_back(seconds_since(t0) * 1e3);
            if (trial == 0) sa_counters = op_counters();
            (void)sa_out;
        } catch (const GuardError& e) {
            sa_skip_reason = e.what();
        }
    }

    auto samples_detail = [](const std::vector<double>& ms, const OpCounters& counters) {
        std::ostringstream os;
        os << "samples_ms=[";
        for (std::size_t i = 0; i < ms.size(); ++i) os << (i ? "," : "") << ms[i];
        os << "]; flops{matmul=" << counters.matmul_flops << ",softmax=" << counters.softmax_flops
           << ",linear=" << counters.linear_flops << "}";
        return os.str();
    };

    CheckResult fa_check{"bench_fa_median_ms", true, false, median(fa_ms), 0.0,
                         samples_detail(fa_ms, fa_counters), 0.0};
    report.checks.push_back(fa_check);
    if (sa_ms.empty()) {
        report.checks.push_back({"bench_sa_skipped", true, false, 0.0, 0.0, sa_skip_reason, 0.0});
    } else {
        report.checks.push_back(
            {"bench_sa_median_ms", true, false, median(sa_ms), 0.0, samples_detail(sa_ms, sa_counters), 0.0});
    }
    return report;
}

// ---- Reports ----------------------------------------------------------------------

namespace {

nlohmann::json check_to_json(const CheckResult& c) {
    return {{"name", c.name},     {"pass", c.pass},           {"gating", c.gating},
            {"metric", c.metric}, {"threshold", c.threshold}, {"detail", c.detail},
            {"seconds", c.seconds}};
}

}  // namespace

std::string report_to_json(const SuiteReport& report) {
    nlohmann::json j;
    j["command"] = report.command;
    j["shape"] = report.config.shape;
    j["trials"] = report.config.trials;
    j["seed"] = report.config.seed;
    j["rtol"] = report.config.rtol;
    j["atol"] = report.config.atol;
    j["reapply_g"] = report.config.reapply_g;
    j["checks"] = nlohmann::json::array();
    for (const CheckResult& c : report.checks) j["checks"].push_back(check_to_json(c));
    j["verdict"] = report.verdict() ? "pass" : "fail";
    return j.dump(2) + "\n";
}

std::string report_to_csv(const SuiteReport& report) {
    std::ostringstream os;
    os << "name,pass,gating,metric,threshold,seconds\n";
    for (const CheckResult& c : report.checks)
        os << c.name << ',' << (c.pass ? 1 : 0) << ',' << (c.gating ? 1 : 0) << ',' << c.metric << ','
           << c.threshold << ',' << c.seconds << '\n';
    return os.str();
}

void validate_report_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("report JSON does not parse: ") + e.what());
    }
    const char* string_keys[] = {"command", "verdict"};
    for (const char* k : string_keys)
        if (!j.contains(k) || !j[k].is_string())
            throw std::runtime_error(std::string("report JSON missing string field ") + k);
    if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].size() != 4)
        throw std::runtime_error("report JSON: shape must be a 4-element array");
    for (const char* k : {"trials", "seed"})
        if (!j.contains(k) || !j[k].is_number_unsigned())
            throw std::runtime_error(std::string("report JSON missing unsigned field ") + k);
    if (!j.contains("checks") || !j["checks"].is_array())
        throw std::runtime_error("report JSON: checks must be an array");
    bool all_gating_pass = true;
    for (const auto& c : j["checks"]) {
        for (const char* k : {"name", "detail"})
            if (!c.contains(k) || !c[k].is_string())
                throw std::runtime_error(std::string("report JSON check missing string field ") + k);
        for (const char* k : {"pass", "gating"})
            if (!c.contains(k) || !c[k].is_boolean())
                throw std::runtime_error(std::string("report JSON check missing boolean field ") + k);
        for (const char* k : {"metric", "threshold", "seconds"})
            if (!c.contains(k) || !c[k].is_number())
                throw std::runtime_error(std::string("report JSON check missing numeric field ") + k);
        if (c["gating"].get<bool>() && !c["pass"].get<bool>()) all_gating_pass = false;
    }
    const std::string verdict = j["verdict"].get<std::string>();
    if (verdict != "pass" && verdict != "fail")
        throw std::runtime_error("report JSON: verdict must be pass or fail");
    if ((verdict == "pass") != all_gating_pass)
        throw std::runtime_error("report JSON: verdict does not match its checks");
}

void validate_report_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "name,pass,gating,metric,threshold,seconds")
        throw std::runtime_error("report CSV: unexpected header");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string field;
        std::vector<std::string> parts;
        while (std::getline(fields, field, ',')) parts.push_back(field);
        if (parts.size() != 6) throw std::runtime_error("report CSV: row does not have 6 fields");
        for (std::size_t i : {std::size_t{1}, std::size_t{2}})
            if (parts[i] != "0" && parts[i] != "1")
                throw std::runtime_error("report CSV: pass/gating must be 0 or 1");
        for (std::size_t i : {std::size_t{3}, std::size_t{4}, std::size_t{5}}) {
            std::size_t pos = 0;
            (void)std::stod(parts[i], &pos);
            if (pos != parts[i].size()) throw std::runtime_error("report CSV: non-numeric metric field");
        }
        ++rows;
    }
    if (rows == 0) throw std::runtime_error("report CSV: no rows");
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

int exit_code_for(const SuiteReport& report) { return report.verdict() ? 0 : 1; }

}  // namespace fa::harness
