#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fa/harness.hpp"

namespace {

using fa::harness::CheckResult;
using fa::harness::RunConfig;
using fa::harness::SuiteReport;

constexpr int kExitPass = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitRejected = 2;

std::array<std::size_t, 4> parse_shape(const std::string& text) {
    std::array<std::size_t, 4> shape{};
    std::istringstream is(text);
    std::string part;
    std::size_t i = 0;
    while (std::getline(is, part, ',')) {
        if (i >= 4) throw CLI::ValidationError("--shape", "expected exactly four sizes H,W,D,C");
        const long v = std::stol(part);
        if (v < 1) throw CLI::ValidationError("--shape", "sizes must be >= 1");
        shape[i++] = static_cast<std::size_t>(v);
    }
    if (i != 4) throw CLI::ValidationError("--shape", "expected exactly four sizes H,W,D,C");
    return shape;
}

void print_report(const SuiteReport& report) {
    for (const CheckResult& c : report.checks) {
        std::printf("[%s] %-34s metric=%-12.5g threshold=%-12.5g %s\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.metric, c.threshold, c.gating ? "" : "(informational)");
        if (!c.detail.empty()) std::printf("       %s\n", c.detail.c_str());
    }
    std::printf("verdict: %s\n", report.verdict() ? "pass" : "fail");
}

void write_report(const SuiteReport& report, const RunConfig& cfg) {
    if (cfg.out_path.empty()) return;
    const std::string content =
        cfg.format == "csv" ? fa::harness::report_to_csv(report) : fa::harness::report_to_json(report);
    fa::harness::write_text_file(cfg.out_path, content);
    std::printf("report written to %s\n", cfg.out_path.c_str());
}

void emit_cost_table(const fa::harness::CostRun& run, const RunConfig& cfg) {
    const std::string table = cfg.format == "csv" ? fa::cost::table_to_csv(run.table)
                                                  : fa::cost::table_to_json(run.table);
    if (cfg.out_path.empty()) {
        std::fputs(table.c_str(), stdout);
    } else {
        fa::harness::write_text_file(cfg.out_path, table);
        std::printf("scaling table written to %s\n", cfg.out_path.c_str());
    }
}

void add_common_options(CLI::App* cmd, RunConfig& cfg, std::string& shape_text) {
    cmd->add_option("--shape", shape_text, "Tensor sizes as H,W,D,C (channel last)");
    cmd->add_option("--trials", cfg.trials, "Seeded trials to run")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", cfg.seed, "Base seed; (seed, trial) fixes every draw");
    cmd->add_option("--out", cfg.out_path, "Write the report (or cost table) to this path");
    cmd->add_option("--format", cfg.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
    cmd->add_flag("--reapply-g", cfg.reapply_g,
                  "Re-embed with g at every cascade stage (diverges from the enumeration oracle)");
    cmd->add_option("--rtol", cfg.rtol, "Gradient-check relative tolerance");
    cmd->add_option("--atol", cfg.atol, "Equivalence absolute tolerance");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"folded-attention verification harness"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string shape_text;
    std::vector<std::uint64_t> sizes;

    CLI::App* equivalence = app.add_subcommand(
        "equivalence", "Folded attention vs the rank-one enumeration oracle, plus structure checks");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "Finite-difference check of every FA gradient");
    CLI::App* cost = app.add_subcommand("cost", "Analytic FLOPs/storage table for SA, naive, DA and FA");
    CLI::App* bench = app.add_subcommand("bench", "Wall-clock comparison of FA and SA forwards");
    CLI::App* all = app.add_subcommand("all", "Run every verification command");

    for (CLI::App* cmd : {equivalence, gradcheck, cost, bench, all}) add_common_options(cmd, cfg, shape_text);
    for (CLI::App* cmd : {cost, all})
        cmd->add_option("--sizes", sizes, "Equal-dims sweep for the scaling table")->delimiter(',');

    try {
        app.parse(argc, argv);
        if (!shape_text.empty()) cfg.shape = parse_shape(shape_text);
        if (!sizes.empty()) cfg.cost_sizes = sizes;

        SuiteReport combined;
        if (equivalence->parsed()) {
            cfg.command = "equivalence";
            combined = fa::harness::run_equivalence(cfg);
        } else if (gradcheck->parsed()) {
            cfg.command = "gradcheck";
            combined = fa::harness::run_gradcheck(cfg);
        } else if (bench->parsed()) {
            cfg.command = "bench";
            combined = fa::harness::run_bench(cfg);
        } else if (cost->parsed()) {
            cfg.command = "cost";
            const fa::harness::CostRun run = fa::harness::run_cost(cfg);
            print_report(run.report);
            emit_cost_table(run, cfg);
            return fa::harness::exit_code_for(run.report);
        } else {
            cfg.command = "all";
            combined.command = "all";
            combined.config = cfg;
            for (const SuiteReport& part :
                 {fa::harness::run_equivalence(cfg), fa::harness::run_gradcheck(cfg),
                  fa::harness::run_cost(cfg).report, fa::harness::run_bench(cfg)}) {
                combined.checks.insert(combined.checks.end(), part.checks.begin(), part.checks.end());
            }
        }
        print_report(combined);
        write_report(combined, cfg);
        return fa::harness::exit_code_for(combined);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitPass : kExitRejected;
    } catch (const fa::GuardError& e) {
        std::cerr << "rejected: " << e.what() << "\n";
        return kExitRejected;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRejected;
    }
}
