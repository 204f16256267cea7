#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "esx/driver/analyze.hpp"
#include "esx/driver/corpus.hpp"
#include "esx/loader/package.hpp"
#include "esx/report/report.hpp"

#ifndef ESX_CORPUS_DIR
#define ESX_CORPUS_DIR "corpus"
#endif

namespace {

constexpr int kExitClean = 0;
constexpr int kExitFindings = 1;
constexpr int kExitError = 2;

struct LimitFlags {
    unsigned timeout_sec = 60;
    std::uint64_t max_states = esx::exec::Limits{}.max_states;
    std::uint64_t max_steps = esx::exec::Limits{}.max_steps;
    unsigned loop_bound = esx::exec::Limits{}.loop_bound;
    unsigned workers = std::max(1u, std::thread::hardware_concurrency());
    std::uint64_t seed = 0;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--timeout-sec", timeout_sec, "Per-ECALL wall-clock budget")->check(CLI::PositiveNumber);
        cmd.add_option("--max-states", max_states, "Per-ECALL state budget")->check(CLI::PositiveNumber);
        cmd.add_option("--max-steps", max_steps, "Per-path instruction budget")->check(CLI::PositiveNumber);
        cmd.add_option("--loop-bound", loop_bound, "Visits per branch site before truncation")
            ->check(CLI::PositiveNumber);
        cmd.add_option("--workers", workers, "Concurrent ECALL analyses")->check(CLI::PositiveNumber);
        cmd.add_option("--seed", seed, "Run seed recorded in the report");
    }

    esx::driver::AnalyzeOptions options() const {
        esx::driver::AnalyzeOptions o;
        o.limits.timeout = std::chrono::seconds(timeout_sec);
        o.limits.max_states = max_states;
        o.limits.max_steps = max_steps;
        o.limits.loop_bound = loop_bound;
        esx::exec::validate_limits(o.limits);
        o.seed = seed;
        o.workers = workers;
        return o;
    }
};

int cmd_analyze(const std::string& path, const LimitFlags& lf, const std::string& ecall_ref, bool json,
                const std::string& out, bool verbose) {
    esx::loader::EnclavePackage pkg;
    esx::driver::AnalyzeOptions opts;
    try {
        pkg = esx::loader::load_package(path);
        opts = lf.options();
    } catch (const std::exception& e) {
        std::cerr << "esx: " << e.what() << "\n";
        return kExitError;
    }
    for (const auto& w : pkg.warnings) {
        std::cerr << "esx: warning: " << w << "\n";
    }
    if (!ecall_ref.empty()) {
        auto idx = esx::driver::resolve_ecall(pkg, ecall_ref);
        if (!idx) {
            std::cerr << "esx: no ECALL '" << ecall_ref << "' in " << pkg.name << "\n";
            return kExitError;
        }
        opts.ecalls.push_back(*idx);
    }
    auto results = esx::driver::analyze_package(pkg, opts);
    auto rep = esx::report::build_report(pkg, results, opts.limits, opts.seed, verbose);
    std::string doc = json ? esx::report::to_json(rep) : esx::report::to_text(rep);
    if (out.empty()) {
        std::cout << doc;
    } else {
        std::ofstream f(out, std::ios::binary);
        f << doc;
        if (!f) {
            std::cerr << "esx: cannot write " << out << "\n";
            return kExitError;
        }
    }
    return rep.finding_count() == 0 ? kExitClean : kExitFindings;
}

int cmd_corpus_verify(const std::string& dir, const LimitFlags& lf) {
    esx::driver::AnalyzeOptions opts;
    try {
        opts = lf.options();
    } catch (const std::exception& e) {
        std::cerr << "esx: " << e.what() << "\n";
        return kExitError;
    }
    auto cv = esx::driver::verify_corpus(dir, opts);
    for (const auto& p : cv.packages) {
        std::cout << (p.ok() ? "ok   " : "FAIL ") << p.name << " (" << p.variant << "): "
                  << p.report.finding_count() << " finding(s), " << p.high << " high, " << p.confirmed << "/"
                  << p.replayed << " replayed\n";
        for (const auto& m : p.problems) {
            std::cout << "       " << m << "\n";
        }
    }
    for (const auto& m : cv.problems) {
        std::cout << "FAIL corpus: " << m << "\n";
    }
    std::cout << (cv.ok() ? "corpus verified" : "corpus verification failed") << "\n";
    return cv.ok() ? kExitClean : kExitFindings;
}

int cmd_explain(const std::string& id, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        std::cerr << "esx: cannot read " << path << "\n";
        return kExitError;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        std::cout << esx::report::explain(esx::report::from_json(ss.str()), id);
    } catch (const esx::report::ReportError& e) {
        std::cerr << "esx: " << e.what() << "\n";
        return kExitError;
    }
    return kExitClean;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Symbolic vulnerability scanner for SGX-style enclave packages"};
    app.require_subcommand(1);

    LimitFlags lf;
    std::string path, ecall_ref, out;
    bool json = false, verbose = false;
    auto* analyze = app.add_subcommand("analyze", "Explore every ECALL of a package and report findings");
    analyze->add_option("package", path, "Package directory")->required();
    analyze->add_option("--ecall", ecall_ref, "Analyze one ECALL, by index or name");
    analyze->add_flag("--json", json, "Emit the JSON report");
    analyze->add_option("--out", out, "Write the report to a file");
    analyze->add_flag("--verbose-provenance", verbose, "Keep full provenance chains");
    lf.add_to(*analyze);

    LimitFlags cf;
    std::string corpus = ESX_CORPUS_DIR;
    auto* verify = app.add_subcommand("corpus-verify", "Check the bundled corpus against its expected findings");
    verify->add_option("--corpus", corpus, "Corpus directory");
    cf.add_to(*verify);

    std::string id, report_path;
    auto* expl = app.add_subcommand("explain", "Print trace, provenance, constraints and witness of one finding");
    expl->add_option("id", id, "Finding id, e.g. 0.1")->required();
    expl->add_option("report", report_path, "JSON report file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitClean : kExitError;
    }
    if (*analyze) {
        return cmd_analyze(path, lf, ecall_ref, json, out, verbose);
    }
    if (*verify) {
        return cmd_corpus_verify(corpus, cf);
    }
    return cmd_explain(id, report_path);
}
