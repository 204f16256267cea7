#include "esx/driver/corpus.hpp"

#include <algorithm>
#include <map>
#include <tuple>

namespace esx::driver {

namespace fs = std::filesystem;
using detect::Finding;

bool CorpusVerdict::ok() const {
    return problems.empty() && std::all_of(packages.begin(), packages.end(), [](const auto& p) { return p.ok(); });
}

std::vector<fs::path> corpus_packages(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

using Key = std::tuple<std::string, std::string, std::string, std::string>; // ecall, kind, label, severity

Key key_of(const Finding& f) {
    return {f.ecall_name, detect::kind_name(f.kind), f.label, detect::severity_name(f.severity)};
}

std::string describe(const Key& k) {
    return std::get<0>(k) + ": " + std::get<1>(k) + " " + std::get<3>(k) + " at " + std::get<2>(k);
}

} // namespace

PackageVerdict verify_package(const loader::EnclavePackage& pkg, const AnalyzeOptions& opts) {
    PackageVerdict v;
    v.name = pkg.name;
    auto results = analyze_package(pkg, opts);
    v.report = report::build_report(pkg, results, opts.limits, opts.seed, false);
    if (!pkg.expected) {
        v.problems.push_back("no expected.json");
        return v;
    }
    const auto& ex = *pkg.expected;
    v.variant = ex.variant;
    v.patterns = ex.patterns;

    std::map<Key, std::size_t> actual;
    for (const auto& e : v.report.ecalls) {
        for (const auto& f : e.findings) {
            ++actual[key_of(f)];
            v.kinds.insert(f.kind);
            if (f.severity == detect::Severity::High) {
                ++v.high;
            }
            if (f.confidence == detect::Confidence::Exact) {
                ++v.replayed;
                auto r = report::replay_witness(pkg, f);
                if (std::holds_alternative<report::Confirmed>(r)) {
                    ++v.confirmed;
                } else {
                    const auto& d = std::get<report::Diverged>(r);
                    v.problems.push_back("replay of " + f.id + " diverged at step " + std::to_string(d.step) + ": " +
                                         d.reason);
                }
            }
        }
    }
    std::set<Key> expected;
    for (const auto& f : ex.findings) {
        Key k{f.ecall, f.kind, f.label, f.severity};
        expected.insert(k);
        if (!actual.count(k)) {
            v.problems.push_back("missing " + describe(k));
        }
    }
    for (const auto& [k, n] : actual) {
        if (expected.count(k)) {
            continue;
        }
        if (ex.exhaustive && std::get<3>(k) == "high") {
            v.problems.push_back("unexpected " + describe(k));
        }
    }
    if (ex.variant == "patched" && v.high != 0) {
        v.problems.push_back("patched variant has " + std::to_string(v.high) + " high-severity finding(s)");
    }
    if (ex.variant == "vulnerable" && v.kinds.empty()) {
        v.problems.push_back("vulnerable variant produced no findings");
    }
    if (ex.variant == "clean" && v.report.finding_count() != 0) {
        v.problems.push_back("clean package has findings");
    }
    return v;
}

CorpusVerdict verify_corpus(const fs::path& dir, const AnalyzeOptions& opts) {
    CorpusVerdict cv;
    if (!fs::is_directory(dir)) {
        cv.problems.push_back("corpus directory " + dir.string() + " not found");
        return cv;
    }
    std::set<detect::FindingKind> kinds;
    std::set<std::string> patterns;
    for (const auto& p : corpus_packages(dir)) {
        PackageVerdict v;
        try {
            v = verify_package(loader::load_package(p), opts);
        } catch (const std::exception& e) {
            v.name = p.filename().string();
            v.problems.push_back(e.what());
        }
        if (v.variant == "vulnerable") {
            kinds.insert(v.kinds.begin(), v.kinds.end());
            patterns.insert(v.patterns.begin(), v.patterns.end());
        }
        cv.packages.push_back(std::move(v));
    }
    if (cv.packages.empty()) {
        cv.problems.push_back("corpus is empty");
    }
    for (auto k : {detect::FindingKind::ControlledJump, detect::FindingKind::ControlledWrite,
                   detect::FindingKind::NullDeref, detect::FindingKind::DoubleFetch}) {
        if (!kinds.count(k)) {
            cv.problems.push_back(std::string("no vulnerable package produces a ") + detect::kind_name(k));
        }
    }
    for (const char* p : {"P1", "P2", "P3", "P4", "P5"}) {
        if (!patterns.count(p)) {
            cv.problems.push_back(std::string("pattern ") + p + " is not exercised");
        }
    }
    return cv;
}

} // namespace esx::driver
