#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "esx/driver/analyze.hpp"
#include "esx/report/report.hpp"

namespace esx::driver {

struct PackageVerdict {
    std::string name;
    std::string variant; // vulnerable, patched or clean
    std::vector<std::string> patterns;
    std::set<detect::FindingKind> kinds; // kinds actually reported
    std::size_t high = 0;
    std::size_t replayed = 0;
    std::size_t confirmed = 0;
    std::vector<std::string> problems;
    report::Report report;

    [[nodiscard]] bool ok() const { return problems.empty(); }
};

struct CorpusVerdict {
    std::vector<PackageVerdict> packages;
    std::vector<std::string> problems; // corpus-wide: coverage, missing packages

    [[nodiscard]] bool ok() const;
};

// Package directories (those holding a manifest.json) in name order.
std::vector<std::filesystem::path> corpus_packages(const std::filesystem::path& dir);

// Compares one analysis against the package's expected.json: every expected
// (ecall, kind, label, severity) must be reported, unlisted high-severity
// findings are rejected when the list is exhaustive, and every exact witness
// must replay.
PackageVerdict verify_package(const loader::EnclavePackage& pkg, const AnalyzeOptions& opts);

// Runs verify_package over the corpus and checks that the vulnerable variants
// jointly cover all finding kinds and patterns P1..P5.
CorpusVerdict verify_corpus(const std::filesystem::path& dir, const AnalyzeOptions& opts);

} // namespace esx::driver
