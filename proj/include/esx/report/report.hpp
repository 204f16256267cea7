#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "esx/detect/finding.hpp"
#include "esx/driver/analyze.hpp"
#include "esx/exec/state.hpp"
#include "esx/loader/package.hpp"

namespace esx::report {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr std::size_t kMaxProvenance = 16;

class ReportError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct EcallSection {
    unsigned index = 0;
    std::string name;
    exec::Stats stats;
    std::vector<detect::Finding> findings;
    friend bool operator==(const EcallSection&, const EcallSection&) = default;
};

struct Report {
    std::string tool_version = kToolVersion;
    std::string package;
    std::uint64_t seed = 0;
    exec::Limits limits;
    std::vector<EcallSection> ecalls;
    friend bool operator==(const Report&, const Report&) = default;

    [[nodiscard]] std::size_t finding_count() const;
    [[nodiscard]] const detect::Finding* find(const std::string& id) const;
};

// Keeps the first kMaxProvenance-1 entries plus an elision marker unless
// `verbose` is set.
std::vector<detect::ProvenanceEntry> flatten_provenance(const std::vector<detect::ProvenanceEntry>& chain,
                                                        bool verbose);

Report build_report(const loader::EnclavePackage& pkg, const std::vector<driver::EcallResult>& results,
                    const exec::Limits& limits, std::uint64_t seed, bool verbose_provenance);

std::string to_json(const Report& r, int indent = 2);
// Throws ReportError on malformed input.
Report from_json(const std::string& text);

std::string to_text(const Report& r);
// Multi-section digest of one finding; throws ReportError for unknown ids.
std::string explain(const Report& r, const std::string& id);

struct Confirmed {};
struct Diverged {
    std::size_t step = 0;
    std::string reason;
};
using ReplayResult = std::variant<Confirmed, Diverged>;

// Concrete re-execution of the finding's ECALL under its witness. Throws
// std::invalid_argument when the finding has no witness.
ReplayResult replay_witness(const loader::EnclavePackage& pkg, const detect::Finding& finding);

} // namespace esx::report
