#pragma once

#include <optional>
#include <string>
#include <vector>

#include "esx/detect/finding.hpp"
#include "esx/exec/explorer.hpp"
#include "esx/loader/package.hpp"

namespace esx::driver {

struct EcallResult {
    unsigned index = 0;
    std::string name;
    exec::Stats stats;
    std::vector<detect::Finding> findings;
};

// Explores one ECALL end to end. Symbol ids are namespaced by the ECALL
// index so results do not depend on scheduling.
EcallResult analyze_ecall(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall,
                          const exec::Limits& limits, std::uint64_t seed, exec::Observer* observer = nullptr);

struct AnalyzeOptions {
    exec::Limits limits;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::vector<unsigned> ecalls; // empty: all
};

// Results ordered by ECALL index regardless of worker count.
std::vector<EcallResult> analyze_package(const loader::EnclavePackage& pkg, const AnalyzeOptions& opts);

// ECALL by decimal index or by name.
std::optional<unsigned> resolve_ecall(const loader::EnclavePackage& pkg, const std::string& ref);

} // namespace esx::driver
