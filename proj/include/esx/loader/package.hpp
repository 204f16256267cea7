#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "esx/eir/program.hpp"

namespace esx::loader {

class LoadError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Range {
    std::uint64_t base = 0;
    std::uint64_t size = 0;

    [[nodiscard]] std::uint64_t end() const { return base + size; }
    [[nodiscard]] bool contains(std::uint64_t a) const { return a >= base && a - base < size; }
    [[nodiscard]] bool contains(const Range& r) const { return r.base >= base && r.end() <= end(); }
    [[nodiscard]] bool overlaps(const Range& r) const { return base < r.end() && r.base < end(); }
    friend bool operator==(const Range&, const Range&) = default;
};

struct Layout {
    Range enclave;
    Range code;
    Range globals;
    Range heap;
    Range stack;
    friend bool operator==(const Layout&, const Layout&) = default;
};

inline constexpr std::uint64_t kNullPageEnd = 0x1000;
inline constexpr std::uint64_t kDefaultMaxSize = 4096;

enum class ParamKind : std::uint8_t { Value, PtrIn, PtrOut, PtrInOut, UserCheck };

const char* param_kind_name(ParamKind k);

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::Value;
    unsigned width = 64;                // Value: bits (8, 16, 32 or 64)
    std::optional<std::uint64_t> size;  // pointer kinds: constant byte size
    std::string size_param;             // pointer kinds: name of a value param holding the size
    std::uint64_t max_size = kDefaultMaxSize; // bound when the size is symbolic
    friend bool operator==(const ParamSpec&, const ParamSpec&) = default;

    [[nodiscard]] bool is_buffer() const {
        return kind == ParamKind::PtrIn || kind == ParamKind::PtrOut || kind == ParamKind::PtrInOut;
    }
};

struct ECallSpec {
    unsigned index = 0;
    std::string name;
    std::string entry;
    std::vector<ParamSpec> params;
    friend bool operator==(const ECallSpec&, const ECallSpec&) = default;

    [[nodiscard]] std::optional<unsigned> param_index(const std::string& pname) const;
};

// Extra metadata for `ocall` bindings: registers holding an out-buffer
// pointer and its size at the call site.
struct OutBuffer {
    unsigned param_reg = 0;
    unsigned size_reg = 0;
    friend bool operator==(const OutBuffer&, const OutBuffer&) = default;
};

struct HookBinding {
    std::string builtin;
    std::optional<OutBuffer> out_buffer;
    friend bool operator==(const HookBinding&, const HookBinding&) = default;
};

const std::vector<std::string>& builtin_hook_ids();

struct ExpectedFinding {
    std::string ecall;
    std::string kind;
    std::string label;
    std::string severity;
    friend bool operator==(const ExpectedFinding&, const ExpectedFinding&) = default;
};

struct ExpectedFindings {
    bool exhaustive = true; // no high-severity findings beyond the list
    std::vector<ExpectedFinding> findings;
    std::string variant = "vulnerable"; // "patched" or "clean" (no bug to begin with)
    std::vector<std::string> patterns;  // bug classes P1..P5 the package exercises
    friend bool operator==(const ExpectedFindings&, const ExpectedFindings&) = default;
};

struct EnclavePackage {
    std::string name;
    Layout layout;
    eir::Program program;
    std::vector<ECallSpec> ecalls;
    std::map<std::string, HookBinding> hooks;
    std::optional<ExpectedFindings> expected;
    std::vector<std::string> warnings;
    friend bool operator==(const EnclavePackage&, const EnclavePackage&) = default;
};

// Directory with manifest.json and enclave.eir.
EnclavePackage load_package(const std::filesystem::path& dir);
EnclavePackage parse_package(const std::string& manifest_json, const std::string& eir_source);
// Validates an expected-findings document against a loaded package.
ExpectedFindings parse_expected(const std::string& json_text, const EnclavePackage& pkg);

std::vector<ECallSpec> ecall_table(const EnclavePackage& pkg);

} // namespace esx::loader
