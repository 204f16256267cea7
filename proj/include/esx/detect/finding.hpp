#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esx/exec/state.hpp"

namespace esx::detect {

enum class FindingKind : std::uint8_t { ControlledJump, ControlledWrite, NullDeref, DoubleFetch };
enum class Severity : std::uint8_t { High, Low };
enum class Confidence : std::uint8_t { Exact, Possible };

const char* kind_name(FindingKind k);
const char* severity_name(Severity s);
const char* confidence_name(Confidence c);
std::optional<FindingKind> parse_kind(const std::string& s);
std::optional<Severity> parse_severity(const std::string& s);
std::optional<Confidence> parse_confidence(const std::string& s);

// Attacker roots reachable through a value's provenance.
enum Root : unsigned { kRootArg = 1, kRootHost = 2, kRootGlobal = 4 };

struct ProvenanceEntry {
    std::string label; // ecall-arg, host-memory, global-state, deref-of, enclave-alloc, constant
    std::optional<std::uint32_t> param;
    std::optional<std::uint32_t> offset;
    std::optional<std::string> deref_of; // rendered address expression
    std::optional<std::uint64_t> elided; // marker entry: number of entries left out
    friend bool operator==(const ProvenanceEntry&, const ProvenanceEntry&) = default;
};

struct HostRead {
    std::uint64_t pc = 0;
    std::uint64_t addr = 0;
    std::vector<std::uint8_t> bytes;
    friend bool operator==(const HostRead&, const HostRead&) = default;
};

struct OcallValue {
    std::uint64_t pc = 0;
    std::uint64_t ret = 0;
    std::vector<std::uint8_t> out; // out-buffer bytes, if any
    friend bool operator==(const OcallValue&, const OcallValue&) = default;
};

// Concrete attacker input reproducing a finding.
struct Witness {
    std::map<unsigned, std::vector<std::uint8_t>> args;                // param index -> little-endian bytes
    std::map<std::uint64_t, std::vector<std::uint8_t>> host_memory;    // first value seen per host address
    std::map<std::uint64_t, std::uint8_t> globals;                      // unwritten enclave bytes
    std::vector<HostRead> host_reads;                                   // in fetch order
    std::vector<OcallValue> ocalls;                                     // in call order
    std::uint64_t event_value = 0; // jump target, write/null address
    friend bool operator==(const Witness&, const Witness&) = default;
};

struct TraceEntry {
    std::uint64_t pc = 0;
    std::string kind; // exec | branch | hook | concretized
    std::optional<bool> taken;
    std::optional<std::string> hook;
    friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct Finding {
    std::string id; // "<ecall>.<n>"
    FindingKind kind = FindingKind::ControlledJump;
    unsigned ecall = 0;
    std::string ecall_name;
    std::uint64_t pc = 0;
    std::string label; // code label at pc, or label+offset
    Severity severity = Severity::High;
    Confidence confidence = Confidence::Exact;
    std::optional<bool> reaches_enclave;  // writes
    std::optional<bool> value_controlled; // writes
    std::optional<std::uint64_t> related_pc; // double-fetch: the first read
    unsigned roots = 0;
    std::string controlled; // rendered controlled expression
    std::vector<ProvenanceEntry> provenance;
    std::vector<std::string> constraints;
    std::optional<Witness> witness;
    std::vector<TraceEntry> trace;
    std::uint64_t occurrences = 1;
    friend bool operator==(const Finding&, const Finding&) = default;
};

std::vector<TraceEntry> to_entries(const std::vector<exec::TraceStep>& steps);

} // namespace esx::detect
