#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esx/eir/program.hpp"
#include "esx/mem/memory.hpp"
#include "esx/symx/expr.hpp"

namespace esx::exec {

using symx::Expr;

// Return address pushed for the ECALL entry; `ret` to it exits the ECALL.
inline constexpr std::uint64_t kExitSentinel = 0xFFFFFFFFFFFFFFF0ULL;

enum class StepKind : std::uint8_t { Exec, Branch, Hook, Concretized };

const char* step_kind_name(StepKind k);

struct TraceStep {
    std::uint64_t pc = 0;
    StepKind kind = StepKind::Exec;
    bool taken = false; // Branch
    std::string hook;   // Hook
    friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

// Persistent list shared between forked states; appending is O(1).
class Trace {
  public:
    void push(TraceStep s);
    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] std::vector<TraceStep> to_vector() const;
    [[nodiscard]] const TraceStep* last() const { return head_ ? &head_->step : nullptr; }
    // Replace the kind of the newest step (a step that concretized).
    void mark_last(StepKind k);
    void replace_last(TraceStep s);

  private:
    struct Node {
        TraceStep step;
        mutable std::shared_ptr<const Node> prev;
        Node() = default;
        Node(const Node&) = delete;
        Node& operator=(const Node&) = delete;
        ~Node();
    };
    std::shared_ptr<const Node> head_;
    std::size_t size_ = 0;
};

struct OcallRecord {
    std::uint64_t pc = 0;
    Expr ret;
    std::uint64_t out_addr = 0;
    std::vector<Expr> out_bytes; // havocked out-buffer contents, empty if none
};

// How each ECALL parameter was materialized.
struct ParamSlot {
    unsigned index = 0;
    std::uint64_t slot_addr = 0;
    std::optional<std::uint64_t> buffer; // backing buffer for pointer kinds
    std::uint64_t buffer_size = 0;
    std::vector<Expr> roots; // value/user_check: the symbol; ptr_in/inout: one per byte
};

struct MarshalledArgs {
    std::uint64_t struct_base = 0;
    std::vector<ParamSlot> slots;
    // size_param concretizations: param index -> chosen size
    std::map<unsigned, std::uint64_t> concretized_sizes;
};

struct State {
    explicit State(mem::SymMemory m) : memory(std::move(m)) {}

    std::uint64_t id = 0;
    std::uint64_t pc = 0;
    std::array<Expr, eir::kNumRegs> regs;
    mem::SymMemory memory;
    std::vector<Expr> constraints;
    Trace trace;
    std::uint64_t steps = 0;
    unsigned fork_depth = 0;
    std::map<std::uint64_t, unsigned> loop_visits;
    std::vector<OcallRecord> ocalls;
    std::shared_ptr<const MarshalledArgs> args;
    // Set by a step that pinned a symbolic address or size.
    bool concretized_this_step = false;
};

struct Limits {
    std::uint64_t max_steps = 50'000;
    std::uint64_t max_states = 4'096;
    unsigned max_fork_depth = 256;
    unsigned loop_bound = 64;
    std::uint64_t solver_budget = 200'000;
    std::chrono::milliseconds timeout{60'000};
    // Cap on targets enumerated for a bounded symbolic jump.
    unsigned max_jump_targets = 16;
    friend bool operator==(const Limits&, const Limits&) = default;
};

// Throws std::invalid_argument when a limit is zero.
void validate_limits(const Limits& l);

struct Stats {
    std::uint64_t states_created = 0;
    std::uint64_t states_completed = 0;
    std::uint64_t truncations = 0;
    std::uint64_t steps = 0;
    std::uint64_t solver_unknowns = 0;
    std::uint64_t elapsed_ms = 0;
    friend bool operator==(const Stats&, const Stats&) = default;
};

enum class EndKind : std::uint8_t { Exit, Halt, Finding, Truncated, Fault };

const char* end_kind_name(EndKind k);

struct Termination {
    EndKind kind = EndKind::Exit;
    std::string reason;
};

} // namespace esx::exec
