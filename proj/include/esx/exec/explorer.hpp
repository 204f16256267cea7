#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "esx/exec/state.hpp"
#include "esx/loader/package.hpp"
#include "esx/symx/solver.hpp"

namespace esx::exec {

// Detector entry points. Each sees the state before the event takes effect.
class EventSink {
  public:
    virtual ~EventSink() = default;
    // Symbolic indirect transfer. True ends the path with a finding.
    virtual bool on_jump(const State&, const Expr& /*target*/, symx::Solver&) { return false; }
    // Every load and store. True means a null-page finding was reported.
    virtual bool on_access(const State&, const Expr& /*addr*/, unsigned /*width*/, bool /*is_write*/,
                           symx::Solver&) {
        return false;
    }
    // Every store not already reported as a null access, before concretization.
    virtual void on_store(const State&, const Expr& /*addr*/, const Expr& /*value*/, unsigned /*width*/,
                          symx::Solver&) {}
    virtual void on_path_end(const State&, const Termination&, symx::Solver&) {}
};

class Observer {
  public:
    virtual ~Observer() = default;
    // Both children are feasible; `parent` is the constraint list before the split.
    virtual void on_fork(const std::vector<Expr>& /*parent*/, const Expr& /*cond*/, const State& /*taken*/,
                         const State& /*other*/) {}
    virtual void on_terminate(const State&, const Termination&) {}
};

// Raised inside a hook or step to end the current path with a Fault.
class PathFault : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ForkResult {
    std::optional<State> taken;
    std::optional<State> other;
};

// What hook summaries may do to the running exploration.
class ExecContext {
  public:
    virtual ~ExecContext() = default;
    virtual const loader::EnclavePackage& package() const = 0;
    virtual symx::Solver& solver() = 0;
    // Memory access with detector events, as a load/store instruction would.
    virtual Expr load(State& s, const Expr& addr, unsigned width) = 0;
    virtual void store(State& s, const Expr& addr, const Expr& value, unsigned width) = 0;
    // Split on cond. A side is present iff feasible; when both are, each
    // carries the extra constraint and the fork is logged.
    virtual ForkResult fork(State&& s, const Expr& cond) = 0;
    // Smallest feasible value in [lo, hi]; pins v to it. nullopt if none.
    virtual std::optional<std::uint64_t> concretize_min(State& s, const Expr& v, std::uint64_t lo,
                                                        std::uint64_t hi) = 0;
};

// A hook returns the successor states; pc is advanced by the executor.
using HookFn = std::function<std::vector<State>(State&&, ExecContext&)>;

class HookRegistry {
  public:
    struct Entry {
        std::string name;
        HookFn fn;
    };

    // Binds a code or extern symbol. Throws std::invalid_argument on a
    // duplicate or unknown symbol.
    void bind(const eir::Program& program, const std::string& symbol, std::string name, HookFn fn);
    [[nodiscard]] const Entry* find(std::uint64_t addr) const;
    [[nodiscard]] std::size_t size() const { return hooks_.size(); }

  private:
    std::map<std::uint64_t, Entry> hooks_;
};

class Explorer : private ExecContext {
  public:
    Explorer(const loader::EnclavePackage& pkg, const HookRegistry& hooks, const Limits& limits, EventSink& sink,
             Observer* observer = nullptr, std::uint64_t seed = 0);

    // Breadth-first exploration from `initial` until the worklist drains or
    // a limit is hit. Every path ends in exactly one Termination.
    Stats run(State initial);

    [[nodiscard]] const Limits& limits() const { return limits_; }

  private:
    const loader::EnclavePackage& package() const override { return pkg_; }
    symx::Solver& solver() override { return solver_; }
    Expr load(State& s, const Expr& addr, unsigned width) override;
    void store(State& s, const Expr& addr, const Expr& value, unsigned width) override;
    ForkResult fork(State&& s, const Expr& cond) override;
    std::optional<std::uint64_t> concretize_min(State& s, const Expr& v, std::uint64_t lo,
                                                std::uint64_t hi) override;

    // Runs s until it terminates or splits; successors go to `out`.
    void advance(State&& s, std::vector<State>& out);
    // One instruction. Returns the successors (empty when the path ended).
    std::vector<State> step(State&& s);
    std::vector<State> transfer(State&& s, Expr target, bool is_call, std::uint64_t ret_pc);
    std::vector<State> transfer_const(State&& s, std::uint64_t target, bool is_call, std::uint64_t ret_pc);
    std::vector<State> run_hook(State&& s, const HookRegistry::Entry& hook, std::uint64_t ret_pc);
    void push_return(State& s, std::uint64_t ret_pc);
    void terminate(State&& s, Termination t);

    const loader::EnclavePackage& pkg_;
    const HookRegistry& hooks_;
    Limits limits_;
    EventSink& sink_;
    Observer* observer_;
    symx::Solver solver_;
    Stats stats_;
    std::uint64_t next_id_ = 0;
    bool timed_out_ = false;
    std::chrono::steady_clock::time_point deadline_;
};

} // namespace esx::exec
