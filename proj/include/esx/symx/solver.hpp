#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "esx/symx/eval.hpp"
#include "esx/symx/expr.hpp"

namespace esx::symx {

// One solver step is one CDCL conflict.
inline constexpr std::uint64_t kDefaultSolverBudget = 200'000;

struct SolverConfig {
    std::uint64_t budget = kDefaultSolverBudget;
    // Initial branching phases; 0 keeps the all-false default.
    std::uint64_t seed = 0;
};

struct Sat {
    Model model;
};
struct Unsat {};
struct Unknown {
    std::string reason;
};
using Verdict = std::variant<Sat, Unsat, Unknown>;

struct Proved {};
struct Counterexample {
    Model model;
};
using MustVerdict = std::variant<Proved, Counterexample, Unknown>;

inline bool is_sat_verdict(const Verdict& v) { return std::holds_alternative<Sat>(v); }
inline bool is_unsat_verdict(const Verdict& v) { return std::holds_alternative<Unsat>(v); }
inline bool is_unknown_verdict(const Verdict& v) { return std::holds_alternative<Unknown>(v); }

// Decide constraints ∧ query. A Sat model assigns every symbol occurring in
// the inputs; verdicts other than Unknown are exact.
Verdict is_sat(std::span<const Expr> constraints, const Expr& query, const SolverConfig& cfg = {});
// Proved iff constraints ∧ ¬pred is unsatisfiable.
MustVerdict must_hold(std::span<const Expr> constraints, const Expr& pred, const SolverConfig& cfg = {});

// Like is_sat, but only the constraints that share symbols (transitively)
// with the query are passed to the SAT core. Exact when the full constraint
// set is satisfiable, which holds for every path condition; the model then
// covers only the sliced symbols.
Verdict check_sliced(std::span<const Expr> constraints, const Expr& query, const SolverConfig& cfg = {});
// Slices on the symbols of `focus` as well as the query's.
Verdict check_sliced(std::span<const Expr> constraints, const Expr& query, std::span<const Expr> focus,
                     const SolverConfig& cfg = {});

// Smallest value of `value` under constraints, searching [lo, hi].
// Returns nullopt when no value in range is feasible or the solver gave up.
std::optional<std::uint64_t> min_value(std::span<const Expr> constraints, const Expr& value, std::uint64_t lo,
                                       std::uint64_t hi, const SolverConfig& cfg = {});

// Per-exploration front end that counts queries and Unknown verdicts.
// Not thread-safe; each worker owns one.
class Solver {
  public:
    explicit Solver(SolverConfig cfg = {}) : cfg_(cfg) {}

    Verdict check(std::span<const Expr> constraints, const Expr& query);
    MustVerdict must(std::span<const Expr> constraints, const Expr& pred);
    // Some feasible value of e; nullopt when infeasible or undecided.
    std::optional<std::uint64_t> value_of(std::span<const Expr> constraints, const Expr& e);
    std::optional<std::uint64_t> min(std::span<const Expr> constraints, const Expr& value, std::uint64_t lo,
                                     std::uint64_t hi);

    [[nodiscard]] const SolverConfig& config() const { return cfg_; }
    [[nodiscard]] std::uint64_t queries() const { return queries_; }
    [[nodiscard]] std::uint64_t unknowns() const { return unknowns_; }

  private:
    SolverConfig cfg_;
    std::uint64_t queries_ = 0;
    std::uint64_t unknowns_ = 0;
};

} // namespace esx::symx
