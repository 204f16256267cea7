#pragma once

#include <cstdint>
#include <vector>

namespace esx::symx::sat {

using Var = int;
using Lit = int; // 2 * var + negated

inline Lit mk_lit(Var v, bool negated = false) { return 2 * v + (negated ? 1 : 0); }
inline Lit negate(Lit l) { return l ^ 1; }
inline Var var_of(Lit l) { return l >> 1; }
inline bool is_negated(Lit l) { return (l & 1) != 0; }

enum class Result { Sat, Unsat, Unknown };

// Conflict-driven clause learning with two watched literals, first-UIP
// learning, VSIDS and Luby restarts. Deterministic for a fixed seed.
class CdclSolver {
  public:
    explicit CdclSolver(std::uint64_t seed = 0);

    Var new_var();
    [[nodiscard]] int num_vars() const { return static_cast<int>(assigns_.size()); }
    void add_clause(std::vector<Lit> lits);
    // Budget counts conflicts. Unknown is returned when it is exhausted.
    Result solve(std::uint64_t conflict_budget);
    // Valid after Sat.
    [[nodiscard]] bool model_value(Var v) const { return model_[v]; }
    [[nodiscard]] std::uint64_t conflicts() const { return conflicts_; }

  private:
    struct Clause {
        std::vector<Lit> lits;
    };

    [[nodiscard]] int lit_value(Lit l) const {
        int v = assigns_[var_of(l)];
        return is_negated(l) ? -v : v;
    }
    [[nodiscard]] int decision_level() const { return static_cast<int>(trail_lim_.size()); }
    void enqueue(Lit l, int reason);
    int propagate();
    void analyze(int confl, std::vector<Lit>& out_learnt, int& out_level);
    void backtrack(int level);
    void attach(int ci);
    Lit pick_branch();
    void bump(Var v);
    void heap_insert(Var v);
    void heap_up(int pos);
    void heap_down(int pos);
    Var heap_pop();

    std::vector<Clause> clauses_;
    std::vector<std::vector<int>> watches_;
    std::vector<int> assigns_; // 1 true, -1 false, 0 unassigned
    std::vector<int> level_;
    std::vector<int> reason_;
    std::vector<char> polarity_;
    std::vector<char> seen_;
    std::vector<double> activity_;
    std::vector<Lit> trail_;
    std::vector<int> trail_lim_;
    std::vector<int> heap_;
    std::vector<int> heap_pos_;
    std::vector<char> model_;
    std::size_t qhead_ = 0;
    double var_inc_ = 1.0;
    bool unsat_ = false;
    std::uint64_t conflicts_ = 0;
    std::uint64_t rng_;
};

} // namespace esx::symx::sat
