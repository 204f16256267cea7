#include "esx/symx/solver.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "esx/symx/sat.hpp"

namespace esx::symx {

namespace {

using sat::Lit;
using Bits = std::vector<Lit>;

struct PairHash {
    std::size_t operator()(const std::pair<Lit, Lit>& p) const {
        return std::hash<std::uint64_t>()((static_cast<std::uint64_t>(p.first) << 32) ^ static_cast<std::uint32_t>(p.second));
    }
};

// Tseitin encoding of bitvector expressions with constant propagation and
// gate sharing. Bits are little-endian (index 0 = LSB).
class BitBlaster {
  public:
    explicit BitBlaster(sat::CdclSolver& s) : s_(s) {
        sat::Var t = s_.new_var();
        true_ = sat::mk_lit(t);
        s_.add_clause({true_});
        false_ = sat::negate(true_);
    }

    Bits blast(const Expr& e) {
        auto it = memo_.find(e);
        if (it != memo_.end()) {
            return it->second;
        }
        Bits r = blast_node(e);
        memo_.emplace(e, r);
        return r;
    }

    void assert_true(const Expr& e) {
        Bits b = blast(e);
        s_.add_clause({b[0]});
    }

    [[nodiscard]] const std::map<std::uint64_t, Bits>& symbols() const { return syms_; }
    [[nodiscard]] Lit lit_true() const { return true_; }

  private:
    Lit fresh() { return sat::mk_lit(s_.new_var()); }

    Lit and2(Lit a, Lit b) {
        if (a == false_ || b == false_ || a == sat::negate(b)) {
            return false_;
        }
        if (a == true_) {
            return b;
        }
        if (b == true_ || a == b) {
            return a;
        }
        if (a > b) {
            std::swap(a, b);
        }
        auto key = std::make_pair(a, b);
        auto it = and_cache_.find(key);
        if (it != and_cache_.end()) {
            return it->second;
        }
        Lit g = fresh();
        s_.add_clause({sat::negate(g), a});
        s_.add_clause({sat::negate(g), b});
        s_.add_clause({g, sat::negate(a), sat::negate(b)});
        and_cache_.emplace(key, g);
        return g;
    }

    Lit or2(Lit a, Lit b) { return sat::negate(and2(sat::negate(a), sat::negate(b))); }

    Lit xor2(Lit a, Lit b) {
        if (a == false_) {
            return b;
        }
        if (b == false_) {
            return a;
        }
        if (a == true_) {
            return sat::negate(b);
        }
        if (b == true_) {
            return sat::negate(a);
        }
        if (a == b) {
            return false_;
        }
        if (a == sat::negate(b)) {
            return true_;
        }
        bool flip = false;
        if (sat::is_negated(a)) {
            a = sat::negate(a);
            flip = !flip;
        }
        if (sat::is_negated(b)) {
            b = sat::negate(b);
            flip = !flip;
        }
        if (a > b) {
            std::swap(a, b);
        }
        auto key = std::make_pair(a, b);
        Lit g;
        auto it = xor_cache_.find(key);
        if (it != xor_cache_.end()) {
            g = it->second;
        } else {
            g = fresh();
            Lit na = sat::negate(a);
            Lit nb = sat::negate(b);
            Lit ng = sat::negate(g);
            s_.add_clause({ng, a, b});
            s_.add_clause({ng, na, nb});
            s_.add_clause({g, na, b});
            s_.add_clause({g, a, nb});
            xor_cache_.emplace(key, g);
        }
        return flip ? sat::negate(g) : g;
    }

    Lit ite1(Lit c, Lit t, Lit e) {
        if (c == true_ || t == e) {
            return t;
        }
        if (c == false_) {
            return e;
        }
        if (t == true_ && e == false_) {
            return c;
        }
        if (t == false_ && e == true_) {
            return sat::negate(c);
        }
        if (t == true_) {
            return or2(c, e);
        }
        if (t == false_) {
            return and2(sat::negate(c), e);
        }
        if (e == false_) {
            return and2(c, t);
        }
        if (e == true_) {
            return or2(sat::negate(c), t);
        }
        Lit g = fresh();
        Lit nc = sat::negate(c);
        Lit ng = sat::negate(g);
        s_.add_clause({nc, sat::negate(t), g});
        s_.add_clause({nc, t, ng});
        s_.add_clause({c, sat::negate(e), g});
        s_.add_clause({c, e, ng});
        s_.add_clause({sat::negate(t), sat::negate(e), g});
        s_.add_clause({t, e, ng});
        return g;
    }

    Bits constant(unsigned w, std::uint64_t v) const {
        Bits b(w);
        for (unsigned i = 0; i < w; ++i) {
            b[i] = ((v >> i) & 1) ? true_ : false_;
        }
        return b;
    }

    Bits adder(const Bits& a, const Bits& b, Lit carry) {
        Bits out(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            Lit x = xor2(a[i], b[i]);
            out[i] = xor2(x, carry);
            carry = or2(and2(a[i], b[i]), and2(carry, x));
        }
        return out;
    }

    Bits invert(const Bits& a) const {
        Bits out(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            out[i] = sat::negate(a[i]);
        }
        return out;
    }

    Bits sub(const Bits& a, const Bits& b) { return adder(a, invert(b), true_); }

    Bits mul(const Bits& a, const Bits& b) {
        const std::size_t w = a.size();
        Bits acc = constant(static_cast<unsigned>(w), 0);
        for (std::size_t i = 0; i < w; ++i) {
            if (b[i] == false_) {
                continue;
            }
            Bits partial(w, false_);
            for (std::size_t j = i; j < w; ++j) {
                partial[j] = and2(a[j - i], b[i]);
            }
            acc = adder(acc, partial, false_);
        }
        return acc;
    }

    // a < b, unsigned
    Lit ult(const Bits& a, const Bits& b) {
        Lit lt = false_;
        for (std::size_t i = 0; i < a.size(); ++i) {
            lt = ite1(xor2(a[i], b[i]), b[i], lt);
        }
        return lt;
    }

    Lit slt(Bits a, Bits b) {
        a.back() = sat::negate(a.back());
        b.back() = sat::negate(b.back());
        return ult(a, b);
    }

    Lit equal(const Bits& a, const Bits& b) {
        Lit r = true_;
        for (std::size_t i = 0; i < a.size(); ++i) {
            r = and2(r, sat::negate(xor2(a[i], b[i])));
        }
        return r;
    }

    Bits select(Lit c, const Bits& t, const Bits& e) {
        Bits out(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            out[i] = ite1(c, t[i], e[i]);
        }
        return out;
    }

    // Restoring division with a (w+1)-bit partial remainder. A zero divisor
    // yields quotient all-ones and remainder = dividend.
    std::pair<Bits, Bits> divmod(const Bits& a, const Bits& d) {
        const std::size_t w = a.size();
        Bits r(w + 1, false_);
        Bits dext = d;
        dext.push_back(false_);
        Bits q(w);
        for (std::size_t k = w; k-- > 0;) {
            Bits shifted(w + 1);
            shifted[0] = a[k];
            for (std::size_t j = 1; j <= w; ++j) {
                shifted[j] = r[j - 1];
            }
            Lit borrow = ult(shifted, dext);
            Lit geq = sat::negate(borrow);
            q[k] = geq;
            r = select(geq, sub(shifted, dext), shifted);
        }
        r.pop_back();
        return {q, r};
    }

    enum class ShiftKind { Left, LogicalRight, ArithRight };

    Bits shift(const Bits& a, const Bits& s, ShiftKind kind) {
        const std::size_t w = a.size();
        Lit fill = kind == ShiftKind::ArithRight ? a.back() : false_;
        Bits res = a;
        Lit overflow = false_;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (k >= 63 || (1ULL << k) >= w) {
                overflow = or2(overflow, s[k]);
                continue;
            }
            const std::size_t sh = 1ULL << k;
            Bits next(w);
            for (std::size_t j = 0; j < w; ++j) {
                Lit moved;
                if (kind == ShiftKind::Left) {
                    moved = j >= sh ? res[j - sh] : false_;
                } else {
                    moved = j + sh < w ? res[j + sh] : fill;
                }
                next[j] = ite1(s[k], moved, res[j]);
            }
            res = std::move(next);
        }
        for (std::size_t j = 0; j < w; ++j) {
            res[j] = ite1(overflow, fill, res[j]);
        }
        return res;
    }

    Bits blast_node(const Expr& e) {
        const unsigned w = e.width();
        switch (e.op()) {
        case Op::Const:
            return constant(w, e.value());
        case Op::Sym: {
            auto it = syms_.find(e.sym_id());
            if (it != syms_.end()) {
                return it->second;
            }
            Bits b(w);
            for (unsigned i = 0; i < w; ++i) {
                b[i] = fresh();
            }
            syms_.emplace(e.sym_id(), b);
            return b;
        }
        case Op::Not:
            return invert(blast(e.kid(0)));
        case Op::Neg:
            return adder(invert(blast(e.kid(0))), constant(w, 0), true_);
        case Op::Add:
            return adder(blast(e.kid(0)), blast(e.kid(1)), false_);
        case Op::Sub:
            return sub(blast(e.kid(0)), blast(e.kid(1)));
        case Op::Mul:
            return mul(blast(e.kid(0)), blast(e.kid(1)));
        case Op::UDiv:
            return divmod(blast(e.kid(0)), blast(e.kid(1))).first;
        case Op::URem:
            return divmod(blast(e.kid(0)), blast(e.kid(1))).second;
        case Op::And:
        case Op::Or:
        case Op::Xor: {
            Bits a = blast(e.kid(0));
            Bits b = blast(e.kid(1));
            Bits out(w);
            for (unsigned i = 0; i < w; ++i) {
                out[i] = e.op() == Op::And ? and2(a[i], b[i]) : e.op() == Op::Or ? or2(a[i], b[i]) : xor2(a[i], b[i]);
            }
            return out;
        }
        case Op::Shl:
            return shift(blast(e.kid(0)), blast(e.kid(1)), ShiftKind::Left);
        case Op::LShr:
            return shift(blast(e.kid(0)), blast(e.kid(1)), ShiftKind::LogicalRight);
        case Op::AShr:
            return shift(blast(e.kid(0)), blast(e.kid(1)), ShiftKind::ArithRight);
        case Op::Eq:
            return {equal(blast(e.kid(0)), blast(e.kid(1)))};
        case Op::Ne:
            return {sat::negate(equal(blast(e.kid(0)), blast(e.kid(1))))};
        case Op::Ult:
            return {ult(blast(e.kid(0)), blast(e.kid(1)))};
        case Op::Ule:
            return {sat::negate(ult(blast(e.kid(1)), blast(e.kid(0))))};
        case Op::Slt:
            return {slt(blast(e.kid(0)), blast(e.kid(1)))};
        case Op::Sle:
            return {sat::negate(slt(blast(e.kid(1)), blast(e.kid(0))))};
        case Op::Ite: {
            Bits c = blast(e.kid(0));
            return select(c[0], blast(e.kid(1)), blast(e.kid(2)));
        }
        case Op::ZExt: {
            Bits a = blast(e.kid(0));
            a.resize(w, false_);
            return a;
        }
        case Op::SExt: {
            Bits a = blast(e.kid(0));
            Lit msb = a.back();
            a.resize(w, msb);
            return a;
        }
        case Op::Extract: {
            Bits a = blast(e.kid(0));
            return Bits(a.begin() + e.lo(), a.begin() + e.lo() + w);
        }
        case Op::Concat: {
            Bits hi = blast(e.kid(0));
            Bits lo = blast(e.kid(1));
            lo.insert(lo.end(), hi.begin(), hi.end());
            return lo;
        }
        }
        throw ExprError("cannot bit-blast operator");
    }

    sat::CdclSolver& s_;
    Lit true_;
    Lit false_;
    std::unordered_map<Expr, Bits, ExprHash> memo_;
    std::map<std::uint64_t, Bits> syms_;
    std::unordered_map<std::pair<Lit, Lit>, Lit, PairHash> and_cache_;
    std::unordered_map<std::pair<Lit, Lit>, Lit, PairHash> xor_cache_;
};

Verdict solve_conjunction(std::span<const Expr> assertions, std::span<const Expr> symbol_roots, const SolverConfig& cfg) {
    std::vector<Expr> live;
    live.reserve(assertions.size());
    for (const auto& a : assertions) {
        if (a.width() != 1) {
            throw ExprError("constraint must have width 1");
        }
        if (a.is_false()) {
            return Unsat{};
        }
        if (!a.is_true()) {
            live.push_back(a);
        }
    }
    Model model;
    if (!live.empty()) {
        sat::CdclSolver core(cfg.seed);
        BitBlaster bb(core);
        for (const auto& a : live) {
            bb.assert_true(a);
        }
        switch (core.solve(cfg.budget)) {
        case sat::Result::Unsat:
            return Unsat{};
        case sat::Result::Unknown:
            return Unknown{"budget-exhausted"};
        case sat::Result::Sat:
            break;
        }
        for (const auto& [id, bits] : bb.symbols()) {
            std::uint64_t v = 0;
            for (std::size_t i = 0; i < bits.size(); ++i) {
                bool b = core.model_value(sat::var_of(bits[i])) != sat::is_negated(bits[i]);
                if (b) {
                    v |= 1ULL << i;
                }
            }
            model.set(id, v);
        }
    }
    for (const auto& s : collect_symbols(symbol_roots)) {
        if (!model.contains(s.sym_id())) {
            model.set(s.sym_id(), 0);
        }
    }
    return Sat{std::move(model)};
}

std::vector<Expr> with_query(std::span<const Expr> constraints, const Expr& query) {
    std::vector<Expr> all(constraints.begin(), constraints.end());
    all.push_back(query);
    return all;
}

} // namespace

Verdict is_sat(std::span<const Expr> constraints, const Expr& query, const SolverConfig& cfg) {
    auto all = with_query(constraints, query);
    return solve_conjunction(all, all, cfg);
}

MustVerdict must_hold(std::span<const Expr> constraints, const Expr& pred, const SolverConfig& cfg) {
    Verdict v = is_sat(constraints, apply(Op::Not, {pred}), cfg);
    if (std::holds_alternative<Unsat>(v)) {
        return Proved{};
    }
    if (auto* s = std::get_if<Sat>(&v)) {
        return Counterexample{std::move(s->model)};
    }
    return std::get<Unknown>(v);
}

Verdict check_sliced(std::span<const Expr> constraints, const Expr& query, const SolverConfig& cfg) {
    return check_sliced(constraints, query, {}, cfg);
}

Verdict check_sliced(std::span<const Expr> constraints, const Expr& query, std::span<const Expr> focus,
                     const SolverConfig& cfg) {
    if (query.is_false()) {
        return Unsat{};
    }
    std::vector<std::vector<std::uint64_t>> cons_syms;
    cons_syms.reserve(constraints.size());
    for (const auto& c : constraints) {
        std::vector<std::uint64_t> ids;
        std::array<Expr, 1> root{c};
        for (const auto& s : collect_symbols(root)) {
            ids.push_back(s.sym_id());
        }
        cons_syms.push_back(std::move(ids));
    }
    std::unordered_set<std::uint64_t> relevant;
    {
        std::vector<Expr> roots(focus.begin(), focus.end());
        roots.push_back(query);
        for (const auto& s : collect_symbols(roots)) {
            relevant.insert(s.sym_id());
        }
    }
    std::vector<char> taken(constraints.size(), 0);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < constraints.size(); ++i) {
            if (taken[i]) {
                continue;
            }
            bool hit = std::any_of(cons_syms[i].begin(), cons_syms[i].end(),
                                   [&](std::uint64_t id) { return relevant.count(id) != 0; });
            if (hit) {
                taken[i] = 1;
                changed = true;
                relevant.insert(cons_syms[i].begin(), cons_syms[i].end());
            }
        }
    }
    std::vector<Expr> sliced;
    for (std::size_t i = 0; i < constraints.size(); ++i) {
        if (taken[i] || constraints[i].is_false()) {
            sliced.push_back(constraints[i]);
        }
    }
    sliced.push_back(query);
    return solve_conjunction(sliced, sliced, cfg);
}

std::optional<std::uint64_t> min_value(std::span<const Expr> constraints, const Expr& value, std::uint64_t lo,
                                       std::uint64_t hi, const SolverConfig& cfg) {
    const unsigned w = value.width();
    hi = std::min(hi, mask(w));
    if (lo > hi) {
        return std::nullopt;
    }
    auto feasible_upto = [&](std::uint64_t bound) -> std::optional<bool> {
        Expr q = band(ule(mk_const(w, lo), value), ule(value, mk_const(w, bound)));
        Verdict v = check_sliced(constraints, q, cfg);
        if (is_unknown_verdict(v)) {
            return std::nullopt;
        }
        return is_sat_verdict(v);
    };
    auto top = feasible_upto(hi);
    if (!top || !*top) {
        return std::nullopt;
    }
    std::uint64_t a = lo;
    std::uint64_t b = hi;
    while (a < b) {
        std::uint64_t mid = a + (b - a) / 2;
        auto f = feasible_upto(mid);
        if (!f) {
            return std::nullopt;
        }
        if (*f) {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    return a;
}

Verdict Solver::check(std::span<const Expr> constraints, const Expr& query) {
    ++queries_;
    Verdict v = check_sliced(constraints, query, cfg_);
    if (is_unknown_verdict(v)) {
        ++unknowns_;
    }
    return v;
}

std::optional<std::uint64_t> Solver::value_of(std::span<const Expr> constraints, const Expr& e) {
    if (e.is_const()) {
        return e.value();
    }
    ++queries_;
    std::array<Expr, 1> focus{e};
    Verdict v = check_sliced(constraints, mk_true(), focus, cfg_);
    if (auto* s = std::get_if<Sat>(&v)) {
        return eval_total(s->model, e);
    }
    if (is_unknown_verdict(v)) {
        ++unknowns_;
    }
    return std::nullopt;
}

MustVerdict Solver::must(std::span<const Expr> constraints, const Expr& pred) {
    Verdict v = check(constraints, apply(Op::Not, {pred}));
    if (std::holds_alternative<Unsat>(v)) {
        return Proved{};
    }
    if (auto* s = std::get_if<Sat>(&v)) {
        return Counterexample{std::move(s->model)};
    }
    return std::get<Unknown>(v);
}

std::optional<std::uint64_t> Solver::min(std::span<const Expr> constraints, const Expr& value, std::uint64_t lo,
                                         std::uint64_t hi) {
    ++queries_;
    auto r = min_value(constraints, value, lo, hi, cfg_);
    return r;
}

} // namespace esx::symx
