#include <catch_amalgamated.hpp>

#include "esx/symx/eval.hpp"
#include "esx/symx/expr.hpp"
#include "esx/symx/solver.hpp"
#include "support/brute.hpp"
#include "support/random_expr.hpp"

using namespace esx::symx;
using esx::testing::brute_sat;
using esx::testing::ExprGen;

namespace {

Expr c64(std::uint64_t v) { return mk_const(64, v); }
Expr c8(std::uint64_t v) { return mk_const(8, v); }
Expr sym(unsigned w, const char* name = "") { return mk_sym(w, {}, name); }

} // namespace

TEST_CASE("constants are reduced modulo the width") {
    CHECK(mk_const(8, 300).value() == 44);
    CHECK(mk_const(1, 1).is_true());
    CHECK(mk_const(64, 0x1000).value() == 0x1000);
    CHECK_THROWS_AS(mk_const(0, 1), ExprError);
    CHECK_THROWS_AS(mk_const(65, 1), ExprError);
    CHECK_THROWS_AS(mk_sym(0, {}), ExprError);
}

TEST_CASE("fresh symbols get distinct ids and keep origin labels") {
    Expr a = mk_sym(64, LabelSet({Label::ecall_arg(0, 0)}));
    Expr b = mk_sym(64, LabelSet({Label::global_state()}));
    CHECK(a.sym_id() != b.sym_id());
    CHECK(a.labels().contains(LabelKind::EcallArg));
    CHECK(b.labels().contains(LabelKind::GlobalState));
    CHECK(a != b);
}

TEST_CASE("apply folds and applies identities") {
    CHECK(add(c8(1), c8(255)) == c8(0));
    Expr s = sym(8);
    CHECK(apply(Op::Xor, {s, s}) == c8(0));
    CHECK(add(s, c8(0)) == s);
    CHECK(band(s, c8(0)) == c8(0));
    CHECK(ite(mk_true(), s, c8(3)) == s);
    CHECK(ult(c64(0xFFF), c64(0x1000)).is_true());
}

TEST_CASE("apply rejects malformed operands") {
    Expr s8 = sym(8);
    Expr s16 = sym(16);
    CHECK_THROWS_AS(add(s8, s16), ExprError);
    CHECK_THROWS_AS(apply(Op::Not, {s8, s8}), ExprError);
    CHECK_THROWS_AS(ite(s8, s8, s8), ExprError);
    CHECK_THROWS_AS(mk_extract(s8, 8, 0), ExprError);
    CHECK_THROWS_AS(concat(sym(40), sym(40)), ExprError);
}

TEST_CASE("labels propagate through operators") {
    Expr a = mk_sym(64, LabelSet({Label::ecall_arg(1, 0)}));
    Expr g = mk_sym(64, LabelSet({Label::global_state()}));
    Expr r = add(a, g);
    CHECK(r.labels().contains(LabelKind::EcallArg));
    CHECK(r.labels().contains(LabelKind::GlobalState));
    Expr e = mk_extract(a, 15, 8);
    CHECK(e.labels().contains(LabelKind::EcallArg));
}

TEST_CASE("little-endian byte reassembly folds back") {
    Expr x = sym(64);
    Expr r = mk_extract(x, 7, 0);
    for (unsigned i = 1; i < 8; ++i) {
        r = concat(mk_extract(x, 8 * i + 7, 8 * i), r);
    }
    CHECK(r == x);
}

TEST_CASE("rendering") {
    Expr x = mk_sym(64, {}, "arg0");
    CHECK(to_string(add(x, c64(8))) == "(add arg0 0x8)");
    CHECK(to_string(c8(0x41)) == "0x41:8");
}

TEST_CASE("eval examples") {
    Expr s = sym(64);
    Model m;
    m.set(s.sym_id(), 3);
    CHECK(eval(m, add(s, c64(4))) == 7);
    Expr s8 = sym(8);
    Model m8;
    m8.set(s8.sym_id(), 255);
    CHECK(eval(m8, mk_zext(s8, 64)) == 255);
    Expr a = sym(8);
    Expr b = sym(8);
    Model mab;
    mab.set(a.sym_id(), 0x0F);
    mab.set(b.sym_id(), 0x11);
    CHECK(eval(mab, add(a, b)) == 0x20);
    CHECK_THROWS_AS(eval(Model{}, s), UnassignedSymbol);
    CHECK(eval_total(Model{}, add(s, c64(4))) == 4);
}

TEST_CASE("is_sat examples") {
    Expr s = sym(8);
    auto v = is_sat({}, eq(s, c8(42)));
    REQUIRE(is_sat_verdict(v));
    CHECK(std::get<Sat>(v).model.get(s.sym_id()) == 42u);

    std::vector<Expr> lt10{ult(s, c8(10))};
    CHECK(is_unsat_verdict(is_sat(lt10, ult(c8(20), s))));

    Expr a = sym(8);
    Expr b = sym(8);
    std::vector<Expr> cs{eq(add(a, b), c8(0x20)), ult(a, c8(0x10))};
    Expr q = band(eq(a, c8(0x0F)), eq(b, c8(0x11)));
    CHECK(is_sat_verdict(is_sat(cs, q)));
    CHECK(brute_sat({cs[0], cs[1], q}, {a, b}));
}

TEST_CASE("must_hold examples") {
    Expr addr = sym(64);
    std::vector<Expr> pinned{eq(addr, c64(8))};
    CHECK(std::holds_alternative<Proved>(must_hold(pinned, ult(addr, c64(0x1000)))));

    Expr s = sym(64);
    auto cex = must_hold({}, ult(s, c64(0x1000)));
    REQUIRE(std::holds_alternative<Counterexample>(cex));
    CHECK(*std::get<Counterexample>(cex).model.get(s.sym_id()) >= 0x1000);

    Expr t = sym(64);
    std::vector<Expr> cs{eq(s, t), ule(t, c64(0xFFF))};
    CHECK(std::holds_alternative<Proved>(must_hold(cs, ult(s, c64(0x1000)))));
    // Scaled-down oracle: the negation has no 8-bit witness.
    Expr s8 = sym(8);
    Expr t8 = sym(8);
    CHECK_FALSE(brute_sat({eq(s8, t8), ule(t8, c8(0x7F)), bnot(ult(s8, c8(0x80)))}, {s8, t8}));
}

TEST_CASE("wide arithmetic is exact") {
    Expr x = sym(64);
    // x * 3 == 1 has the unique solution 0xAAAAAAAAAAAAAAAB mod 2^64.
    auto v = is_sat({}, eq(apply(Op::Mul, {x, c64(3)}), c64(1)));
    REQUIRE(is_sat_verdict(v));
    CHECK(*std::get<Sat>(v).model.get(x.sym_id()) == 0xAAAAAAAAAAAAAAABULL);
    // udiv by zero is all-ones, urem by zero is the dividend.
    CHECK(is_unsat_verdict(is_sat({}, ne(apply(Op::UDiv, {x, c64(0)}), c64(~0ULL)))));
    Expr y = sym(64);
    CHECK(is_unsat_verdict(is_sat({}, band(eq(y, c64(0)), ne(apply(Op::URem, {x, y}), x)))));
}

TEST_CASE("simplification preserves semantics") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 3000; ++iter) {
        std::vector<Expr> syms{sym(1 + rng() % 8), sym(1 + rng() % 8), sym(1 + rng() % 8)};
        ExprGen gen(rng(), syms, /*raw=*/true);
        Expr raw = (rng() % 2) ? gen.value(1 + rng() % 8, 4) : gen.boolean(3);
        Expr simp = simplify(raw);
        for (int k = 0; k < 8; ++k) {
            Model m;
            for (const auto& s : syms) {
                m.set(s.sym_id(), rng() & mask(s.width()));
            }
            INFO(to_string(raw) << " => " << to_string(simp));
            REQUIRE(eval_total(m, raw) == eval_total(m, simp));
        }
    }
}

TEST_CASE("solver agrees with exhaustive enumeration") {
    std::mt19937_64 rng(11);
    int sat_count = 0;
    for (int iter = 0; iter < 2000; ++iter) {
        unsigned nsyms = 1 + rng() % 3;
        std::vector<Expr> syms;
        for (unsigned i = 0; i < nsyms; ++i) {
            syms.push_back(sym(1 + rng() % (nsyms == 3 ? 5 : 8)));
        }
        ExprGen gen(rng(), syms);
        Expr c = gen.boolean(2);
        Expr q = gen.boolean(2);
        std::vector<Expr> cs{c};
        bool expect = brute_sat({c, q}, syms);
        auto v = is_sat(cs, q);
        INFO(to_string(c) << " /\\ " << to_string(q));
        REQUIRE_FALSE(is_unknown_verdict(v));
        REQUIRE(is_sat_verdict(v) == expect);
        if (expect) {
            ++sat_count;
            const Model& m = std::get<Sat>(v).model;
            REQUIRE(eval(m, c) == 1);
            REQUIRE(eval(m, q) == 1);
        }
        auto mh = must_hold(cs, q);
        bool holds = !brute_sat({c, bnot(q)}, syms);
        REQUIRE(std::holds_alternative<Proved>(mh) == holds);
        if (auto* ce = std::get_if<Counterexample>(&mh)) {
            REQUIRE(eval(ce->model, q) == 0);
        }
    }
    CHECK(sat_count > 100);
}

TEST_CASE("budget growth never flips a verdict") {
    std::mt19937_64 rng(5);
    for (int iter = 0; iter < 50; ++iter) {
        Expr x = sym(32);
        Expr y = sym(32);
        Expr q = band(eq(apply(Op::Mul, {x, y}), mk_const(32, rng() | 1)), ult(mk_const(32, 1), x));
        Verdict prev = is_sat({}, q, SolverConfig{1, 0});
        for (std::uint64_t budget : {std::uint64_t{10}, std::uint64_t{100}, std::uint64_t{1000}, kDefaultSolverBudget}) {
            Verdict next = is_sat({}, q, SolverConfig{budget, 0});
            if (!is_unknown_verdict(prev)) {
                REQUIRE(is_sat_verdict(prev) == is_sat_verdict(next));
            }
            prev = next;
        }
    }
}

TEST_CASE("seeds change models but not verdicts") {
    Expr x = sym(16);
    std::vector<Expr> cs{ult(mk_const(16, 100), x)};
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        auto v = is_sat(cs, ult(x, mk_const(16, 5000)), SolverConfig{kDefaultSolverBudget, seed});
        REQUIRE(is_sat_verdict(v));
        auto val = *std::get<Sat>(v).model.get(x.sym_id());
        CHECK(val > 100);
        CHECK(val < 5000);
    }
}

TEST_CASE("sliced checks match unsliced verdicts on satisfiable paths") {
    std::mt19937_64 rng(3);
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<Expr> syms{sym(6), sym(6), sym(6)};
        ExprGen gen(rng(), syms);
        std::vector<Expr> cs;
        for (int k = 0; k < 3; ++k) {
            cs.push_back(gen.boolean(2));
        }
        if (!is_sat_verdict(is_sat(cs, mk_true()))) {
            continue;
        }
        Expr q = gen.boolean(2);
        REQUIRE(is_sat_verdict(is_sat(cs, q)) == is_sat_verdict(check_sliced(cs, q)));
    }
}

TEST_CASE("min_value finds the least feasible value") {
    std::mt19937_64 rng(9);
    for (int iter = 0; iter < 200; ++iter) {
        Expr s = sym(8);
        ExprGen gen(rng(), {s});
        Expr c = gen.boolean(2);
        std::vector<Expr> cs{c};
        std::optional<std::uint64_t> expect;
        for (std::uint64_t v = 1; v < 256 && !expect; ++v) {
            if (brute_sat({c, eq(s, c8(v))}, {s})) {
                expect = v;
            }
        }
        REQUIRE(min_value(cs, s, 1, 255) == expect);
    }
}

TEST_CASE("symbol scopes make ids reproducible") {
    std::uint64_t first = 0;
    {
        SymbolScope scope(7);
        first = sym(8).sym_id();
    }
    {
        SymbolScope scope(7);
        CHECK(sym(8).sym_id() == first);
    }
}
