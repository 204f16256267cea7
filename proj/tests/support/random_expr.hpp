#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "esx/symx/eval.hpp"
#include "esx/symx/expr.hpp"

namespace esx::testing {

// Random expression generator over a small symbol pool, for differential
// checks against exhaustive enumeration.
class ExprGen {
  public:
    ExprGen(std::uint64_t seed, std::vector<symx::Expr> syms, bool raw = false)
        : rng_(seed), syms_(std::move(syms)), raw_(raw) {}

    symx::Expr value(unsigned width, int depth);
    symx::Expr boolean(int depth);
    std::mt19937_64& rng() { return rng_; }

  private:
    symx::Expr mk(symx::Op op, std::initializer_list<symx::Expr> ops) {
        return raw_ ? symx::make_raw(op, ops) : symx::apply(op, ops);
    }
    symx::Expr leaf(unsigned width);
    unsigned pick(unsigned n) { return static_cast<unsigned>(rng_() % n); }

    std::mt19937_64 rng_;
    std::vector<symx::Expr> syms_;
    bool raw_;
};

inline symx::Expr ExprGen::leaf(unsigned width) {
    using namespace symx;
    std::vector<Expr> fits;
    for (const auto& s : syms_) {
        fits.push_back(s);
    }
    if (!fits.empty() && pick(3) != 0) {
        Expr s = fits[pick(static_cast<unsigned>(fits.size()))];
        if (s.width() == width) {
            return s;
        }
        if (s.width() > width) {
            return raw_ ? make_raw_extract(s, width - 1, 0) : mk_extract(s, width - 1, 0);
        }
        bool sign = pick(2) != 0;
        return raw_ ? make_raw_ext(sign ? Op::SExt : Op::ZExt, s, width) : (sign ? mk_sext(s, width) : mk_zext(s, width));
    }
    std::uint64_t v = rng_();
    switch (pick(4)) {
    case 0:
        v = 0;
        break;
    case 1:
        v = 1;
        break;
    case 2:
        v = mask(width);
        break;
    default:
        break;
    }
    return mk_const(width, v & mask(width));
}

inline symx::Expr ExprGen::value(unsigned width, int depth) {
    using namespace symx;
    if (depth <= 0 || pick(4) == 0) {
        return leaf(width);
    }
    static constexpr Op kBin[] = {Op::Add, Op::Sub, Op::Mul, Op::UDiv, Op::URem, Op::And,
                                  Op::Or,  Op::Xor, Op::Shl, Op::LShr, Op::AShr};
    switch (pick(6)) {
    case 0:
        return mk(pick(2) ? Op::Not : Op::Neg, {value(width, depth - 1)});
    case 1:
        return mk(Op::Ite, {boolean(depth - 1), value(width, depth - 1), value(width, depth - 1)});
    case 2:
        if (width >= 2) {
            unsigned lo_w = 1 + pick(width - 1);
            return mk(Op::Concat, {value(width - lo_w, depth - 1), value(lo_w, depth - 1)});
        }
        [[fallthrough]];
    default: {
        Op op = kBin[pick(std::size(kBin))];
        return mk(op, {value(width, depth - 1), value(width, depth - 1)});
    }
    }
}

inline symx::Expr ExprGen::boolean(int depth) {
    using namespace symx;
    static constexpr Op kCmp[] = {Op::Eq, Op::Ne, Op::Ult, Op::Ule, Op::Slt, Op::Sle};
    unsigned w = 1 + pick(8);
    if (depth > 0 && pick(3) == 0) {
        static constexpr Op kLog[] = {Op::And, Op::Or, Op::Xor};
        return mk(kLog[pick(3)], {boolean(depth - 1), boolean(depth - 1)});
    }
    if (depth > 0 && pick(6) == 0) {
        return mk(Op::Not, {boolean(depth - 1)});
    }
    return mk(kCmp[pick(std::size(kCmp))], {value(w, depth), value(w, depth)});
}

// Calls f(model) for every assignment of the given symbols.
template <class F>
void for_each_assignment(const std::vector<symx::Expr>& syms, F&& f) {
    unsigned total = 0;
    for (const auto& s : syms) {
        total += s.width();
    }
    for (std::uint64_t bits = 0; bits < (1ULL << total); ++bits) {
        symx::Model m;
        unsigned off = 0;
        for (const auto& s : syms) {
            m.set(s.sym_id(), (bits >> off) & symx::mask(s.width()));
            off += s.width();
        }
        if (!f(m)) {
            return;
        }
    }
}

} // namespace esx::testing
