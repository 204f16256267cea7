#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "esx/symx/expr.hpp"

namespace esx::testing {

// Reference evaluator, written independently of the library's folding code.
// The DAG is flattened once; each evaluation is a linear pass.
class RefEval {
  public:
    RefEval(const symx::Expr& root, const std::vector<symx::Expr>& syms) {
        for (std::size_t i = 0; i < syms.size(); ++i) {
            slot_of_sym_[syms[i].sym_id()] = static_cast<int>(i);
        }
        root_ = visit(root);
    }

    // vals[i] is the value of syms[i].
    std::uint64_t operator()(const std::vector<std::uint64_t>& vals) {
        regs_.resize(code_.size());
        for (std::size_t i = 0; i < code_.size(); ++i) {
            regs_[i] = step(code_[i], vals);
        }
        return regs_[root_];
    }

  private:
    struct Ins {
        symx::Op op;
        unsigned w;
        unsigned lo;
        std::uint64_t k; // constant value or symbol slot
        int a = -1, b = -1, c = -1;
        unsigned wa = 0, wb = 0;
    };

    static std::uint64_t m(unsigned w) { return w == 64 ? ~0ULL : (1ULL << w) - 1; }
    static std::int64_t sx(std::uint64_t v, unsigned w) {
        std::uint64_t sign = 1ULL << (w - 1);
        return static_cast<std::int64_t>((v ^ sign) - sign);
    }

    int visit(const symx::Expr& e) {
        auto it = index_.find(e.get());
        if (it != index_.end()) {
            return it->second;
        }
        Ins ins{e.op(), e.width(), e.lo(), 0};
        if (e.is_const()) {
            ins.k = e.value();
        } else if (e.is_sym()) {
            ins.k = static_cast<std::uint64_t>(slot_of_sym_.at(e.sym_id()));
        } else {
            if (e.arity() > 0) {
                ins.a = visit(e.kid(0));
                ins.wa = e.kid(0).width();
            }
            if (e.arity() > 1) {
                ins.b = visit(e.kid(1));
                ins.wb = e.kid(1).width();
            }
            if (e.arity() > 2) {
                ins.c = visit(e.kid(2));
            }
        }
        code_.push_back(ins);
        int idx = static_cast<int>(code_.size()) - 1;
        index_[e.get()] = idx;
        return idx;
    }

    std::uint64_t step(const Ins& i, const std::vector<std::uint64_t>& vals) const {
        using symx::Op;
        const std::uint64_t M = m(i.w);
        std::uint64_t a = i.a >= 0 ? regs_[i.a] : 0;
        std::uint64_t b = i.b >= 0 ? regs_[i.b] : 0;
        switch (i.op) {
        case Op::Const: return i.k;
        case Op::Sym: return vals[i.k] & M;
        case Op::Not: return (~a) & M;
        case Op::Neg: return (0 - a) & M;
        case Op::Add: return (a + b) & M;
        case Op::Sub: return (a - b) & M;
        case Op::Mul: return (a * b) & M;
        case Op::UDiv: return b ? a / b : M;
        case Op::URem: return b ? a % b : a;
        case Op::And: return a & b;
        case Op::Or: return a | b;
        case Op::Xor: return a ^ b;
        case Op::Shl: return b < i.w ? (a << b) & M : 0;
        case Op::LShr: return b < i.w ? a >> b : 0;
        case Op::AShr: {
            std::int64_t s = sx(a, i.w);
            std::uint64_t sh = b < i.w ? b : i.w - 1;
            return static_cast<std::uint64_t>(s >> sh) & M;
        }
        case Op::Eq: return a == b;
        case Op::Ne: return a != b;
        case Op::Ult: return a < b;
        case Op::Ule: return a <= b;
        case Op::Slt: return sx(a, i.wa) < sx(b, i.wa);
        case Op::Sle: return sx(a, i.wa) <= sx(b, i.wa);
        case Op::Ite: return a ? b : regs_[i.c];
        case Op::ZExt: return a;
        case Op::SExt: return static_cast<std::uint64_t>(sx(a, i.wa)) & M;
        case Op::Extract: return (a >> i.lo) & M;
        case Op::Concat: return ((a << i.wb) | b) & M;
        }
        return 0;
    }

    std::unordered_map<std::uint64_t, int> slot_of_sym_;
    std::unordered_map<const symx::Node*, int> index_;
    std::vector<Ins> code_;
    std::vector<std::uint64_t> regs_;
    int root_ = -1;
};

// Exhaustive search: returns true if some assignment makes every predicate 1.
inline bool brute_sat(const std::vector<symx::Expr>& preds, const std::vector<symx::Expr>& syms) {
    std::vector<RefEval> evs;
    for (const auto& p : preds) {
        evs.emplace_back(p, syms);
    }
    unsigned total = 0;
    for (const auto& s : syms) {
        total += s.width();
    }
    std::vector<std::uint64_t> vals(syms.size());
    for (std::uint64_t bits = 0; bits < (1ULL << total); ++bits) {
        unsigned off = 0;
        for (std::size_t i = 0; i < syms.size(); ++i) {
            vals[i] = (bits >> off) & ((1ULL << syms[i].width()) - 1);
            off += syms[i].width();
        }
        bool all = true;
        for (auto& ev : evs) {
            if (ev(vals) != 1) {
                all = false;
                break;
            }
        }
        if (all) {
            return true;
        }
    }
    return false;
}

} // namespace esx::testing
