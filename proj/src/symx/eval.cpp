#include "esx/symx/eval.hpp"

#include <unordered_map>

namespace esx::symx {

namespace {

std::int64_t to_signed(std::uint64_t v, unsigned w) {
    if (w < 64 && ((v >> (w - 1)) & 1)) {
        v |= ~mask(w);
    }
    return static_cast<std::int64_t>(v);
}

std::uint64_t eval_impl(const Model& model, const Expr& expr, bool total) {
    std::unordered_map<const Node*, std::uint64_t> memo;
    auto go = [&](auto&& self, const Expr& e) -> std::uint64_t {
        if (e.is_const()) {
            return e.value();
        }
        if (e.is_sym()) {
            auto v = model.get(e.sym_id());
            if (!v) {
                if (total) {
                    return 0;
                }
                throw UnassignedSymbol("unassigned symbol " + e.name());
            }
            return *v & mask(e.width());
        }
        auto it = memo.find(e.get());
        if (it != memo.end()) {
            return it->second;
        }
        std::uint64_t vals[3];
        unsigned widths[3];
        for (unsigned i = 0; i < e.arity(); ++i) {
            vals[i] = self(self, e.kid(i));
            widths[i] = e.kid(i).width();
        }
        std::uint64_t r = eval_op(e.op(), e.width(), e.lo(), std::span(vals, e.arity()), std::span(widths, e.arity()));
        memo.emplace(e.get(), r);
        return r;
    };
    return go(go, expr);
}

} // namespace

std::uint64_t eval_op(Op op, unsigned width, unsigned lo, std::span<const std::uint64_t> vals,
                      std::span<const unsigned> widths) {
    const std::uint64_t m = mask(width);
    auto a = vals.size() > 0 ? vals[0] : 0;
    auto b = vals.size() > 1 ? vals[1] : 0;
    const unsigned ow = widths.empty() ? width : widths[0];
    switch (op) {
    case Op::Const:
    case Op::Sym:
        return a & m;
    case Op::Not:
        return ~a & m;
    case Op::Neg:
        return (~a + 1) & m;
    case Op::Add:
        return (a + b) & m;
    case Op::Sub:
        return (a - b) & m;
    case Op::Mul:
        return (a * b) & m;
    case Op::UDiv:
        return b == 0 ? m : (a / b) & m;
    case Op::URem:
        return b == 0 ? a & m : (a % b) & m;
    case Op::And:
        return a & b & m;
    case Op::Or:
        return (a | b) & m;
    case Op::Xor:
        return (a ^ b) & m;
    case Op::Shl:
        return b >= width ? 0 : (a << b) & m;
    case Op::LShr:
        return b >= width ? 0 : (a >> b) & m;
    case Op::AShr: {
        std::int64_t sa = to_signed(a, width);
        if (b >= width) {
            return sa < 0 ? m : 0;
        }
        return static_cast<std::uint64_t>(sa >> b) & m;
    }
    case Op::Eq:
        return a == b ? 1 : 0;
    case Op::Ne:
        return a != b ? 1 : 0;
    case Op::Ult:
        return a < b ? 1 : 0;
    case Op::Ule:
        return a <= b ? 1 : 0;
    case Op::Slt:
        return to_signed(a, ow) < to_signed(b, ow) ? 1 : 0;
    case Op::Sle:
        return to_signed(a, ow) <= to_signed(b, ow) ? 1 : 0;
    case Op::Ite:
        return (vals[0] ? vals[1] : vals[2]) & m;
    case Op::ZExt:
        return a & m;
    case Op::SExt:
        return static_cast<std::uint64_t>(to_signed(a, ow)) & m;
    case Op::Extract:
        return (a >> lo) & m;
    case Op::Concat:
        return ((a << widths[1]) | b) & m;
    }
    return 0;
}

std::uint64_t eval(const Model& model, const Expr& expr) { return eval_impl(model, expr, false); }

std::uint64_t eval_total(const Model& model, const Expr& expr) { return eval_impl(model, expr, true); }

} // namespace esx::symx
