#include "esx/symx/expr.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "esx/symx/eval.hpp"

namespace esx::symx {

namespace {

std::atomic<std::uint64_t> g_next_sym{1};

struct ScopeState {
    bool active = false;
    std::uint32_t ns = 0;
    std::uint64_t next = 0;
};
thread_local ScopeState t_scope;

std::uint64_t next_symbol_id() {
    if (t_scope.active) {
        return (static_cast<std::uint64_t>(t_scope.ns) << 40) | t_scope.next++;
    }
    return g_next_sym.fetch_add(1, std::memory_order_relaxed);
}

std::size_t mix(std::size_t h, std::uint64_t v) {
    v ^= v >> 33;
    v *= 0xff51afd7ed558ccdULL;
    v ^= v >> 33;
    return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

int label_compare(const Label& a, const Label& b) {
    if (a.kind != b.kind) {
        return a.kind < b.kind ? -1 : 1;
    }
    if (a.param != b.param) {
        return a.param < b.param ? -1 : 1;
    }
    if (a.offset != b.offset) {
        return a.offset < b.offset ? -1 : 1;
    }
    if (a.steered != b.steered) {
        return a.steered ? 1 : -1;
    }
    if (a.addr == b.addr) {
        return 0;
    }
    if (!a.addr || !b.addr) {
        return a.addr ? 1 : -1;
    }
    return structural_compare(a.addr.get(), b.addr.get());
}

void finish(Node& n) {
    std::size_t h = mix(static_cast<std::size_t>(n.op) * 131 + n.width, n.lo);
    h = mix(h, n.value);
    for (unsigned i = 0; i < n.arity; ++i) {
        h = mix(h, n.kids[i]->hash);
    }
    n.hash = h;
}

LabelSet union_labels(std::span<const Expr> ops) {
    LabelSet out;
    for (const auto& e : ops) {
        if (e.labels().empty()) {
            continue;
        }
        out = out.empty() ? e.labels() : out.merged(e.labels());
    }
    return out;
}

Expr build(Op op, unsigned width, unsigned lo, std::span<const Expr> kids, LabelSet labels) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->width = static_cast<std::uint8_t>(width);
    n->lo = static_cast<std::uint8_t>(lo);
    n->arity = static_cast<std::uint8_t>(kids.size());
    for (std::size_t i = 0; i < kids.size(); ++i) {
        n->kids[i] = kids[i].ptr();
    }
    n->labels = std::move(labels);
    finish(*n);
    return Expr(std::move(n));
}

// Returns e carrying the given labels (reuses e when already identical).
Expr relabel(const Expr& e, const LabelSet& labels) {
    if (e.labels().same_as(labels) || (labels.empty() && e.labels().empty())) {
        return e;
    }
    if (e.labels() == labels) {
        return e;
    }
    return with_labels(e, labels);
}

void check_width(unsigned w) {
    if (w < 1 || w > 64) {
        throw ExprError("width out of range: " + std::to_string(w));
    }
}

unsigned result_width(Op op, std::span<const Expr> ops) {
    auto need = [&](std::size_t n) {
        if (ops.size() != n) {
            throw ExprError(std::string("arity mismatch for ") + op_name(op));
        }
        for (const auto& e : ops) {
            if (!e.valid()) {
                throw ExprError(std::string("null operand for ") + op_name(op));
            }
        }
    };
    switch (op) {
    case Op::Const:
    case Op::Sym:
        throw ExprError("leaf operator passed to apply");
    case Op::Not:
    case Op::Neg:
        need(1);
        return ops[0].width();
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::UDiv:
    case Op::URem:
    case Op::And:
    case Op::Or:
    case Op::Xor:
    case Op::Shl:
    case Op::LShr:
    case Op::AShr:
        need(2);
        if (ops[0].width() != ops[1].width()) {
            throw ExprError(std::string("width mismatch for ") + op_name(op));
        }
        return ops[0].width();
    case Op::Eq:
    case Op::Ne:
    case Op::Ult:
    case Op::Ule:
    case Op::Slt:
    case Op::Sle:
        need(2);
        if (ops[0].width() != ops[1].width()) {
            throw ExprError(std::string("width mismatch for ") + op_name(op));
        }
        return 1;
    case Op::Ite:
        need(3);
        if (ops[0].width() != 1) {
            throw ExprError("ite condition must have width 1");
        }
        if (ops[1].width() != ops[2].width()) {
            throw ExprError("ite branch width mismatch");
        }
        return ops[1].width();
    case Op::Concat:
        need(2);
        if (ops[0].width() + ops[1].width() > 64) {
            throw ExprError("concat wider than 64 bits");
        }
        return ops[0].width() + ops[1].width();
    case Op::ZExt:
    case Op::SExt:
    case Op::Extract:
        throw ExprError(std::string("use the dedicated constructor for ") + op_name(op));
    }
    throw ExprError("unknown operator");
}

bool all_const(std::span<const Expr> ops) {
    return std::all_of(ops.begin(), ops.end(), [](const Expr& e) { return e.is_const(); });
}

bool is_zero(const Expr& e) { return e.is_const() && e.value() == 0; }
bool is_ones(const Expr& e) { return e.is_const() && e.value() == mask(e.width()); }
bool is_one(const Expr& e) { return e.is_const() && e.value() == 1; }

Expr fold(Op op, unsigned width, unsigned lo, std::span<const Expr> ops, const LabelSet& labels) {
    std::array<std::uint64_t, 3> vals{};
    std::array<unsigned, 3> widths{};
    for (std::size_t i = 0; i < ops.size(); ++i) {
        vals[i] = ops[i].value();
        widths[i] = ops[i].width();
    }
    std::uint64_t v = eval_op(op, width, lo, std::span(vals.data(), ops.size()), std::span(widths.data(), ops.size()));
    return mk_const(width, v, labels);
}

Expr simplify_binary(Op op, unsigned w, Expr a, Expr b, const LabelSet& labels);

Expr simplify_op(Op op, unsigned width, unsigned lo, std::span<const Expr> ops) {
    LabelSet labels = union_labels(ops);
    if (all_const(ops)) {
        return fold(op, width, lo, ops, labels);
    }
    switch (op) {
    case Op::Not: {
        const Expr& a = ops[0];
        if (a.op() == Op::Not) {
            return relabel(a.kid(0), labels);
        }
        break;
    }
    case Op::Neg: {
        const Expr& a = ops[0];
        if (a.op() == Op::Neg) {
            return relabel(a.kid(0), labels);
        }
        break;
    }
    case Op::Ite: {
        const Expr& c = ops[0];
        const Expr& a = ops[1];
        const Expr& b = ops[2];
        if (c.is_const()) {
            return relabel(c.value() ? a : b, labels);
        }
        if (a == b) {
            return relabel(a, labels);
        }
        if (width == 1 && a.is_const() && b.is_const()) {
            return relabel(a.value() ? c : apply(Op::Not, {c}), labels);
        }
        break;
    }
    case Op::Concat: {
        const Expr& a = ops[0];
        const Expr& b = ops[1];
        if (a.op() == Op::Extract && b.op() == Op::Extract && a.kid(0) == b.kid(0) &&
            a.lo() == b.lo() + b.width()) {
            return relabel(mk_extract(a.kid(0), a.lo() + a.width() - 1, b.lo()), labels);
        }
        if (is_zero(a)) {
            return relabel(mk_zext(b, width), labels);
        }
        break;
    }
    default:
        if (ops.size() == 2) {
            return simplify_binary(op, width, ops[0], ops[1], labels);
        }
        break;
    }
    return build(op, width, lo, ops, labels);
}

Expr simplify_binary(Op op, unsigned w, Expr a, Expr b, const LabelSet& labels) {
    // Canonical operand order for commutative operators: constants on the right.
    if (is_commutative(op)) {
        bool swap = false;
        if (a.is_const() && !b.is_const()) {
            swap = true;
        } else if (a.is_const() == b.is_const() && structural_compare(a.get(), b.get()) > 0) {
            swap = true;
        }
        if (swap) {
            std::swap(a, b);
        }
    }
    const unsigned ow = a.width();
    switch (op) {
    case Op::Add:
        if (is_zero(b)) {
            return relabel(a, labels);
        }
        if (b.is_const() && a.op() == Op::Add && a.kid(1).is_const()) {
            Expr c = mk_const(w, a.kid(1).value() + b.value());
            return relabel(apply(Op::Add, {a.kid(0), c}), labels);
        }
        break;
    case Op::Sub:
        if (a == b) {
            return mk_const(w, 0, labels);
        }
        if (is_zero(b)) {
            return relabel(a, labels);
        }
        if (b.is_const()) {
            return relabel(apply(Op::Add, {a, mk_const(w, (~b.value() + 1) & mask(w))}), labels);
        }
        break;
    case Op::Mul:
        if (is_zero(b)) {
            return mk_const(w, 0, labels);
        }
        if (is_one(b)) {
            return relabel(a, labels);
        }
        break;
    case Op::UDiv:
        if (is_one(b)) {
            return relabel(a, labels);
        }
        break;
    case Op::URem:
        if (is_one(b)) {
            return mk_const(w, 0, labels);
        }
        break;
    case Op::And:
        if (is_zero(b)) {
            return mk_const(w, 0, labels);
        }
        if (is_ones(b) || a == b) {
            return relabel(a, labels);
        }
        break;
    case Op::Or:
        if (is_zero(b) || a == b) {
            return relabel(a, labels);
        }
        if (is_ones(b)) {
            return mk_const(w, mask(w), labels);
        }
        break;
    case Op::Xor:
        if (a == b) {
            return mk_const(w, 0, labels);
        }
        if (is_zero(b)) {
            return relabel(a, labels);
        }
        if (w == 1 && is_one(b)) {
            return relabel(apply(Op::Not, {a}), labels);
        }
        break;
    case Op::Shl:
    case Op::LShr:
        if (is_zero(b)) {
            return relabel(a, labels);
        }
        if (b.is_const() && b.value() >= w) {
            return mk_const(w, 0, labels);
        }
        if (is_zero(a)) {
            return mk_const(w, 0, labels);
        }
        break;
    case Op::AShr:
        if (is_zero(b)) {
            return relabel(a, labels);
        }
        break;
    case Op::Eq:
        if (a == b) {
            return mk_const(1, 1, labels);
        }
        if (b.is_const()) {
            if (ow == 1) {
                return relabel(b.value() ? a : apply(Op::Not, {a}), labels);
            }
            if (a.op() == Op::Add && a.kid(1).is_const()) {
                Expr c = mk_const(ow, b.value() - a.kid(1).value());
                return relabel(apply(Op::Eq, {a.kid(0), c}), labels);
            }
            if (a.op() == Op::ZExt) {
                Expr inner = a.kid(0);
                if ((b.value() & ~mask(inner.width())) != 0) {
                    return mk_const(1, 0, labels);
                }
                return relabel(apply(Op::Eq, {inner, mk_const(inner.width(), b.value())}), labels);
            }
        }
        break;
    case Op::Ne:
        if (a == b) {
            return mk_const(1, 0, labels);
        }
        if (b.is_const()) {
            if (ow == 1) {
                return relabel(b.value() ? apply(Op::Not, {a}) : a, labels);
            }
            if (a.op() == Op::ZExt) {
                Expr inner = a.kid(0);
                if ((b.value() & ~mask(inner.width())) != 0) {
                    return mk_const(1, 1, labels);
                }
                return relabel(apply(Op::Ne, {inner, mk_const(inner.width(), b.value())}), labels);
            }
        }
        break;
    case Op::Ult:
        if (a == b || is_zero(b)) {
            return mk_const(1, 0, labels);
        }
        break;
    case Op::Ule:
        if (a == b || is_zero(a) || is_ones(b)) {
            return mk_const(1, 1, labels);
        }
        break;
    case Op::Slt:
        if (a == b) {
            return mk_const(1, 0, labels);
        }
        break;
    case Op::Sle:
        if (a == b) {
            return mk_const(1, 1, labels);
        }
        break;
    default:
        break;
    }
    std::array<Expr, 2> kids{a, b};
    return build(op, w, 0, kids, labels);
}

void render(const Expr& e, std::ostringstream& os) {
    switch (e.op()) {
    case Op::Const:
        os << "0x" << std::hex << e.value() << std::dec;
        if (e.width() != 64) {
            os << ":" << e.width();
        }
        return;
    case Op::Sym:
        os << e.name();
        return;
    case Op::Extract:
        os << "(extract[" << (e.lo() + e.width() - 1) << ":" << e.lo() << "] ";
        render(e.kid(0), os);
        os << ")";
        return;
    case Op::ZExt:
    case Op::SExt:
        os << "(" << op_name(e.op()) << e.width() << " ";
        render(e.kid(0), os);
        os << ")";
        return;
    default:
        os << "(" << op_name(e.op());
        for (unsigned i = 0; i < e.arity(); ++i) {
            os << " ";
            render(e.kid(i), os);
        }
        os << ")";
        return;
    }
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
    case Op::Const: return "const";
    case Op::Sym: return "sym";
    case Op::Not: return "not";
    case Op::Neg: return "neg";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::UDiv: return "udiv";
    case Op::URem: return "urem";
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Xor: return "xor";
    case Op::Shl: return "shl";
    case Op::LShr: return "lshr";
    case Op::AShr: return "ashr";
    case Op::Eq: return "eq";
    case Op::Ne: return "ne";
    case Op::Ult: return "ult";
    case Op::Ule: return "ule";
    case Op::Slt: return "slt";
    case Op::Sle: return "sle";
    case Op::Ite: return "ite";
    case Op::ZExt: return "zext";
    case Op::SExt: return "sext";
    case Op::Extract: return "extract";
    case Op::Concat: return "concat";
    }
    return "?";
}

bool is_comparison(Op op) {
    return op == Op::Eq || op == Op::Ne || op == Op::Ult || op == Op::Ule || op == Op::Slt || op == Op::Sle;
}

bool is_commutative(Op op) {
    return op == Op::Add || op == Op::Mul || op == Op::And || op == Op::Or || op == Op::Xor || op == Op::Eq ||
           op == Op::Ne;
}

const char* label_kind_name(LabelKind k) {
    switch (k) {
    case LabelKind::EcallArg: return "ecall-arg";
    case LabelKind::HostMemory: return "host-memory";
    case LabelKind::GlobalState: return "global-state";
    case LabelKind::DerefOf: return "deref-of";
    case LabelKind::EnclaveAlloc: return "enclave-alloc";
    case LabelKind::Constant: return "constant";
    }
    return "?";
}

LabelSet::LabelSet(std::vector<Label> labels) {
    std::sort(labels.begin(), labels.end(), [](const Label& a, const Label& b) { return label_compare(a, b) < 0; });
    labels.erase(std::unique(labels.begin(), labels.end(),
                             [](const Label& a, const Label& b) { return label_compare(a, b) == 0; }),
                 labels.end());
    if (!labels.empty()) {
        labels_ = std::make_shared<const std::vector<Label>>(std::move(labels));
    }
}

std::span<const Label> LabelSet::items() const {
    if (!labels_) {
        return {};
    }
    return {labels_->data(), labels_->size()};
}

bool LabelSet::contains(LabelKind k) const {
    for (const auto& l : items()) {
        if (l.kind == k) {
            return true;
        }
    }
    return false;
}

LabelSet LabelSet::merged(const LabelSet& other) const {
    if (other.empty() || same_as(other)) {
        return *this;
    }
    if (empty()) {
        return other;
    }
    std::vector<Label> out;
    out.reserve(labels_->size() + other.labels_->size());
    auto a = labels_->begin();
    auto b = other.labels_->begin();
    bool a_superset = true;
    bool b_superset = true;
    while (a != labels_->end() || b != other.labels_->end()) {
        if (b == other.labels_->end()) {
            b_superset = false;
            out.push_back(*a++);
            continue;
        }
        if (a == labels_->end()) {
            a_superset = false;
            out.push_back(*b++);
            continue;
        }
        int c = label_compare(*a, *b);
        if (c == 0) {
            out.push_back(*a);
            ++a;
            ++b;
        } else if (c < 0) {
            b_superset = false;
            out.push_back(*a++);
        } else {
            a_superset = false;
            out.push_back(*b++);
        }
    }
    if (a_superset) {
        return *this;
    }
    if (b_superset) {
        return other;
    }
    LabelSet r;
    r.labels_ = std::make_shared<const std::vector<Label>>(std::move(out));
    return r;
}

LabelSet LabelSet::with(const Label& l) const { return merged(LabelSet({l})); }

bool operator==(const LabelSet& a, const LabelSet& b) {
    auto x = a.items();
    auto y = b.items();
    if (x.size() != y.size()) {
        return false;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (label_compare(x[i], y[i]) != 0) {
            return false;
        }
    }
    return true;
}

const std::string& Expr::name() const {
    static const std::string empty;
    return node_->name ? *node_->name : empty;
}

bool structurally_equal(const Node* a, const Node* b) {
    if (a == b) {
        return true;
    }
    if (a->hash != b->hash || a->op != b->op || a->width != b->width || a->lo != b->lo || a->value != b->value ||
        a->arity != b->arity) {
        return false;
    }
    for (unsigned i = 0; i < a->arity; ++i) {
        if (!structurally_equal(a->kids[i].get(), b->kids[i].get())) {
            return false;
        }
    }
    return true;
}

int structural_compare(const Node* a, const Node* b) {
    if (a == b) {
        return 0;
    }
    if (a->hash != b->hash) {
        return a->hash < b->hash ? -1 : 1;
    }
    auto cmp = [](auto x, auto y) { return x < y ? -1 : (x > y ? 1 : 0); };
    if (int c = cmp(a->op, b->op)) {
        return c;
    }
    if (int c = cmp(a->width, b->width)) {
        return c;
    }
    if (int c = cmp(a->lo, b->lo)) {
        return c;
    }
    if (int c = cmp(a->value, b->value)) {
        return c;
    }
    if (int c = cmp(a->arity, b->arity)) {
        return c;
    }
    for (unsigned i = 0; i < a->arity; ++i) {
        if (int c = structural_compare(a->kids[i].get(), b->kids[i].get())) {
            return c;
        }
    }
    return 0;
}

bool operator==(const Expr& a, const Expr& b) {
    if (!a.valid() || !b.valid()) {
        return a.valid() == b.valid();
    }
    return structurally_equal(a.get(), b.get());
}

Expr mk_const(unsigned width, std::uint64_t value, LabelSet labels) {
    check_width(width);
    auto n = std::make_shared<Node>();
    n->op = Op::Const;
    n->width = static_cast<std::uint8_t>(width);
    n->value = value & mask(width);
    n->labels = std::move(labels);
    finish(*n);
    return Expr(std::move(n));
}

Expr mk_true() { return mk_const(1, 1); }
Expr mk_false() { return mk_const(1, 0); }
Expr mk_bool(bool b) { return mk_const(1, b ? 1 : 0); }

Expr mk_sym(unsigned width, LabelSet origin, std::string name) {
    check_width(width);
    auto n = std::make_shared<Node>();
    n->op = Op::Sym;
    n->width = static_cast<std::uint8_t>(width);
    n->value = next_symbol_id();
    if (name.empty()) {
        name = "s" + std::to_string(n->value);
    }
    n->name = std::make_shared<const std::string>(std::move(name));
    n->labels = std::move(origin);
    finish(*n);
    return Expr(std::move(n));
}

Expr apply(Op op, std::span<const Expr> operands) {
    unsigned w = result_width(op, operands);
    return simplify_op(op, w, 0, operands);
}

Expr apply(Op op, std::initializer_list<Expr> operands) {
    return apply(op, std::span<const Expr>(operands.begin(), operands.size()));
}

Expr make_raw(Op op, std::span<const Expr> operands) {
    unsigned w = result_width(op, operands);
    return build(op, w, 0, operands, union_labels(operands));
}

Expr make_raw(Op op, std::initializer_list<Expr> operands) {
    return make_raw(op, std::span<const Expr>(operands.begin(), operands.size()));
}

Expr make_raw_extract(const Expr& e, unsigned hi, unsigned lo) {
    if (!e.valid() || hi < lo || hi >= e.width()) {
        throw ExprError("extract bounds outside operand width");
    }
    std::array<Expr, 1> k{e};
    return build(Op::Extract, hi - lo + 1, lo, k, e.labels());
}

Expr make_raw_ext(Op op, const Expr& e, unsigned width) {
    if (op != Op::ZExt && op != Op::SExt) {
        throw ExprError("not an extension operator");
    }
    check_width(width);
    if (!e.valid() || width < e.width()) {
        throw ExprError("extension narrower than operand");
    }
    std::array<Expr, 1> k{e};
    return build(op, width, 0, k, e.labels());
}

Expr mk_extract(const Expr& e, unsigned hi, unsigned lo) {
    if (!e.valid() || hi < lo || hi >= e.width()) {
        throw ExprError("extract bounds outside operand width");
    }
    const unsigned w = hi - lo + 1;
    const LabelSet& labels = e.labels();
    if (lo == 0 && w == e.width()) {
        return e;
    }
    if (e.is_const()) {
        return mk_const(w, e.value() >> lo, labels);
    }
    switch (e.op()) {
    case Op::Extract:
        return relabel(mk_extract(e.kid(0), e.lo() + hi, e.lo() + lo), labels);
    case Op::Concat: {
        const unsigned bw = e.kid(1).width();
        if (hi < bw) {
            return relabel(mk_extract(e.kid(1), hi, lo), labels);
        }
        if (lo >= bw) {
            return relabel(mk_extract(e.kid(0), hi - bw, lo - bw), labels);
        }
        break;
    }
    case Op::ZExt: {
        const unsigned iw = e.kid(0).width();
        if (hi < iw) {
            return relabel(mk_extract(e.kid(0), hi, lo), labels);
        }
        if (lo >= iw) {
            return mk_const(w, 0, labels);
        }
        break;
    }
    case Op::SExt: {
        const unsigned iw = e.kid(0).width();
        if (hi < iw) {
            return relabel(mk_extract(e.kid(0), hi, lo), labels);
        }
        break;
    }
    default:
        break;
    }
    std::array<Expr, 1> k{e};
    return build(Op::Extract, w, lo, k, labels);
}

Expr mk_zext(const Expr& e, unsigned width) {
    check_width(width);
    if (!e.valid() || width < e.width()) {
        throw ExprError("extension narrower than operand");
    }
    if (width == e.width()) {
        return e;
    }
    if (e.is_const()) {
        return mk_const(width, e.value(), e.labels());
    }
    if (e.op() == Op::ZExt) {
        return relabel(mk_zext(e.kid(0), width), e.labels());
    }
    std::array<Expr, 1> k{e};
    return build(Op::ZExt, width, 0, k, e.labels());
}

Expr mk_sext(const Expr& e, unsigned width) {
    check_width(width);
    if (!e.valid() || width < e.width()) {
        throw ExprError("extension narrower than operand");
    }
    if (width == e.width()) {
        return e;
    }
    if (e.is_const()) {
        std::uint64_t v = e.value();
        if ((v >> (e.width() - 1)) & 1) {
            v |= ~mask(e.width());
        }
        return mk_const(width, v, e.labels());
    }
    if (e.op() == Op::SExt || e.op() == Op::ZExt) {
        // sext of zext keeps the zero-extension's top bit (zero)
        if (e.op() == Op::ZExt) {
            return relabel(mk_zext(e.kid(0), width), e.labels());
        }
        return relabel(mk_sext(e.kid(0), width), e.labels());
    }
    std::array<Expr, 1> k{e};
    return build(Op::SExt, width, 0, k, e.labels());
}

Expr with_labels(const Expr& e, LabelSet labels) {
    auto n = std::make_shared<Node>(*e.get());
    n->labels = std::move(labels);
    return Expr(std::move(n));
}

Expr simplify(const Expr& e) {
    std::unordered_map<const Node*, Expr> memo;
    auto go = [&](auto&& self, const Expr& x) -> Expr {
        if (x.arity() == 0) {
            return x;
        }
        auto it = memo.find(x.get());
        if (it != memo.end()) {
            return it->second;
        }
        std::array<Expr, 3> kids;
        for (unsigned i = 0; i < x.arity(); ++i) {
            kids[i] = self(self, x.kid(i));
        }
        Expr r;
        switch (x.op()) {
        case Op::Extract:
            r = mk_extract(kids[0], x.lo() + x.width() - 1, x.lo());
            break;
        case Op::ZExt:
            r = mk_zext(kids[0], x.width());
            break;
        case Op::SExt:
            r = mk_sext(kids[0], x.width());
            break;
        default:
            r = apply(x.op(), std::span<const Expr>(kids.data(), x.arity()));
            break;
        }
        memo.emplace(x.get(), r);
        return r;
    };
    return go(go, e);
}

std::vector<Expr> collect_symbols(std::span<const Expr> roots) {
    std::unordered_set<const Node*> seen;
    std::vector<Expr> out;
    std::vector<Expr> stack(roots.begin(), roots.end());
    while (!stack.empty()) {
        Expr e = stack.back();
        stack.pop_back();
        if (!seen.insert(e.get()).second) {
            continue;
        }
        if (e.is_sym()) {
            out.push_back(e);
            continue;
        }
        for (unsigned i = 0; i < e.arity(); ++i) {
            stack.push_back(e.kid(i));
        }
    }
    std::sort(out.begin(), out.end(), [](const Expr& a, const Expr& b) { return a.sym_id() < b.sym_id(); });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const Expr& a, const Expr& b) { return a.sym_id() == b.sym_id(); }),
              out.end());
    return out;
}

std::size_t node_count(const Expr& e) {
    std::size_t n = e.arity() > 0 ? 1 : 0;
    for (unsigned i = 0; i < e.arity(); ++i) {
        n += node_count(e.kid(i));
    }
    return n;
}

std::string to_string(const Expr& e) {
    if (!e.valid()) {
        return "<null>";
    }
    std::ostringstream os;
    render(e, os);
    return os.str();
}

SymbolScope::SymbolScope(std::uint32_t ns)
    : saved_ns_(t_scope.ns), saved_next_(t_scope.next), saved_active_(t_scope.active) {
    t_scope.active = true;
    t_scope.ns = ns;
    t_scope.next = 0;
}

SymbolScope::~SymbolScope() {
    t_scope.active = saved_active_;
    t_scope.ns = saved_ns_;
    t_scope.next = saved_next_;
}

} // namespace esx::symx
