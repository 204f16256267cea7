#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace esx::symx {

// Closed operator set. Const and Sym are leaves.
enum class Op : std::uint8_t {
    Const,
    Sym,
    Not,
    Neg,
    Add,
    Sub,
    Mul,
    UDiv,
    URem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
    Sle,
    Ite,
    ZExt,
    SExt,
    Extract,
    Concat,
};

const char* op_name(Op op);
bool is_comparison(Op op);
bool is_commutative(Op op);

class ExprError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

// Provenance labels. A DerefOf/HostMemory label points at the address
// expression the value was loaded from; chains are acyclic because an
// address always exists before the value loaded through it.
enum class LabelKind : std::uint8_t { EcallArg, HostMemory, GlobalState, DerefOf, EnclaveAlloc, Constant };

const char* label_kind_name(LabelKind k);

struct Label {
    LabelKind kind = LabelKind::Constant;
    std::uint32_t param = 0;
    std::uint32_t offset = 0;
    // DerefOf: the read address was attacker-steerable across enclave memory.
    bool steered = false;
    NodePtr addr;

    static Label ecall_arg(std::uint32_t param, std::uint32_t offset) {
        return Label{LabelKind::EcallArg, param, offset, false, nullptr};
    }
    static Label host_memory(NodePtr addr) { return Label{LabelKind::HostMemory, 0, 0, false, std::move(addr)}; }
    static Label global_state() { return Label{LabelKind::GlobalState, 0, 0, false, nullptr}; }
    static Label deref_of(NodePtr addr, bool steered) {
        return Label{LabelKind::DerefOf, 0, 0, steered, std::move(addr)};
    }
    static Label enclave_alloc() { return Label{LabelKind::EnclaveAlloc, 0, 0, false, nullptr}; }
    static Label constant() { return Label{LabelKind::Constant, 0, 0, false, nullptr}; }
};

// Sorted, duplicate-free, immutable.
class LabelSet {
  public:
    LabelSet() = default;
    explicit LabelSet(std::vector<Label> labels);

    [[nodiscard]] bool empty() const { return !labels_ || labels_->empty(); }
    [[nodiscard]] std::span<const Label> items() const;
    [[nodiscard]] bool contains(LabelKind k) const;
    [[nodiscard]] LabelSet merged(const LabelSet& other) const;
    [[nodiscard]] LabelSet with(const Label& l) const;
    [[nodiscard]] bool same_as(const LabelSet& o) const { return labels_ == o.labels_; }
    friend bool operator==(const LabelSet& a, const LabelSet& b);

  private:
    std::shared_ptr<const std::vector<Label>> labels_;
};

struct Node {
    Op op;
    std::uint8_t width;
    std::uint8_t lo = 0; // Extract: low bit index
    std::uint64_t value = 0; // Const: value, Sym: symbol id
    std::array<NodePtr, 3> kids{};
    std::uint8_t arity = 0;
    std::size_t hash = 0;
    LabelSet labels;
    std::shared_ptr<const std::string> name; // Sym only
};

// Immutable, shareable handle to an expression DAG node.
class Expr {
  public:
    Expr() = default;
    explicit Expr(NodePtr n) : node_(std::move(n)) {}

    [[nodiscard]] bool valid() const { return node_ != nullptr; }
    [[nodiscard]] Op op() const { return node_->op; }
    [[nodiscard]] unsigned width() const { return node_->width; }
    [[nodiscard]] bool is_const() const { return node_->op == Op::Const; }
    [[nodiscard]] bool is_sym() const { return node_->op == Op::Sym; }
    [[nodiscard]] std::uint64_t value() const { return node_->value; }
    [[nodiscard]] std::uint64_t sym_id() const { return node_->value; }
    [[nodiscard]] unsigned lo() const { return node_->lo; }
    [[nodiscard]] unsigned arity() const { return node_->arity; }
    [[nodiscard]] Expr kid(unsigned i) const { return Expr(node_->kids[i]); }
    [[nodiscard]] const LabelSet& labels() const { return node_->labels; }
    [[nodiscard]] const std::string& name() const;
    [[nodiscard]] std::size_t hash() const { return node_->hash; }
    [[nodiscard]] const Node* get() const { return node_.get(); }
    [[nodiscard]] const NodePtr& ptr() const { return node_; }

    [[nodiscard]] bool is_true() const { return is_const() && width() == 1 && value() == 1; }
    [[nodiscard]] bool is_false() const { return is_const() && width() == 1 && value() == 0; }

    // Structural equality; labels are annotations and do not participate.
    friend bool operator==(const Expr& a, const Expr& b);
    friend bool operator!=(const Expr& a, const Expr& b) { return !(a == b); }

  private:
    NodePtr node_;
};

bool structurally_equal(const Node* a, const Node* b);
// Total structural order, consistent with structural_equal.
int structural_compare(const Node* a, const Node* b);

struct ExprHash {
    std::size_t operator()(const Expr& e) const { return e.hash(); }
};

inline std::uint64_t mask(unsigned width) { return width >= 64 ? ~0ULL : ((1ULL << width) - 1); }

Expr mk_const(unsigned width, std::uint64_t value, LabelSet labels = {});
Expr mk_true();
Expr mk_false();
Expr mk_bool(bool b);
Expr mk_sym(unsigned width, LabelSet origin, std::string name = {});

// Simplifying constructor; throws ExprError on arity/width mismatch.
Expr apply(Op op, std::span<const Expr> operands);
Expr apply(Op op, std::initializer_list<Expr> operands);
// Structural constructor without simplification (used to test simplify).
Expr make_raw(Op op, std::span<const Expr> operands);
Expr make_raw(Op op, std::initializer_list<Expr> operands);
Expr simplify(const Expr& e);

Expr mk_extract(const Expr& e, unsigned hi, unsigned lo);
Expr mk_zext(const Expr& e, unsigned width);
Expr mk_sext(const Expr& e, unsigned width);
Expr make_raw_extract(const Expr& e, unsigned hi, unsigned lo);
Expr make_raw_ext(Op op, const Expr& e, unsigned width);

// Same structure, labels replaced.
Expr with_labels(const Expr& e, LabelSet labels);

// Convenience wrappers.
inline Expr add(const Expr& a, const Expr& b) { return apply(Op::Add, {a, b}); }
inline Expr sub(const Expr& a, const Expr& b) { return apply(Op::Sub, {a, b}); }
inline Expr band(const Expr& a, const Expr& b) { return apply(Op::And, {a, b}); }
inline Expr bor(const Expr& a, const Expr& b) { return apply(Op::Or, {a, b}); }
inline Expr bnot(const Expr& a) { return apply(Op::Not, {a}); }
inline Expr eq(const Expr& a, const Expr& b) { return apply(Op::Eq, {a, b}); }
inline Expr ne(const Expr& a, const Expr& b) { return apply(Op::Ne, {a, b}); }
inline Expr ult(const Expr& a, const Expr& b) { return apply(Op::Ult, {a, b}); }
inline Expr ule(const Expr& a, const Expr& b) { return apply(Op::Ule, {a, b}); }
inline Expr ite(const Expr& c, const Expr& a, const Expr& b) { return apply(Op::Ite, {c, a, b}); }
inline Expr concat(const Expr& hi, const Expr& lo) { return apply(Op::Concat, {hi, lo}); }

// Collect distinct symbols (sorted by id).
std::vector<Expr> collect_symbols(std::span<const Expr> roots);
std::size_t node_count(const Expr& e);

// S-expression rendering: (add arg0 0x8)
std::string to_string(const Expr& e);

// Per-thread symbol-id namespace. An exploration opens a scope so that ids
// are deterministic regardless of how explorations are scheduled.
class SymbolScope {
  public:
    explicit SymbolScope(std::uint32_t ns);
    ~SymbolScope();
    SymbolScope(const SymbolScope&) = delete;
    SymbolScope& operator=(const SymbolScope&) = delete;

  private:
    std::uint32_t saved_ns_;
    std::uint64_t saved_next_;
    bool saved_active_;
};

} // namespace esx::symx
