#include "esx/detect/detectors.hpp"

#include <deque>
#include <set>
#include <sstream>
#include <unordered_map>

#include "esx/mem/memory.hpp"

namespace esx::detect {

using exec::State;
using symx::Expr;
using symx::LabelKind;
using symx::mk_const;

namespace {

Expr c64(std::uint64_t v) { return mk_const(64, v); }

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::string render(const Expr& e, std::size_t cap = 240) {
    std::string s = symx::to_string(e);
    if (s.size() > cap) {
        s = s.substr(0, cap) + "...";
    }
    return s;
}

unsigned roots_rec(const symx::Node* n, std::unordered_map<const symx::Node*, unsigned>& memo);

unsigned roots_of_labels(const symx::LabelSet& labels, std::unordered_map<const symx::Node*, unsigned>& memo) {
    unsigned r = 0;
    for (const auto& l : labels.items()) {
        switch (l.kind) {
        case LabelKind::EcallArg:
            r |= kRootArg;
            break;
        case LabelKind::GlobalState:
            r |= kRootGlobal;
            break;
        case LabelKind::HostMemory: {
            if (!l.addr) {
                r |= kRootHost;
                break;
            }
            unsigned a = roots_rec(l.addr.get(), memo);
            // Host memory reached only through a global pointer is as trusted as the global.
            r |= a == kRootGlobal ? kRootGlobal : (kRootHost | (a & kRootArg));
            break;
        }
        case LabelKind::DerefOf:
            if (l.steered && l.addr) {
                r |= roots_rec(l.addr.get(), memo);
            }
            break;
        case LabelKind::EnclaveAlloc:
        case LabelKind::Constant:
            break;
        }
    }
    return r;
}

unsigned roots_rec(const symx::Node* n, std::unordered_map<const symx::Node*, unsigned>& memo) {
    if (auto it = memo.find(n); it != memo.end()) {
        return it->second;
    }
    memo[n] = 0; // provenance chains are acyclic; this only guards re-entry
    unsigned r = roots_of_labels(n->labels, memo);
    memo[n] = r;
    return r;
}

std::vector<std::uint8_t> le_bytes(std::uint64_t v, unsigned n) {
    std::vector<std::uint8_t> out(n);
    for (unsigned i = 0; i < n; ++i) {
        out[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    return out;
}

enum class Tri { Yes, No, Unknown };

Tri sat(symx::Solver& solver, const std::vector<Expr>& cons, const Expr& q) {
    symx::Verdict v = solver.check(cons, q);
    if (symx::is_sat_verdict(v)) {
        return Tri::Yes;
    }
    return symx::is_unsat_verdict(v) ? Tri::No : Tri::Unknown;
}

// Both sentinel values reachable. Unknown if undecided and not refuted.
Tri two_sentinel(symx::Solver& solver, const std::vector<Expr>& cons, const Expr& e, std::uint64_t a,
                 std::uint64_t b) {
    std::uint64_t m = symx::mask(e.width());
    Tri x = sat(solver, cons, symx::eq(e, mk_const(e.width(), a & m)));
    if (x == Tri::No) {
        return Tri::No;
    }
    Tri y = sat(solver, cons, symx::eq(e, mk_const(e.width(), b & m)));
    if (y == Tri::No) {
        return Tri::No;
    }
    return (x == Tri::Yes && y == Tri::Yes) ? Tri::Yes : Tri::Unknown;
}

} // namespace

const char* kind_name(FindingKind k) {
    switch (k) {
    case FindingKind::ControlledJump:
        return "controlled-jump";
    case FindingKind::ControlledWrite:
        return "controlled-write";
    case FindingKind::NullDeref:
        return "null-deref";
    case FindingKind::DoubleFetch:
        return "double-fetch";
    }
    return "?";
}

const char* severity_name(Severity s) { return s == Severity::High ? "high" : "low"; }
const char* confidence_name(Confidence c) { return c == Confidence::Exact ? "exact" : "possible"; }

std::optional<FindingKind> parse_kind(const std::string& s) {
    for (auto k : {FindingKind::ControlledJump, FindingKind::ControlledWrite, FindingKind::NullDeref,
                   FindingKind::DoubleFetch}) {
        if (s == kind_name(k)) {
            return k;
        }
    }
    return std::nullopt;
}

std::optional<Severity> parse_severity(const std::string& s) {
    if (s == "high") {
        return Severity::High;
    }
    if (s == "low") {
        return Severity::Low;
    }
    return std::nullopt;
}

std::optional<Confidence> parse_confidence(const std::string& s) {
    if (s == "exact") {
        return Confidence::Exact;
    }
    if (s == "possible") {
        return Confidence::Possible;
    }
    return std::nullopt;
}

std::vector<TraceEntry> to_entries(const std::vector<exec::TraceStep>& steps) {
    std::vector<TraceEntry> out;
    out.reserve(steps.size());
    for (const auto& s : steps) {
        TraceEntry e{s.pc, exec::step_kind_name(s.kind), std::nullopt, std::nullopt};
        if (s.kind == exec::StepKind::Branch) {
            e.taken = s.taken;
        }
        if (s.kind == exec::StepKind::Hook) {
            e.hook = s.hook;
        }
        out.push_back(std::move(e));
    }
    return out;
}

Sentinels Sentinels::for_layout(const loader::Layout& layout) {
    Sentinels s;
    const loader::Range& enc = layout.enclave;
    auto clear = [&](std::uint64_t a) { return !enc.overlaps(loader::Range{a, 0x1000}) && a >= 0x1000; };
    if (clear(s.first) && clear(s.second)) {
        return s;
    }
    // Place both above the enclave, or below it if that would wrap.
    std::uint64_t base = enc.end() + 0x01000000;
    if (base < enc.end() || base + 0x02000000 < base) {
        base = 0x1000;
    }
    s.first = (base & ~std::uint64_t{0xFFF}) + 0x41000;
    s.second = s.first + 0x01010000;
    return s;
}

unsigned roots_of(const Expr& e) {
    std::unordered_map<const symx::Node*, unsigned> memo;
    return roots_rec(e.get(), memo);
}

std::vector<ProvenanceEntry> provenance_of(const Expr& e) {
    std::vector<ProvenanceEntry> out;
    std::set<std::tuple<int, std::uint32_t, std::uint32_t, const symx::Node*, bool>> seen;
    std::deque<const symx::LabelSet*> work{&e.labels()};
    std::set<const symx::Node*> visited_addr;
    constexpr std::size_t kCap = 4096;
    while (!work.empty() && out.size() < kCap) {
        const symx::LabelSet* ls = work.front();
        work.pop_front();
        for (const auto& l : ls->items()) {
            auto key = std::make_tuple(static_cast<int>(l.kind), l.param, l.offset, l.addr.get(), l.steered);
            if (!seen.insert(key).second) {
                continue;
            }
            ProvenanceEntry p;
            p.label = symx::label_kind_name(l.kind);
            if (l.kind == LabelKind::EcallArg) {
                p.param = l.param;
                p.offset = l.offset;
            }
            if (l.addr) {
                p.deref_of = render(Expr(l.addr));
                if (visited_addr.insert(l.addr.get()).second) {
                    work.push_back(&l.addr->labels);
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::string label_for(const eir::Program& program, std::uint64_t pc) {
    if (const eir::Symbol* s = program.label_at(pc)) {
        return s->name;
    }
    const eir::Symbol* best = nullptr;
    for (const auto& s : program.symbols) {
        if (s.kind != eir::SymbolKind::Code || s.addr > pc) {
            continue;
        }
        if (!best || s.addr > best->addr) {
            best = &s;
        }
    }
    if (!best) {
        return hex(pc);
    }
    return best->name + "+" + hex(pc - best->addr);
}

std::optional<Witness> make_witness(const loader::ECallSpec& ecall, const State& s, const Expr& event,
                                    const Expr& pred, const loader::Range& enclave, const symx::SolverConfig& cfg) {
    std::vector<Expr> cons = s.constraints;
    for (const auto& f : s.memory.fetch_log()) {
        if (!f.addr.is_const()) {
            cons.push_back(symx::bnot(mem::range_intersects(f.addr, f.width, enclave)));
        }
    }
    symx::Verdict v = symx::is_sat(cons, pred, cfg);
    auto* sat = std::get_if<symx::Sat>(&v);
    if (!sat) {
        return std::nullopt;
    }
    const symx::Model& m = sat->model;
    auto ev = [&](const Expr& e) { return symx::eval_total(m, e); };
    Witness w;
    if (s.args) {
        for (const auto& slot : s.args->slots) {
            const auto& p = ecall.params.at(slot.index);
            if (p.kind == loader::ParamKind::Value) {
                w.args[slot.index] = le_bytes(ev(slot.roots.at(0)), p.width / 8);
            } else if (p.kind == loader::ParamKind::UserCheck) {
                w.args[slot.index] = le_bytes(ev(slot.roots.at(0)), 8);
            } else if (p.kind != loader::ParamKind::PtrOut) {
                std::vector<std::uint8_t> bytes;
                bytes.reserve(slot.roots.size());
                for (const auto& b : slot.roots) {
                    bytes.push_back(static_cast<std::uint8_t>(ev(b)));
                }
                w.args[slot.index] = std::move(bytes);
            }
        }
    }
    for (const auto& f : s.memory.fetch_log()) {
        HostRead r{f.pc, ev(f.addr), le_bytes(ev(f.value), f.width)};
        w.host_memory.emplace(r.addr, r.bytes);
        w.host_reads.push_back(std::move(r));
    }
    for (const auto& [addr, sym] : s.memory.havoc()) {
        w.globals[addr] = static_cast<std::uint8_t>(ev(sym));
    }
    for (const auto& o : s.ocalls) {
        OcallValue ov{o.pc, ev(o.ret), {}};
        for (const auto& b : o.out_bytes) {
            ov.out.push_back(static_cast<std::uint8_t>(ev(b)));
        }
        w.ocalls.push_back(std::move(ov));
    }
    w.event_value = ev(event);
    return w;
}

Detectors::Detectors(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall, Sentinels sentinels)
    : pkg_(pkg), ecall_(ecall), sentinels_(sentinels) {}

Finding Detectors::base_finding(const State& s, FindingKind kind, const Expr& controlled) const {
    Finding f;
    f.kind = kind;
    f.ecall = ecall_.index;
    f.ecall_name = ecall_.name;
    f.pc = s.pc;
    f.label = label_for(pkg_.program, s.pc);
    f.roots = roots_of(controlled);
    f.controlled = render(controlled, 1024);
    f.provenance = provenance_of(controlled);
    for (const auto& c : s.constraints) {
        f.constraints.push_back(render(c, 512));
    }
    f.trace = to_entries(s.trace.to_vector());
    return f;
}

void Detectors::attach_witness(Finding& f, const State& s, const Expr& event, const Expr& pred,
                               symx::Solver& solver) const {
    f.witness = make_witness(ecall_, s, event, pred, pkg_.layout.enclave, solver.config());
    if (!f.witness) {
        f.confidence = Confidence::Possible;
    }
}

bool Detectors::seen(const Key& k) {
    auto it = index_.find(k);
    if (it == index_.end()) {
        return false;
    }
    Finding& f = findings_[it->second];
    if (f.confidence != Confidence::Exact) {
        return false;
    }
    ++f.occurrences;
    return true;
}

void Detectors::record(const Key& k, Finding f) {
    auto it = index_.find(k);
    if (it != index_.end()) {
        // Upgrade a possible finding in place, keeping its id.
        Finding& old = findings_[it->second];
        f.id = old.id;
        f.occurrences = old.occurrences + 1;
        old = std::move(f);
        return;
    }
    f.id = std::to_string(ecall_.index) + "." + std::to_string(findings_.size() + 1);
    index_.emplace(k, findings_.size());
    findings_.push_back(std::move(f));
}

std::optional<Finding> Detectors::check_jump(const State& s, const Expr& target, symx::Solver& solver) {
    Tri t = two_sentinel(solver, s.constraints, target, sentinels_.first, sentinels_.second);
    if (t == Tri::No) {
        return std::nullopt;
    }
    Finding f = base_finding(s, FindingKind::ControlledJump, target);
    f.severity = (f.roots & (kRootArg | kRootHost)) ? Severity::High : Severity::Low;
    f.confidence = t == Tri::Yes ? Confidence::Exact : Confidence::Possible;
    attach_witness(f, s, target, symx::eq(target, c64(sentinels_.first)), solver);
    return f;
}

std::optional<Finding> Detectors::check_write(const State& s, const Expr& addr, const Expr& value, unsigned width,
                                              symx::Solver& solver) {
    unsigned roots = roots_of(addr);
    if ((roots & (kRootArg | kRootHost | kRootGlobal)) == 0) {
        return std::nullopt;
    }
    Tri t = two_sentinel(solver, s.constraints, addr, sentinels_.first, sentinels_.second);
    if (t == Tri::No) {
        return std::nullopt;
    }
    const loader::Range& enc = pkg_.layout.enclave;
    Expr in_enclave = symx::ult(symx::sub(addr, c64(enc.base)), c64(enc.size));
    Tri reach = sat(solver, s.constraints, in_enclave);
    Tri vc = two_sentinel(solver, s.constraints, value, 0x4141414141414141ULL, 0x4242424242424242ULL);
    Finding f = base_finding(s, FindingKind::ControlledWrite, addr);
    f.reaches_enclave = reach != Tri::No;
    f.value_controlled = vc != Tri::No;
    bool attacker = (roots & (kRootArg | kRootHost)) != 0;
    f.severity = attacker && *f.reaches_enclave ? Severity::High : Severity::Low;
    f.confidence = (t == Tri::Yes && reach != Tri::Unknown && vc != Tri::Unknown) ? Confidence::Exact
                                                                                  : Confidence::Possible;
    (void)width;
    attach_witness(f, s, addr, symx::eq(addr, c64(sentinels_.first)), solver);
    return f;
}

std::optional<Finding> Detectors::check_null(const State& s, const Expr& addr, unsigned width, symx::Solver& solver) {
    Expr pred = symx::ule(addr, c64(loader::kNullPageEnd - width));
    if (pred.is_false()) {
        return std::nullopt;
    }
    if (!pred.is_true() && !std::holds_alternative<symx::Proved>(solver.must(s.constraints, pred))) {
        return std::nullopt;
    }
    Finding f = base_finding(s, FindingKind::NullDeref, addr);
    f.severity = f.roots == kRootGlobal ? Severity::Low : Severity::High;
    attach_witness(f, s, addr, pred, solver);
    return f;
}

std::vector<Finding> Detectors::check_double_fetch(const State& s, symx::Solver& solver) {
    std::vector<Finding> out;
    const auto& log = s.memory.fetch_log();
    std::set<std::pair<std::uint64_t, std::uint64_t>> pairs;
    for (std::size_t j = 0; j < log.size(); ++j) {
        for (std::size_t i = 0; i < j; ++i) {
            if (log[i].pc == log[j].pc || log[i].width != log[j].width ||
                !symx::structurally_equal(log[i].addr.get(), log[j].addr.get())) {
                continue;
            }
            if (!pairs.insert({log[i].pc, log[j].pc}).second) {
                continue;
            }
            Finding f = base_finding(s, FindingKind::DoubleFetch, log[j].addr);
            f.pc = log[j].pc;
            f.label = label_for(pkg_.program, f.pc);
            f.related_pc = log[i].pc;
            f.severity = Severity::Low;
            attach_witness(f, s, log[j].addr, symx::mk_true(), solver);
            out.push_back(std::move(f));
        }
    }
    return out;
}

bool Detectors::on_jump(const State& s, const Expr& target, symx::Solver& solver) {
    Tri t = two_sentinel(solver, s.constraints, target, sentinels_.first, sentinels_.second);
    if (t == Tri::No) {
        return false;
    }
    Key k{FindingKind::ControlledJump, s.pc, roots_of(target), 0};
    if (!seen(k)) {
        if (auto f = check_jump(s, target, solver)) {
            record(k, std::move(*f));
        }
    }
    return true;
}

bool Detectors::on_access(const State& s, const Expr& addr, unsigned width, bool, symx::Solver& solver) {
    Expr pred = symx::ule(addr, c64(loader::kNullPageEnd - width));
    if (pred.is_false()) {
        return false;
    }
    if (!pred.is_true() && !std::holds_alternative<symx::Proved>(solver.must(s.constraints, pred))) {
        return false;
    }
    Key k{FindingKind::NullDeref, s.pc, roots_of(addr), 0};
    if (!seen(k)) {
        if (auto f = check_null(s, addr, width, solver)) {
            record(k, std::move(*f));
        }
    }
    return true;
}

void Detectors::on_store(const State& s, const Expr& addr, const Expr& value, unsigned width,
                         symx::Solver& solver) {
    if (addr.is_const()) {
        return;
    }
    unsigned roots = roots_of(addr);
    if ((roots & (kRootArg | kRootHost | kRootGlobal)) == 0) {
        return;
    }
    Key k{FindingKind::ControlledWrite, s.pc, roots, 0};
    if (seen(k)) {
        return;
    }
    if (auto f = check_write(s, addr, value, width, solver)) {
        record(k, std::move(*f));
    }
}

void Detectors::on_path_end(const State& s, const exec::Termination&, symx::Solver& solver) {
    const auto& log = s.memory.fetch_log();
    if (log.size() < 2) {
        return;
    }
    // Cheap pre-filter before building findings.
    bool any = false;
    for (std::size_t j = 0; j < log.size() && !any; ++j) {
        for (std::size_t i = 0; i < j && !any; ++i) {
            any = log[i].pc != log[j].pc && symx::structurally_equal(log[i].addr.get(), log[j].addr.get());
        }
    }
    if (!any) {
        return;
    }
    for (auto& f : check_double_fetch(s, solver)) {
        Key k{FindingKind::DoubleFetch, f.pc, f.roots, *f.related_pc};
        if (!seen(k)) {
            record(k, std::move(f));
        }
    }
}

} // namespace esx::detect
