#include "esx/exec/explorer.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

namespace esx::exec {

using symx::mk_const;

namespace {

Expr c64(std::uint64_t v) { return mk_const(64, v); }

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

} // namespace

const char* step_kind_name(StepKind k) {
    switch (k) {
    case StepKind::Exec:
        return "exec";
    case StepKind::Branch:
        return "branch";
    case StepKind::Hook:
        return "hook";
    case StepKind::Concretized:
        return "concretized";
    }
    return "?";
}

const char* end_kind_name(EndKind k) {
    switch (k) {
    case EndKind::Exit:
        return "exit";
    case EndKind::Halt:
        return "halt";
    case EndKind::Finding:
        return "finding";
    case EndKind::Truncated:
        return "truncated";
    case EndKind::Fault:
        return "fault";
    }
    return "?";
}

void validate_limits(const Limits& l) {
    if (l.max_steps == 0 || l.max_states == 0 || l.max_fork_depth == 0 || l.loop_bound == 0 ||
        l.solver_budget == 0 || l.timeout.count() <= 0 || l.max_jump_targets == 0) {
        throw std::invalid_argument("limits must be positive");
    }
}

Trace::Node::~Node() {
    // Unlink iteratively; long traces would otherwise recurse once per step.
    std::shared_ptr<const Node> p = std::move(prev);
    while (p && p.use_count() == 1) {
        std::shared_ptr<const Node> next = std::move(p->prev);
        p = std::move(next);
    }
}

void Trace::push(TraceStep s) {
    auto n = std::make_shared<Node>();
    n->step = std::move(s);
    n->prev = head_;
    head_ = std::move(n);
    ++size_;
}

void Trace::mark_last(StepKind k) {
    if (!head_) {
        return;
    }
    replace_last([&] {
        TraceStep s = head_->step;
        s.kind = k;
        return s;
    }());
}

void Trace::replace_last(TraceStep s) {
    if (!head_) {
        return;
    }
    auto n = std::make_shared<Node>();
    n->step = std::move(s);
    n->prev = head_->prev;
    head_ = std::move(n);
}

std::vector<TraceStep> Trace::to_vector() const {
    std::vector<TraceStep> out;
    out.reserve(size_);
    for (const Node* n = head_.get(); n; n = n->prev.get()) {
        out.push_back(n->step);
    }
    std::reverse(out.begin(), out.end());
    return out;
}

void HookRegistry::bind(const eir::Program& program, const std::string& symbol, std::string name, HookFn fn) {
    const eir::Symbol* s = program.find(symbol);
    if (!s || s->kind == eir::SymbolKind::Data) {
        throw std::invalid_argument("cannot hook '" + symbol + "': not a code or extern symbol");
    }
    if (hooks_.count(s->addr)) {
        throw std::invalid_argument("duplicate hook binding for '" + symbol + "'");
    }
    hooks_.emplace(s->addr, Entry{std::move(name), std::move(fn)});
}

const HookRegistry::Entry* HookRegistry::find(std::uint64_t addr) const {
    auto it = hooks_.find(addr);
    return it == hooks_.end() ? nullptr : &it->second;
}

Explorer::Explorer(const loader::EnclavePackage& pkg, const HookRegistry& hooks, const Limits& limits,
                   EventSink& sink, Observer* observer, std::uint64_t seed)
    : pkg_(pkg), hooks_(hooks), limits_(limits), sink_(sink), observer_(observer),
      solver_(symx::SolverConfig{limits.solver_budget, seed}) {
    validate_limits(limits_);
}

Stats Explorer::run(State initial) {
    auto start = std::chrono::steady_clock::now();
    deadline_ = start + limits_.timeout;
    stats_ = Stats{};
    timed_out_ = false;
    initial.id = next_id_++;
    stats_.states_created = 1;

    std::deque<State> work;
    work.push_back(std::move(initial));
    std::vector<State> out;
    std::uint64_t last_check = 0;
    while (!work.empty()) {
        State s = std::move(work.front());
        work.pop_front();
        out.clear();
        advance(std::move(s), out);
        for (auto& o : out) {
            work.push_back(std::move(o));
        }
        if (stats_.steps - last_check >= 256 || out.size() > 1) {
            last_check = stats_.steps;
            if (std::chrono::steady_clock::now() > deadline_) {
                timed_out_ = true;
            }
        }
        if (timed_out_) {
            while (!work.empty()) {
                State t = std::move(work.front());
                work.pop_front();
                terminate(std::move(t), {EndKind::Truncated, "timeout"});
            }
        }
    }
    stats_.solver_unknowns = solver_.unknowns();
    stats_.elapsed_ms = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count());
    return stats_;
}

void Explorer::advance(State&& s, std::vector<State>& out) {
    State cur = std::move(s);
    for (std::uint64_t n = 0;; ++n) {
        if ((n & 1023) == 1023 && std::chrono::steady_clock::now() > deadline_) {
            timed_out_ = true;
        }
        if (timed_out_) {
            terminate(std::move(cur), {EndKind::Truncated, "timeout"});
            return;
        }
        if (cur.steps >= limits_.max_steps) {
            terminate(std::move(cur), {EndKind::Truncated, "max-steps"});
            return;
        }
        std::vector<State> next;
        try {
            next = step(std::move(cur));
        } catch (const PathFault& e) {
            // step() only throws before it gives up ownership of the state.
            terminate(std::move(cur), {EndKind::Fault, e.what()});
            return;
        }
        if (next.size() != 1) {
            for (auto& n2 : next) {
                out.push_back(std::move(n2));
            }
            return;
        }
        cur = std::move(next.front());
    }
}

std::vector<State> Explorer::step(State&& s) {
    const eir::Program& prog = pkg_.program;
    if (!prog.is_code(s.pc)) {
        throw PathFault("pc outside code at " + hex(s.pc));
    }
    const eir::Instr& ins = prog.at(s.pc);
    std::uint64_t pc = s.pc;
    s.trace.push(TraceStep{pc, StepKind::Exec, false, {}});
    ++s.steps;
    ++stats_.steps;
    s.concretized_this_step = false;

    auto done = [&](State&& st) {
        std::vector<State> v;
        if (st.concretized_this_step) {
            st.trace.mark_last(StepKind::Concretized);
        }
        v.push_back(std::move(st));
        return v;
    };
    auto& r = s.regs;
    switch (ins.opcode) {
    case eir::Opcode::Const:
        r[ins.rd] = c64(ins.imm);
        s.pc = pc + 1;
        return done(std::move(s));
    case eir::Opcode::Mov:
        r[ins.rd] = r[ins.rs];
        s.pc = pc + 1;
        return done(std::move(s));
    case eir::Opcode::Unary:
        r[ins.rd] = symx::apply(ins.op, {r[ins.rs]});
        s.pc = pc + 1;
        return done(std::move(s));
    case eir::Opcode::Bin:
        r[ins.rd] = symx::apply(ins.op, {r[ins.rs], r[ins.rt]});
        s.pc = pc + 1;
        return done(std::move(s));
    case eir::Opcode::Cmp:
        r[ins.rd] = symx::mk_zext(symx::apply(ins.op, {r[ins.rs], r[ins.rt]}), 64);
        s.pc = pc + 1;
        return done(std::move(s));
    case eir::Opcode::Load: {
        Expr addr = symx::add(r[ins.rs], c64(static_cast<std::uint64_t>(ins.off)));
        Expr v = load(s, addr, ins.width);
        s.regs[ins.rd] = symx::mk_zext(v, 64);
        s.pc = pc + 1;
        return done(std::move(s));
    }
    case eir::Opcode::Store: {
        Expr addr = symx::add(r[ins.rs], c64(static_cast<std::uint64_t>(ins.off)));
        Expr v = symx::mk_extract(r[ins.rt], 8u * ins.width - 1, 0);
        store(s, addr, v, ins.width);
        s.pc = pc + 1;
        return done(std::move(s));
    }
    case eir::Opcode::Jmp:
        s.pc = ins.imm;
        return done(std::move(s));
    case eir::Opcode::Br: {
        unsigned visits = ++s.loop_visits[pc];
        if (visits > limits_.loop_bound) {
            terminate(std::move(s), {EndKind::Truncated, "loop-bound"});
            return {};
        }
        Expr cond = symx::ne(r[ins.rs], c64(0));
        if (cond.is_const()) {
            bool t = cond.is_true();
            s.pc = t ? ins.imm : ins.imm2;
            s.trace.replace_last(TraceStep{pc, StepKind::Branch, t, {}});
            return done(std::move(s));
        }
        ForkResult f = fork(std::move(s), cond);
        std::vector<State> out;
        if (f.taken) {
            f.taken->pc = ins.imm;
            f.taken->trace.replace_last(TraceStep{pc, StepKind::Branch, true, {}});
            out.push_back(std::move(*f.taken));
        }
        if (f.other) {
            f.other->pc = ins.imm2;
            f.other->trace.replace_last(TraceStep{pc, StepKind::Branch, false, {}});
            out.push_back(std::move(*f.other));
        }
        return out;
    }
    case eir::Opcode::Call:
    case eir::Opcode::Intrinsic:
        return transfer_const(std::move(s), ins.imm, true, pc + 1);
    case eir::Opcode::Jmpr:
        return transfer(std::move(s), r[ins.rs], false, 0);
    case eir::Opcode::Callr:
        return transfer(std::move(s), r[ins.rs], true, pc + 1);
    case eir::Opcode::Ret: {
        Expr sp = r[eir::kStackReg];
        mem::ReadResult rr = mem::read(s.memory, sp, 8, s.constraints, pc, solver_);
        if (rr.concretized) {
            s.concretized_this_step = true;
        }
        s.regs[eir::kStackReg] = symx::add(sp, c64(8));
        return transfer(std::move(s), rr.value, false, 0);
    }
    case eir::Opcode::Halt:
        terminate(std::move(s), {EndKind::Halt, {}});
        return {};
    }
    throw PathFault("bad opcode");
}

std::vector<State> Explorer::transfer(State&& s, Expr target, bool is_call, std::uint64_t ret_pc) {
    if (target.is_const()) {
        return transfer_const(std::move(s), target.value(), is_call, ret_pc);
    }
    if (sink_.on_jump(s, target, solver_)) {
        terminate(std::move(s), {EndKind::Finding, "controlled-jump"});
        return {};
    }
    // Bounded target set: one binary split per feasible value.
    std::vector<State> out;
    State cur = std::move(s);
    for (unsigned i = 0; i < limits_.max_jump_targets; ++i) {
        std::optional<std::uint64_t> v = solver_.value_of(cur.constraints, target);
        if (!v) {
            terminate(std::move(cur), {EndKind::Truncated, "solver-unknown"});
            return out;
        }
        ForkResult f = fork(std::move(cur), symx::eq(target, c64(*v)));
        if (f.taken) {
            try {
                for (auto& n : transfer_const(std::move(*f.taken), *v, is_call, ret_pc)) {
                    out.push_back(std::move(n));
                }
            } catch (const PathFault& e) {
                terminate(std::move(*f.taken), {EndKind::Fault, e.what()});
            }
        }
        if (!f.other) {
            return out;
        }
        cur = std::move(*f.other);
    }
    terminate(std::move(cur), {EndKind::Truncated, "jump-targets"});
    return out;
}

std::vector<State> Explorer::transfer_const(State&& s, std::uint64_t target, bool is_call, std::uint64_t ret_pc) {
    if (const HookRegistry::Entry* h = hooks_.find(target)) {
        if (!is_call) {
            throw PathFault("jump into hooked symbol '" + h->name + "' without a call");
        }
        return run_hook(std::move(s), *h, ret_pc);
    }
    if (pkg_.program.is_code(target)) {
        if (is_call) {
            push_return(s, ret_pc);
        }
        s.pc = target;
        std::vector<State> v;
        if (s.concretized_this_step) {
            s.trace.mark_last(StepKind::Concretized);
        }
        v.push_back(std::move(s));
        return v;
    }
    if (!is_call && target == kExitSentinel) {
        terminate(std::move(s), {EndKind::Exit, {}});
        return {};
    }
    if (const eir::Symbol* ext = pkg_.program.extern_at(target)) {
        throw PathFault("call to unhooked extern '" + ext->name + "'");
    }
    throw PathFault("host-code execution attempt at " + hex(target));
}

std::vector<State> Explorer::run_hook(State&& s, const HookRegistry::Entry& hook, std::uint64_t ret_pc) {
    s.trace.replace_last(TraceStep{s.pc, StepKind::Hook, false, hook.name});
    std::vector<State> succ;
    try {
        succ = hook.fn(std::move(s), *this);
    } catch (const mem::HeapExhausted& e) {
        throw PathFault(e.what());
    }
    for (auto& n : succ) {
        n.pc = ret_pc;
    }
    return succ;
}

void Explorer::push_return(State& s, std::uint64_t ret_pc) {
    Expr sp = symx::sub(s.regs[eir::kStackReg], c64(8));
    s.regs[eir::kStackReg] = sp;
    if (sp.is_const() && s.memory.enclave().contains(sp.value())) {
        s.memory.store_concrete(sp.value(), c64(ret_pc), 8);
    } else {
        store(s, sp, c64(ret_pc), 8);
    }
}

Expr Explorer::load(State& s, const Expr& addr, unsigned width) {
    sink_.on_access(s, addr, width, false, solver_);
    mem::ReadResult r = mem::read(s.memory, addr, width, s.constraints, s.pc, solver_);
    if (r.concretized) {
        s.concretized_this_step = true;
    }
    return r.value;
}

void Explorer::store(State& s, const Expr& addr, const Expr& value, unsigned width) {
    if (!sink_.on_access(s, addr, width, true, solver_)) {
        sink_.on_store(s, addr, value, width, solver_);
    }
    mem::WriteResult w = mem::write(s.memory, addr, value, width, s.constraints, s.pc, solver_);
    if (w.concretized) {
        s.concretized_this_step = true;
    }
}

ForkResult Explorer::fork(State&& s, const Expr& cond) {
    ForkResult out;
    if (cond.is_true()) {
        out.taken.emplace(std::move(s));
        return out;
    }
    if (cond.is_false()) {
        out.other.emplace(std::move(s));
        return out;
    }
    Expr neg = symx::bnot(cond);
    bool t = !symx::is_unsat_verdict(solver_.check(s.constraints, cond));
    bool f = !symx::is_unsat_verdict(solver_.check(s.constraints, neg));
    if (t && f) {
        if (s.fork_depth >= limits_.max_fork_depth) {
            terminate(std::move(s), {EndKind::Truncated, "fork-depth"});
            return out;
        }
        if (stats_.states_created >= limits_.max_states) {
            terminate(std::move(s), {EndKind::Truncated, "max-states"});
            return out;
        }
        std::vector<Expr> parent = s.constraints;
        State other = s;
        other.id = next_id_++;
        ++stats_.states_created;
        ++s.fork_depth;
        ++other.fork_depth;
        s.constraints.push_back(cond);
        other.constraints.push_back(neg);
        if (observer_) {
            observer_->on_fork(parent, cond, s, other);
        }
        out.taken.emplace(std::move(s));
        out.other.emplace(std::move(other));
        return out;
    }
    if (t) {
        out.taken.emplace(std::move(s));
    } else if (f) {
        out.other.emplace(std::move(s));
    } else {
        terminate(std::move(s), {EndKind::Fault, "infeasible path"});
    }
    return out;
}

std::optional<std::uint64_t> Explorer::concretize_min(State& s, const Expr& v, std::uint64_t lo, std::uint64_t hi) {
    if (v.is_const()) {
        if (v.value() < lo || v.value() > hi) {
            return std::nullopt;
        }
        return v.value();
    }
    std::optional<std::uint64_t> m = solver_.min(s.constraints, v, lo, hi);
    if (!m) {
        return std::nullopt;
    }
    Expr pin = symx::eq(v, mk_const(v.width(), *m));
    if (!symx::is_unsat_verdict(solver_.check(s.constraints, symx::bnot(pin)))) {
        s.constraints.push_back(pin);
        s.concretized_this_step = true;
    }
    return m;
}

void Explorer::terminate(State&& s, Termination t) {
    sink_.on_path_end(s, t, solver_);
    if (observer_) {
        observer_->on_terminate(s, t);
    }
    if (t.kind == EndKind::Truncated) {
        ++stats_.truncations;
    } else {
        ++stats_.states_completed;
    }
}

} // namespace esx::exec
