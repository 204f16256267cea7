#include "esx/sgx/model.hpp"

#include <algorithm>

namespace esx::sgx {

using exec::ExecContext;
using exec::State;
using symx::Expr;
using symx::Label;
using symx::LabelSet;
using symx::mk_const;

namespace {

Expr c64(std::uint64_t v) { return mk_const(64, v); }

Expr arg_sym(unsigned width, unsigned param, unsigned offset, std::string name) {
    return symx::mk_sym(width, LabelSet({Label::ecall_arg(param, offset)}), std::move(name));
}

std::uint64_t concretize_or_fault(ExecContext& ctx, State& s, const Expr& v, std::uint64_t lo, std::uint64_t hi,
                                  const char* what) {
    std::optional<std::uint64_t> n = ctx.concretize_min(s, v, lo, hi);
    if (!n) {
        throw exec::PathFault(std::string(what) + " size not concretizable");
    }
    return *n;
}

std::vector<State> single(State&& s) {
    std::vector<State> v;
    v.push_back(std::move(s));
    return v;
}

std::vector<State> range_check(State&& s, ExecContext& ctx, bool within) {
    const loader::Range& enc = ctx.package().layout.enclave;
    Expr pred = within ? is_within_pred(s.regs[0], s.regs[1], enc) : is_outside_pred(s.regs[0], s.regs[1], enc);
    exec::ForkResult f = ctx.fork(std::move(s), pred);
    std::vector<State> out;
    if (f.taken) {
        f.taken->regs[0] = c64(1);
        out.push_back(std::move(*f.taken));
    }
    if (f.other) {
        f.other->regs[0] = c64(0);
        out.push_back(std::move(*f.other));
    }
    return out;
}

std::vector<State> hook_memcpy(State&& s, ExecContext& ctx) {
    Expr dst = s.regs[0];
    Expr src = s.regs[1];
    std::uint64_t n = concretize_or_fault(ctx, s, s.regs[2], 0, kMaxHookSize, "memcpy");
    for (std::uint64_t k = 0; k < n; ++k) {
        Expr v = ctx.load(s, symx::add(src, c64(k)), 1);
        ctx.store(s, symx::add(dst, c64(k)), v, 1);
    }
    s.regs[0] = dst;
    return single(std::move(s));
}

std::vector<State> hook_memset(State&& s, ExecContext& ctx) {
    Expr dst = s.regs[0];
    Expr byte = symx::mk_extract(s.regs[1], 7, 0);
    std::uint64_t n = concretize_or_fault(ctx, s, s.regs[2], 0, kMaxHookSize, "memset");
    for (std::uint64_t k = 0; k < n; ++k) {
        ctx.store(s, symx::add(dst, c64(k)), byte, 1);
    }
    s.regs[0] = dst;
    return single(std::move(s));
}

std::vector<State> hook_malloc(State&& s, ExecContext& ctx) {
    std::uint64_t n = concretize_or_fault(ctx, s, s.regs[0], 0, kMaxHookSize, "malloc");
    std::uint64_t base = s.memory.alloc_enclave(std::max<std::uint64_t>(n, 1));
    s.regs[0] = mk_const(64, base, LabelSet({Label::enclave_alloc()}));
    return single(std::move(s));
}

std::vector<State> hook_ocall(State&& s, ExecContext& ctx, const std::optional<loader::OutBuffer>& ob) {
    exec::OcallRecord rec;
    rec.pc = s.pc;
    std::string tag = std::to_string(s.ocalls.size());
    rec.ret = symx::mk_sym(64, LabelSet({Label::host_memory(nullptr)}), "ocall" + tag + ".ret");
    if (ob) {
        Expr ptr = s.regs[ob->param_reg];
        std::uint64_t n = concretize_or_fault(ctx, s, s.regs[ob->size_reg], 0, kMaxHookSize, "ocall buffer");
        std::optional<std::uint64_t> base = ptr.is_const() ? std::optional(ptr.value())
                                                           : ctx.solver().value_of(s.constraints, ptr);
        if (!base) {
            throw exec::PathFault("ocall buffer address not concretizable");
        }
        if (!ptr.is_const()) {
            s.constraints.push_back(symx::eq(ptr, c64(*base)));
            s.concretized_this_step = true;
        }
        rec.out_addr = *base;
        for (std::uint64_t k = 0; k < n; ++k) {
            Expr a = c64(*base + k);
            Expr b = symx::mk_sym(8, LabelSet({Label::host_memory(a.ptr())}),
                                  "ocall" + tag + ".out[" + std::to_string(k) + "]");
            rec.out_bytes.push_back(b);
            if (s.memory.enclave().contains(*base + k)) {
                s.memory.set_enclave_byte(*base + k, b);
            }
        }
    }
    s.regs[0] = rec.ret;
    s.ocalls.push_back(std::move(rec));
    return single(std::move(s));
}

} // namespace

Expr is_within_pred(const Expr& addr, const Expr& size, const loader::Range& enclave) {
    return mem::range_within(addr, size, enclave);
}

Expr is_outside_pred(const Expr& addr, const Expr& size, const loader::Range& enclave) {
    return mem::range_disjoint(addr, size, enclave);
}

exec::MarshalledArgs marshal_args(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall, State& s,
                                  symx::Solver& solver) {
    (void)pkg;
    exec::MarshalledArgs out;
    const auto& params = ecall.params;
    out.slots.resize(params.size());
    std::vector<Expr> value_syms(params.size());
    for (unsigned i = 0; i < params.size(); ++i) {
        out.slots[i].index = i;
        const auto& p = params[i];
        if (p.kind == loader::ParamKind::Value) {
            value_syms[i] = arg_sym(p.width, i, 0, p.name);
            out.slots[i].roots = {value_syms[i]};
        } else if (p.kind == loader::ParamKind::UserCheck) {
            value_syms[i] = arg_sym(64, i, 0, p.name);
            out.slots[i].roots = {value_syms[i]};
        }
    }
    try {
        for (unsigned i = 0; i < params.size(); ++i) {
            const auto& p = params[i];
            if (!p.is_buffer()) {
                continue;
            }
            std::uint64_t size = 0;
            if (p.size) {
                size = *p.size;
            } else {
                auto j = ecall.param_index(p.size_param);
                if (!j || params[*j].kind != loader::ParamKind::Value) {
                    throw MarshalError("unresolved size_param '" + p.size_param + "' for '" + p.name + "'");
                }
                Expr len = value_syms[*j];
                std::uint64_t hi = std::min(p.max_size, symx::mask(len.width()));
                std::optional<std::uint64_t> m = solver.min(s.constraints, len, 1, hi);
                if (!m) {
                    throw MarshalError("cannot choose a size for '" + p.name + "'");
                }
                s.constraints.push_back(symx::eq(len, mk_const(len.width(), *m)));
                out.concretized_sizes[i] = *m;
                size = *m;
            }
            std::uint64_t base = s.memory.alloc_enclave(size);
            out.slots[i].buffer = base;
            out.slots[i].buffer_size = size;
            bool fill_args = p.kind != loader::ParamKind::PtrOut;
            for (std::uint64_t k = 0; k < size; ++k) {
                Expr b = fill_args
                             ? arg_sym(8, i, static_cast<unsigned>(k), p.name + "[" + std::to_string(k) + "]")
                             : mk_const(8, 0);
                if (fill_args) {
                    out.slots[i].roots.push_back(b);
                }
                s.memory.set_enclave_byte(base + k, b);
            }
        }
        std::uint64_t struct_size = std::max<std::uint64_t>(8 * params.size(), 8);
        out.struct_base = s.memory.alloc_enclave(struct_size);
    } catch (const mem::HeapExhausted& e) {
        throw MarshalError(std::string("heap exhausted while marshalling: ") + e.what());
    }
    for (unsigned i = 0; i < params.size(); ++i) {
        std::uint64_t slot = out.struct_base + 8 * i;
        out.slots[i].slot_addr = slot;
        Expr v = out.slots[i].buffer ? mk_const(64, *out.slots[i].buffer, LabelSet({Label::enclave_alloc()}))
                                     : symx::mk_zext(value_syms[i], 64);
        s.memory.store_concrete(slot, v, 8);
    }
    return out;
}

State init_state(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall,
                 std::shared_ptr<const mem::MemoryEnv> env, symx::Solver& solver) {
    const eir::Symbol* entry = pkg.program.find(ecall.entry);
    if (!entry || entry->kind != eir::SymbolKind::Code) {
        throw MarshalError("entry symbol not found: '" + ecall.entry + "'");
    }
    State s{mem::SymMemory(std::move(env))};
    s.regs.fill(c64(0));
    auto args = std::make_shared<exec::MarshalledArgs>(marshal_args(pkg, ecall, s, solver));
    std::uint64_t sp = pkg.layout.stack.end() - 8;
    s.memory.store_concrete(sp, c64(exec::kExitSentinel), 8);
    s.regs[eir::kStackReg] = c64(sp);
    s.regs[0] = c64(args->struct_base);
    s.args = std::move(args);
    s.pc = entry->addr;
    return s;
}

exec::HookFn builtin_hook(const std::string& id, const std::optional<loader::OutBuffer>& out_buffer) {
    if (id == "sgx_is_within_enclave") {
        return [](State&& s, ExecContext& ctx) { return range_check(std::move(s), ctx, true); };
    }
    if (id == "sgx_is_outside_enclave") {
        return [](State&& s, ExecContext& ctx) { return range_check(std::move(s), ctx, false); };
    }
    if (id == "memcpy") {
        return hook_memcpy;
    }
    if (id == "memset") {
        return hook_memset;
    }
    if (id == "malloc") {
        return hook_malloc;
    }
    if (id == "free") {
        return [](State&& s, ExecContext&) { return single(std::move(s)); };
    }
    if (id == "ocall") {
        return [out_buffer](State&& s, ExecContext& ctx) { return hook_ocall(std::move(s), ctx, out_buffer); };
    }
    throw std::invalid_argument("unknown builtin hook '" + id + "'");
}

exec::HookRegistry make_hooks(const loader::EnclavePackage& pkg) {
    exec::HookRegistry reg;
    for (const auto& [symbol, binding] : pkg.hooks) {
        reg.bind(pkg.program, symbol, symbol, builtin_hook(binding.builtin, binding.out_buffer));
    }
    return reg;
}

} // namespace esx::sgx
