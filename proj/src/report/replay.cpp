#include <map>
#include <sstream>

#include "esx/exec/state.hpp"
#include "esx/report/report.hpp"
#include "esx/sgx/model.hpp"
#include "esx/symx/eval.hpp"

namespace esx::report {

using detect::Finding;
using detect::FindingKind;

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::uint64_t from_le(const std::vector<std::uint8_t>& b, std::size_t n) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n && i < b.size() && i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

struct Mismatch {
    std::string reason;
};

struct Access {
    std::uint64_t addr;
    bool host;
};

// Concrete machine mirroring the symbolic model: enclave bytes are store,
// then image, then the witness's global bytes; everything else is host
// memory served from the witness in fetch order.
class Machine {
  public:
    Machine(const loader::EnclavePackage& pkg, const detect::Witness& w) : pkg_(pkg), w_(w) {
        heap_ptr_ = pkg.layout.heap.base;
    }

    std::uint64_t regs[eir::kNumRegs] = {};
    std::uint64_t pc = 0;
    std::vector<Access> accesses;                        // this step
    bool event_step = false;                             // the finding's own instruction
    std::vector<std::pair<std::uint64_t, std::uint64_t>> host_fetches; // (pc, addr), whole run

    const loader::Range& enclave() const { return pkg_.layout.enclave; }

    bool within(std::uint64_t a, std::uint64_t n) const {
        const auto& e = enclave();
        return n != 0 && a >= e.base && a <= e.end() && n <= e.end() - a;
    }

    std::uint8_t enclave_byte(std::uint64_t a) const {
        if (auto it = store_.find(a); it != store_.end()) {
            return it->second;
        }
        for (const auto& img : pkg_.program.data) {
            if (a >= img.addr && a - img.addr < img.bytes.size()) {
                return img.bytes[a - img.addr];
            }
        }
        if (auto it = w_.globals.find(a); it != w_.globals.end()) {
            return it->second;
        }
        return 0;
    }

    std::uint64_t load(std::uint64_t a, unsigned n) {
        accesses.push_back({a, !within(a, n)});
        if (within(a, n)) {
            std::uint64_t v = 0;
            for (unsigned i = 0; i < n; ++i) {
                v |= static_cast<std::uint64_t>(enclave_byte(a + i)) << (8 * i);
            }
            return v;
        }
        if (host_idx_ >= w_.host_reads.size() && event_step) {
            // The witness is taken before the event access itself.
            return 0;
        }
        if (host_idx_ >= w_.host_reads.size()) {
            throw Mismatch{"host read at " + hex(a) + " beyond the witness"};
        }
        const auto& r = w_.host_reads[host_idx_++];
        if (r.addr != a || r.pc != pc || r.bytes.size() != n) {
            throw Mismatch{"host read at " + hex(a) + " does not match witness read at " + hex(r.addr)};
        }
        host_fetches.emplace_back(pc, a);
        return from_le(r.bytes, n);
    }

    void store(std::uint64_t a, std::uint64_t v, unsigned n) {
        accesses.push_back({a, !within(a, n)});
        for (unsigned i = 0; i < n; ++i) {
            if (enclave().contains(a + i)) {
                store_[a + i] = static_cast<std::uint8_t>(v >> (8 * i));
            }
        }
    }

    void poke(std::uint64_t a, std::uint8_t b) { store_[a] = b; }

    std::uint64_t alloc(std::uint64_t n) {
        const auto& heap = pkg_.layout.heap;
        std::uint64_t base = (heap_ptr_ + 15) & ~std::uint64_t{15};
        if (n == 0 || base > heap.end() || n > heap.end() - base) {
            throw Mismatch{"heap exhausted"};
        }
        heap_ptr_ = base + n;
        return base;
    }

    const detect::OcallValue& next_ocall() {
        if (ocall_idx_ >= w_.ocalls.size()) {
            throw Mismatch{"ocall beyond the witness"};
        }
        return w_.ocalls[ocall_idx_++];
    }

  private:
    const loader::EnclavePackage& pkg_;
    const detect::Witness& w_;
    std::map<std::uint64_t, std::uint8_t> store_;
    std::uint64_t heap_ptr_ = 0;
    std::size_t host_idx_ = 0;
    std::size_t ocall_idx_ = 0;
};

void marshal(Machine& m, const loader::ECallSpec& ecall, const detect::Witness& w) {
    const auto& params = ecall.params;
    std::vector<std::uint64_t> slot(params.size(), 0);
    auto arg = [&](unsigned i) -> const std::vector<std::uint8_t>& {
        static const std::vector<std::uint8_t> empty;
        auto it = w.args.find(i);
        return it == w.args.end() ? empty : it->second;
    };
    for (unsigned i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (p.kind == loader::ParamKind::Value) {
            slot[i] = from_le(arg(i), p.width / 8);
        } else if (p.kind == loader::ParamKind::UserCheck) {
            slot[i] = from_le(arg(i), 8);
        }
    }
    for (unsigned i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (!p.is_buffer()) {
            continue;
        }
        std::uint64_t size = p.size ? *p.size : slot[*ecall.param_index(p.size_param)];
        std::uint64_t base = m.alloc(size);
        const auto& bytes = arg(i);
        for (std::uint64_t k = 0; k < size; ++k) {
            std::uint8_t b = (p.kind != loader::ParamKind::PtrOut && k < bytes.size()) ? bytes[k] : 0;
            m.poke(base + k, b);
        }
        slot[i] = base;
    }
    std::uint64_t sbase = m.alloc(std::max<std::uint64_t>(8 * params.size(), 8));
    for (unsigned i = 0; i < params.size(); ++i) {
        for (unsigned k = 0; k < 8; ++k) {
            m.poke(sbase + 8 * i + k, static_cast<std::uint8_t>(slot[i] >> (8 * k)));
        }
    }
    m.regs[0] = sbase;
}

std::uint64_t bin(symx::Op op, std::uint64_t a, std::uint64_t b, unsigned width) {
    std::uint64_t vals[2] = {a, b};
    unsigned widths[2] = {64, 64};
    return symx::eval_op(op, width, 0, vals, widths);
}

enum class Flow { Next, Exit, Halt };

struct Replayer {
    const loader::EnclavePackage& pkg;
    const Finding& f;
    Machine m;
    std::optional<std::uint64_t> jump_target; // this step
    bool stop_at_jump = false;                 // the finding's own jump: record, do not follow

    void push(std::uint64_t v) {
        m.regs[eir::kStackReg] -= 8;
        m.store(m.regs[eir::kStackReg], v, 8);
    }

    void hook(const std::string& builtin, const std::optional<loader::OutBuffer>& ob) {
        auto& r = m.regs;
        const auto& enc = pkg.layout.enclave;
        if (builtin == "sgx_is_within_enclave") {
            r[0] = m.within(r[0], r[1]) ? 1 : 0;
        } else if (builtin == "sgx_is_outside_enclave") {
            std::uint64_t a = r[0], n = r[1];
            bool out = n == 0 || (n - 1 <= ~a && (a + n - 1 < enc.base || a >= enc.end()));
            r[0] = out ? 1 : 0;
        } else if (builtin == "memcpy") {
            if (r[2] > sgx::kMaxHookSize) {
                throw Mismatch{"memcpy size above bound"};
            }
            for (std::uint64_t k = 0; k < r[2]; ++k) {
                m.store(r[0] + k, m.load(r[1] + k, 1), 1);
            }
        } else if (builtin == "memset") {
            if (r[2] > sgx::kMaxHookSize) {
                throw Mismatch{"memset size above bound"};
            }
            for (std::uint64_t k = 0; k < r[2]; ++k) {
                m.store(r[0] + k, r[1] & 0xFF, 1);
            }
        } else if (builtin == "malloc") {
            if (r[0] > sgx::kMaxHookSize) {
                throw Mismatch{"malloc size above bound"};
            }
            r[0] = m.alloc(std::max<std::uint64_t>(r[0], 1));
        } else if (builtin == "free") {
        } else if (builtin == "ocall") {
            const auto& o = m.next_ocall();
            if (o.pc != m.pc) {
                throw Mismatch{"ocall at unexpected pc"};
            }
            if (ob) {
                std::uint64_t base = r[ob->param_reg];
                std::uint64_t n = r[ob->size_reg];
                if (n != o.out.size()) {
                    throw Mismatch{"ocall out-buffer size differs"};
                }
                for (std::uint64_t k = 0; k < n; ++k) {
                    if (enc.contains(base + k)) {
                        m.poke(base + k, o.out[k]);
                    }
                }
            }
            r[0] = o.ret;
        } else {
            throw Mismatch{"unknown builtin " + builtin};
        }
    }

    const loader::HookBinding* binding_at(std::uint64_t addr) const {
        for (const auto& [sym, b] : pkg.hooks) {
            const eir::Symbol* s = pkg.program.find(sym);
            if (s && s->addr == addr) {
                return &b;
            }
        }
        return nullptr;
    }

    Flow transfer(std::uint64_t target, bool is_call) {
        jump_target = target;
        if (stop_at_jump) {
            return Flow::Exit;
        }
        if (const loader::HookBinding* b = binding_at(target)) {
            if (!is_call) {
                throw Mismatch{"jump into hooked symbol"};
            }
            hook(b->builtin, b->out_buffer);
            m.pc += 1;
            return Flow::Next;
        }
        if (pkg.program.is_code(target)) {
            if (is_call) {
                push(m.pc + 1);
            }
            m.pc = target;
            return Flow::Next;
        }
        if (!is_call && target == exec::kExitSentinel) {
            return Flow::Exit;
        }
        throw Mismatch{"control transfer to " + hex(target)};
    }

    Flow step(std::optional<bool>& taken) {
        const eir::Instr& ins = pkg.program.at(m.pc);
        auto& r = m.regs;
        std::uint64_t off = static_cast<std::uint64_t>(ins.off);
        switch (ins.opcode) {
        case eir::Opcode::Const:
            r[ins.rd] = ins.imm;
            break;
        case eir::Opcode::Mov:
            r[ins.rd] = r[ins.rs];
            break;
        case eir::Opcode::Unary: {
            std::uint64_t vals[1] = {r[ins.rs]};
            unsigned widths[1] = {64};
            r[ins.rd] = symx::eval_op(ins.op, 64, 0, vals, widths);
            break;
        }
        case eir::Opcode::Bin:
            r[ins.rd] = bin(ins.op, r[ins.rs], r[ins.rt], 64);
            break;
        case eir::Opcode::Cmp:
            r[ins.rd] = bin(ins.op, r[ins.rs], r[ins.rt], 1);
            break;
        case eir::Opcode::Load:
            r[ins.rd] = m.load(r[ins.rs] + off, ins.width);
            break;
        case eir::Opcode::Store:
            m.store(r[ins.rs] + off, r[ins.rt] & symx::mask(8u * ins.width), ins.width);
            break;
        case eir::Opcode::Jmp:
            m.pc = ins.imm;
            return Flow::Next;
        case eir::Opcode::Br:
            taken = r[ins.rs] != 0;
            m.pc = *taken ? ins.imm : ins.imm2;
            return Flow::Next;
        case eir::Opcode::Call:
        case eir::Opcode::Intrinsic:
            return transfer(ins.imm, true);
        case eir::Opcode::Jmpr:
            return transfer(r[ins.rs], false);
        case eir::Opcode::Callr:
            return transfer(r[ins.rs], true);
        case eir::Opcode::Ret: {
            std::uint64_t t = m.load(r[eir::kStackReg], 8);
            r[eir::kStackReg] += 8;
            return transfer(t, false);
        }
        case eir::Opcode::Halt:
            return Flow::Halt;
        }
        m.pc += 1;
        return Flow::Next;
    }
};

} // namespace

ReplayResult replay_witness(const loader::EnclavePackage& pkg, const Finding& f) {
    if (!f.witness) {
        throw std::invalid_argument("finding " + f.id + " has no witness");
    }
    const loader::ECallSpec* ecall = nullptr;
    for (const auto& e : pkg.ecalls) {
        if (e.index == f.ecall) {
            ecall = &e;
        }
    }
    if (!ecall) {
        throw std::invalid_argument("finding " + f.id + " names an unknown ecall");
    }
    const eir::Symbol* entry = pkg.program.find(ecall->entry);
    if (f.trace.empty() || !entry) {
        return Diverged{0, "empty trace"};
    }
    const detect::Witness& w = *f.witness;
    Replayer rp{pkg, f, Machine(pkg, w), std::nullopt, false};
    Machine& m = rp.m;
    std::size_t step = 0;
    try {
        marshal(m, *ecall, w);
        m.regs[eir::kStackReg] = pkg.layout.stack.end();
        rp.push(exec::kExitSentinel);
        m.accesses.clear();
        m.pc = entry->addr;
        for (step = 0; step < f.trace.size(); ++step) {
            const auto& t = f.trace[step];
            if (!pkg.program.is_code(m.pc) || m.pc != t.pc) {
                return Diverged{step, "pc " + hex(m.pc) + " where the trace has " + hex(t.pc)};
            }
            m.accesses.clear();
            rp.jump_target.reset();
            bool last = step + 1 == f.trace.size();
            rp.stop_at_jump = last && f.kind == FindingKind::ControlledJump;
            m.event_step = last;
            std::optional<bool> taken;
            Flow flow = rp.step(taken);
            if (t.taken && taken != t.taken) {
                return Diverged{step, "branch direction differs"};
            }
            if (flow != Flow::Next && !last) {
                return Diverged{step, "execution ended early"};
            }
            if (!last) {
                continue;
            }
            switch (f.kind) {
            case FindingKind::ControlledJump:
                if (rp.jump_target != w.event_value) {
                    return Diverged{step, "jump target differs from the witness"};
                }
                break;
            case FindingKind::ControlledWrite:
            case FindingKind::NullDeref: {
                bool hit = false;
                for (const auto& a : m.accesses) {
                    hit = hit || a.addr == w.event_value;
                }
                if (!hit) {
                    return Diverged{step, "no access at the witness address"};
                }
                break;
            }
            case FindingKind::DoubleFetch: {
                std::optional<std::uint64_t> first, second;
                for (const auto& [pc, addr] : m.host_fetches) {
                    if (pc == f.related_pc && !first) {
                        first = addr;
                    }
                    if (pc == f.pc && first && !second) {
                        second = addr;
                    }
                }
                if (!first || first != second) {
                    return Diverged{step, "the two fetches did not read the same address"};
                }
                break;
            }
            }
        }
    } catch (const Mismatch& e) {
        return Diverged{step, e.reason};
    }
    return Confirmed{};
}

} // namespace esx::report
