#include <algorithm>
#include <set>
#include <sstream>

#include "esx/eir/program.hpp"

namespace esx::eir {

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

bool valid_width(unsigned w) { return w == 1 || w == 2 || w == 4 || w == 8; }

} // namespace

std::vector<Diagnostic> validate(const Program& p) {
    std::vector<Diagnostic> out;
    auto diag = [&](std::string msg, std::optional<std::uint64_t> addr = std::nullopt) {
        out.push_back(Diagnostic{std::move(msg), addr});
    };

    if (p.code_end() < p.base) {
        diag("code wraps around the address space");
        return out;
    }

    std::set<std::string> names;
    std::set<std::uint64_t> extern_addrs;
    for (std::size_t i = 0; i < p.symbols.size(); ++i) {
        const Symbol& s = p.symbols[i];
        if (!names.insert(s.name).second) {
            diag("duplicate symbol '" + s.name + "'");
        }
        if (i > 0 && p.symbols[i - 1].name > s.name) {
            diag("symbol table is not sorted at '" + s.name + "'");
        }
        switch (s.kind) {
        case SymbolKind::Code:
            if (!p.is_code(s.addr)) {
                diag("label '" + s.name + "' is outside the code", s.addr);
            }
            break;
        case SymbolKind::Extern:
            if (s.addr < p.code_end()) {
                diag("extern '" + s.name + "' overlaps code", s.addr);
            }
            if (!extern_addrs.insert(s.addr).second) {
                diag("extern '" + s.name + "' shares an address", s.addr);
            }
            break;
        case SymbolKind::Data:
            if (s.size == 0) {
                diag("global '" + s.name + "' has zero size", s.addr);
            }
            break;
        }
    }

    auto is_target = [&](std::uint64_t a, bool allow_extern) {
        return p.is_code(a) || (allow_extern && extern_addrs.count(a) != 0);
    };
    auto check_name = [&](const std::string& sym, std::uint64_t addr, std::uint64_t at) {
        if (sym.empty()) {
            return;
        }
        const Symbol* s = p.find(sym);
        if (!s) {
            diag("undefined label '" + sym + "'", at);
        } else if (s->addr != addr) {
            diag("label '" + sym + "' does not match its resolved address", at);
        }
    };

    for (std::size_t i = 0; i < p.code.size(); ++i) {
        const Instr& ins = p.code[i];
        const std::uint64_t at = p.base + i;
        if (ins.rd >= kNumRegs || ins.rs >= kNumRegs || ins.rt >= kNumRegs) {
            diag("register index out of range", at);
        }
        switch (ins.opcode) {
        case Opcode::Load:
        case Opcode::Store:
            if (!valid_width(ins.width)) {
                diag("illegal access width " + std::to_string(ins.width), at);
            }
            if (ins.off < INT32_MIN || ins.off > INT32_MAX) {
                diag("memory offset out of signed 32-bit range", at);
            }
            break;
        case Opcode::Unary:
            if (ins.op != symx::Op::Not && ins.op != symx::Op::Neg) {
                diag("illegal unary operator", at);
            }
            break;
        case Opcode::Bin:
            if (ins.op < symx::Op::Add || ins.op > symx::Op::AShr) {
                diag("illegal binary operator", at);
            }
            break;
        case Opcode::Cmp:
            if (ins.op < symx::Op::Eq || ins.op > symx::Op::Sle) {
                diag("illegal comparison operator", at);
            }
            break;
        case Opcode::Const:
            check_name(ins.sym, ins.imm, at);
            break;
        case Opcode::Jmp:
            if (!is_target(ins.imm, false)) {
                diag("jump target " + hex(ins.imm) + " is not an instruction", at);
            }
            check_name(ins.sym, ins.imm, at);
            break;
        case Opcode::Call:
            if (!is_target(ins.imm, true)) {
                diag("call target " + hex(ins.imm) + " is neither code nor a hookable symbol", at);
            }
            check_name(ins.sym, ins.imm, at);
            break;
        case Opcode::Intrinsic:
            if (extern_addrs.count(ins.imm) == 0) {
                diag("intrinsic target " + hex(ins.imm) + " is not a bodiless symbol", at);
            }
            check_name(ins.sym, ins.imm, at);
            break;
        case Opcode::Br:
            if (!is_target(ins.imm, false) || !is_target(ins.imm2, false)) {
                diag("branch target is not an instruction", at);
            }
            check_name(ins.sym, ins.imm, at);
            check_name(ins.sym2, ins.imm2, at);
            break;
        default:
            break;
        }
    }

    // Data images: pairwise disjoint and clear of code/extern addresses.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& img : p.data) {
        if (img.bytes.empty()) {
            diag("empty data image", img.addr);
            continue;
        }
        std::uint64_t end = img.addr + img.bytes.size();
        if (end < img.addr) {
            diag("data image wraps around the address space", img.addr);
            continue;
        }
        if (img.addr < p.image_end() && p.base < end) {
            diag("data image overlaps code", img.addr);
        }
        ranges.emplace_back(img.addr, end);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second) {
            diag("overlapping data images at " + hex(ranges[i].first), ranges[i].first);
        }
    }

    for (const auto& e : p.entries) {
        const Symbol* s = p.find(e);
        if (!s || s->kind != SymbolKind::Code) {
            diag("entry '" + e + "' is not a code label");
        }
    }
    return out;
}

} // namespace esx::eir
