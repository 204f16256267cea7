#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "esx/symx/expr.hpp"

namespace esx::eir {

inline constexpr unsigned kNumRegs = 16;
inline constexpr unsigned kStackReg = 15;

enum class Opcode : std::uint8_t {
    Const,     // rd <- imm (or symbol address)
    Mov,       // rd <- rs
    Unary,     // rd <- op rs          (not, neg)
    Bin,       // rd <- rs op rt
    Cmp,       // rd <- zext(rs op rt)
    Load,      // rd <- mem[rs + off], width bytes
    Store,     // mem[rs + off] <- rt, width bytes
    Jmp,       // pc <- target
    Jmpr,      // pc <- rs
    Br,        // pc <- rs != 0 ? target : target2
    Call,      // push return, pc <- target
    Callr,     // push return, pc <- rs
    Ret,
    Halt,
    Intrinsic, // call to a bodiless symbol
};

struct Instr {
    Opcode opcode = Opcode::Halt;
    symx::Op op = symx::Op::Const; // Unary/Bin/Cmp
    std::uint8_t rd = 0;
    std::uint8_t rs = 0;
    std::uint8_t rt = 0;
    std::uint8_t width = 0; // Load/Store, in bytes
    std::int64_t off = 0;
    std::uint64_t imm = 0;    // Const value, or resolved target
    std::uint64_t imm2 = 0;   // Br false target
    std::string sym;          // symbolic Const operand, or target name
    std::string sym2;         // Br false target name

    friend bool operator==(const Instr&, const Instr&) = default;
};

enum class SymbolKind : std::uint8_t { Code, Data, Extern };

struct Symbol {
    std::string name;
    SymbolKind kind = SymbolKind::Code;
    std::uint64_t addr = 0;
    std::uint64_t size = 0; // Data only

    friend bool operator==(const Symbol&, const Symbol&) = default;
};

struct DataImage {
    std::uint64_t addr = 0;
    std::vector<std::uint8_t> bytes;

    friend bool operator==(const DataImage&, const DataImage&) = default;
};

// Instructions occupy one address unit each, starting at `base`. Extern
// (bodiless, hookable) symbols get the addresses directly after the code.
struct Program {
    std::uint64_t base = 0;
    std::vector<Instr> code;
    std::vector<Symbol> symbols; // sorted by name
    std::vector<DataImage> data; // sorted by address
    std::vector<std::string> entries;

    [[nodiscard]] std::uint64_t code_end() const { return base + code.size(); }
    [[nodiscard]] bool is_code(std::uint64_t addr) const { return addr >= base && addr < code_end(); }
    [[nodiscard]] const Instr& at(std::uint64_t addr) const { return code.at(addr - base); }
    [[nodiscard]] const Symbol* find(std::string_view name) const;
    // Extern symbol at the address, if any.
    [[nodiscard]] const Symbol* extern_at(std::uint64_t addr) const;
    // First code label (by name) at the address, if any.
    [[nodiscard]] const Symbol* label_at(std::uint64_t addr) const;
    // One past the last address used by code and extern symbols.
    [[nodiscard]] std::uint64_t image_end() const;

    friend bool operator==(const Program&, const Program&) = default;
};

class AsmError : public std::runtime_error {
  public:
    AsmError(int line, int column, const std::string& message);
    [[nodiscard]] int line() const { return line_; }
    [[nodiscard]] int column() const { return column_; }
    [[nodiscard]] const std::string& detail() const { return detail_; }

  private:
    int line_;
    int column_;
    std::string detail_;
};

struct AsmOptions {
    // Code base used when the source has no `.base` directive.
    std::uint64_t base = 0;
};

Program assemble(std::string_view text, const AsmOptions& opts = {});
std::string disassemble(const Program& program);
std::string format_instr(const Instr& ins);

struct Diagnostic {
    std::string message;
    std::optional<std::uint64_t> addr;
};
std::vector<Diagnostic> validate(const Program& program);

const char* mnemonic(const Instr& ins);

} // namespace esx::eir
