#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include "esx/eir/program.hpp"

namespace esx::eir {

using symx::Op;

AsmError::AsmError(int line, int column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
      line_(line), column_(column), detail_(message) {}

const Symbol* Program::find(std::string_view name) const {
    auto it = std::lower_bound(symbols.begin(), symbols.end(), name,
                               [](const Symbol& s, std::string_view n) { return s.name < n; });
    if (it != symbols.end() && it->name == name) {
        return &*it;
    }
    return nullptr;
}

const Symbol* Program::extern_at(std::uint64_t addr) const {
    for (const auto& s : symbols) {
        if (s.kind == SymbolKind::Extern && s.addr == addr) {
            return &s;
        }
    }
    return nullptr;
}

const Symbol* Program::label_at(std::uint64_t addr) const {
    for (const auto& s : symbols) {
        if (s.kind == SymbolKind::Code && s.addr == addr) {
            return &s;
        }
    }
    return nullptr;
}

std::uint64_t Program::image_end() const {
    std::uint64_t end = code_end();
    for (const auto& s : symbols) {
        if (s.kind == SymbolKind::Extern) {
            end = std::max(end, s.addr + 1);
        }
    }
    return end;
}

namespace {

struct OpName {
    const char* name;
    Opcode opcode;
    Op op;
};

constexpr OpName kOps[] = {
    {"not", Opcode::Unary, Op::Not}, {"neg", Opcode::Unary, Op::Neg},   {"add", Opcode::Bin, Op::Add},
    {"sub", Opcode::Bin, Op::Sub},   {"mul", Opcode::Bin, Op::Mul},     {"udiv", Opcode::Bin, Op::UDiv},
    {"urem", Opcode::Bin, Op::URem}, {"and", Opcode::Bin, Op::And},     {"or", Opcode::Bin, Op::Or},
    {"xor", Opcode::Bin, Op::Xor},   {"shl", Opcode::Bin, Op::Shl},     {"lshr", Opcode::Bin, Op::LShr},
    {"ashr", Opcode::Bin, Op::AShr}, {"eq", Opcode::Cmp, Op::Eq},       {"ne", Opcode::Cmp, Op::Ne},
    {"ult", Opcode::Cmp, Op::Ult},   {"ule", Opcode::Cmp, Op::Ule},     {"slt", Opcode::Cmp, Op::Slt},
    {"sle", Opcode::Cmp, Op::Sle},
};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$';
}

struct Token {
    std::string text;
    int col = 0;
};

// A reference to a name that is resolved after all labels are known.
struct Ref {
    std::string name;
    int line = 0;
    int col = 0;
};

struct PendingInstr {
    Instr ins;
    int line = 0;
    std::optional<Ref> target;  // Jmp/Br/Call/Intrinsic/symbolic Const
    std::optional<Ref> target2; // Br false
};

struct PendingData {
    int line = 0;
    Token addr;
    std::vector<Token> values;
    bool quad = false;
};

std::optional<std::uint64_t> parse_number(std::string_view s) {
    bool neg = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        neg = s[0] == '-';
        s.remove_prefix(1);
    }
    if (s.empty()) {
        return std::nullopt;
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size()) {
        return std::nullopt;
    }
    return neg ? (~v + 1) : v;
}

class Assembler {
  public:
    Assembler(std::string_view text, const AsmOptions& opts) : text_(text) { prog_.base = opts.base; }

    Program run() {
        std::size_t pos = 0;
        int line_no = 0;
        while (pos <= text_.size()) {
            std::size_t nl = text_.find('\n', pos);
            if (nl == std::string_view::npos) {
                nl = text_.size();
            }
            ++line_no;
            parse_line(text_.substr(pos, nl - pos), line_no);
            pos = nl + 1;
        }
        resolve();
        return std::move(prog_);
    }

  private:
    [[noreturn]] void fail(int line, int col, const std::string& msg) const { throw AsmError(line, col, msg); }

    void define(const std::string& name, SymbolKind kind, std::uint64_t addr, std::uint64_t size, int line,
                int col) {
        if (defined_.count(name)) {
            fail(line, col, "duplicate symbol '" + name + "'");
        }
        defined_[name] = Symbol{name, kind, addr, size};
    }

    void declare_extern(const std::string& name, int line, int col) {
        auto it = defined_.find(name);
        if (it != defined_.end()) {
            if (it->second.kind != SymbolKind::Extern) {
                fail(line, col, "'" + name + "' is already defined with a body");
            }
            return;
        }
        defined_[name] = Symbol{name, SymbolKind::Extern, 0, 0};
        extern_order_.push_back(name);
    }

    std::vector<Token> split_operands(std::string_view s, int col0, int line) {
        std::vector<Token> out;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            }
            if (i >= s.size()) {
                break;
            }
            std::size_t start = i;
            int depth = 0;
            while (i < s.size() && (depth > 0 || s[i] != ',')) {
                if (s[i] == '[') {
                    ++depth;
                } else if (s[i] == ']') {
                    --depth;
                }
                ++i;
            }
            std::string_view tok = s.substr(start, i - start);
            while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back()))) {
                tok.remove_suffix(1);
            }
            if (tok.empty()) {
                fail(line, col0 + static_cast<int>(start), "empty operand");
            }
            out.push_back(Token{std::string(tok), col0 + static_cast<int>(start)});
            if (i < s.size()) {
                ++i; // comma
                if (i >= s.size()) {
                    fail(line, col0 + static_cast<int>(i), "trailing comma");
                }
            }
        }
        return out;
    }

    std::vector<Token> split_words(std::string_view s, int col0) {
        std::vector<Token> out;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            }
            std::size_t start = i;
            while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            }
            if (i > start) {
                out.push_back(Token{std::string(s.substr(start, i - start)), col0 + static_cast<int>(start)});
            }
        }
        return out;
    }

    std::uint8_t reg(const Token& t, int line) {
        if (t.text == "sp") {
            return kStackReg;
        }
        if (t.text.size() >= 2 && t.text[0] == 'r') {
            auto n = parse_number(std::string_view(t.text).substr(1));
            if (n && *n < kNumRegs && std::isdigit(static_cast<unsigned char>(t.text[1]))) {
                return static_cast<std::uint8_t>(*n);
            }
        }
        fail(line, t.col, "expected register r0..r15, got '" + t.text + "'");
    }

    std::uint64_t number(const Token& t, int line) {
        auto n = parse_number(t.text);
        if (!n) {
            fail(line, t.col, "expected number, got '" + t.text + "'");
        }
        return *n;
    }

    bool is_ident(const std::string& s) const {
        return !s.empty() && is_ident_start(s[0]) && std::all_of(s.begin(), s.end(), is_ident_char);
    }

    Ref ident(const Token& t, int line) {
        if (!is_ident(t.text)) {
            fail(line, t.col, "expected label, got '" + t.text + "'");
        }
        return Ref{t.text, line, t.col};
    }

    // [rs], [rs+off], [rs-off]
    void mem_operand(const Token& t, int line, Instr& ins) {
        std::string s;
        for (char c : t.text) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                s.push_back(c);
            }
        }
        if (s.size() < 3 || s.front() != '[' || s.back() != ']') {
            fail(line, t.col, "expected memory operand [reg+offset], got '" + t.text + "'");
        }
        s = s.substr(1, s.size() - 2);
        std::size_t split = s.find_first_of("+-");
        Token r{s.substr(0, split), t.col + 1};
        ins.rs = reg(r, line);
        ins.off = 0;
        if (split != std::string::npos) {
            auto n = parse_number(std::string_view(s).substr(split));
            if (!n) {
                fail(line, t.col, "bad memory offset in '" + t.text + "'");
            }
            auto off = static_cast<std::int64_t>(*n);
            if (off < INT32_MIN || off > INT32_MAX) {
                fail(line, t.col, "memory offset out of signed 32-bit range");
            }
            ins.off = off;
        }
    }

    void expect_count(const std::vector<Token>& ops, std::size_t n, const std::string& mn, int line, int col) {
        if (ops.size() != n) {
            fail(line, col,
                 "'" + mn + "' expects " + std::to_string(n) + " operand" + (n == 1 ? "" : "s") + ", got " +
                     std::to_string(ops.size()));
        }
    }

    void parse_line(std::string_view raw, int line) {
        std::size_t semi = raw.find(';');
        std::string_view s = raw.substr(0, semi);
        std::size_t i = 0;
        auto skip_ws = [&] {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            }
        };
        // Leading labels.
        while (true) {
            skip_ws();
            std::size_t start = i;
            std::size_t j = i;
            while (j < s.size() && is_ident_char(s[j])) {
                ++j;
            }
            if (j > start && j < s.size() && s[j] == ':' && is_ident_start(s[start])) {
                std::string name(s.substr(start, j - start));
                define(name, SymbolKind::Code, prog_.base + pending_.size(), 0, line, static_cast<int>(start) + 1);
                label_order_.push_back(name);
                i = j + 1;
                continue;
            }
            break;
        }
        skip_ws();
        if (i >= s.size()) {
            return;
        }
        std::size_t mstart = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        std::string mn(s.substr(mstart, i - mstart));
        int mcol = static_cast<int>(mstart) + 1;
        std::string_view rest = s.substr(i);
        int rest_col = static_cast<int>(i) + 1;

        if (mn[0] == '.') {
            directive(mn, split_words(rest, rest_col), line, mcol);
            return;
        }
        auto ops = split_operands(rest, rest_col, line);
        PendingInstr p;
        p.line = line;
        Instr& ins = p.ins;

        if (mn == "const") {
            expect_count(ops, 2, mn, line, mcol);
            ins.opcode = Opcode::Const;
            ins.rd = reg(ops[0], line);
            if (auto n = parse_number(ops[1].text)) {
                ins.imm = *n;
            } else {
                p.target = ident(ops[1], line);
            }
        } else if (mn == "mov") {
            expect_count(ops, 2, mn, line, mcol);
            ins.opcode = Opcode::Mov;
            ins.rd = reg(ops[0], line);
            ins.rs = reg(ops[1], line);
        } else if (mn.rfind("load.", 0) == 0 || mn.rfind("store.", 0) == 0) {
            bool load = mn[0] == 'l';
            auto w = parse_number(std::string_view(mn).substr(load ? 5 : 6));
            if (!w || (*w != 1 && *w != 2 && *w != 4 && *w != 8)) {
                fail(line, mcol, "illegal access width in '" + mn + "'");
            }
            expect_count(ops, 2, mn, line, mcol);
            ins.opcode = load ? Opcode::Load : Opcode::Store;
            ins.width = static_cast<std::uint8_t>(*w);
            if (load) {
                ins.rd = reg(ops[0], line);
                mem_operand(ops[1], line, ins);
            } else {
                mem_operand(ops[0], line, ins);
                ins.rt = reg(ops[1], line);
            }
        } else if (mn == "jmp" || mn == "call") {
            expect_count(ops, 1, mn, line, mcol);
            ins.opcode = mn == "jmp" ? Opcode::Jmp : Opcode::Call;
            p.target = ident(ops[0], line);
        } else if (mn == "jmpr" || mn == "callr") {
            expect_count(ops, 1, mn, line, mcol);
            ins.opcode = mn == "jmpr" ? Opcode::Jmpr : Opcode::Callr;
            ins.rs = reg(ops[0], line);
        } else if (mn == "br") {
            expect_count(ops, 3, mn, line, mcol);
            ins.opcode = Opcode::Br;
            ins.rs = reg(ops[0], line);
            p.target = ident(ops[1], line);
            p.target2 = ident(ops[2], line);
        } else if (mn == "ret" || mn == "halt") {
            expect_count(ops, 0, mn, line, mcol);
            ins.opcode = mn == "ret" ? Opcode::Ret : Opcode::Halt;
        } else if (mn == "intrinsic") {
            expect_count(ops, 1, mn, line, mcol);
            ins.opcode = Opcode::Intrinsic;
            p.target = ident(ops[0], line);
            declare_extern(p.target->name, line, ops[0].col);
        } else {
            auto it = std::find_if(std::begin(kOps), std::end(kOps), [&](const OpName& o) { return mn == o.name; });
            if (it == std::end(kOps)) {
                fail(line, mcol, "unknown mnemonic '" + mn + "'");
            }
            ins.opcode = it->opcode;
            ins.op = it->op;
            if (it->opcode == Opcode::Unary) {
                expect_count(ops, 2, mn, line, mcol);
                ins.rd = reg(ops[0], line);
                ins.rs = reg(ops[1], line);
            } else {
                expect_count(ops, 3, mn, line, mcol);
                ins.rd = reg(ops[0], line);
                ins.rs = reg(ops[1], line);
                ins.rt = reg(ops[2], line);
            }
        }
        pending_.push_back(std::move(p));
    }

    void directive(const std::string& d, const std::vector<Token>& args, int line, int col) {
        auto need = [&](std::size_t n) {
            if (args.size() != n) {
                fail(line, col, "'" + d + "' expects " + std::to_string(n) + " argument" + (n == 1 ? "" : "s"));
            }
        };
        if (d == ".base") {
            need(1);
            if (!pending_.empty() || !label_order_.empty()) {
                fail(line, col, "'.base' must precede all code");
            }
            prog_.base = number(args[0], line);
        } else if (d == ".entry") {
            need(1);
            entry_refs_.push_back(ident(args[0], line));
        } else if (d == ".extern") {
            need(1);
            declare_extern(ident(args[0], line).name, line, args[0].col);
        } else if (d == ".global") {
            need(3);
            Ref name = ident(args[0], line);
            std::uint64_t size = number(args[2], line);
            if (size == 0) {
                fail(line, args[2].col, "global '" + name.name + "' has zero size");
            }
            define(name.name, SymbolKind::Data, number(args[1], line), size, line, args[0].col);
        } else if (d == ".data" || d == ".quad") {
            if (args.size() < 2) {
                fail(line, col, "'" + d + "' expects an address and at least one value");
            }
            PendingData pd;
            pd.line = line;
            pd.addr = args[0];
            pd.values.assign(args.begin() + 1, args.end());
            pd.quad = d == ".quad";
            data_.push_back(std::move(pd));
        } else {
            fail(line, col, "unknown directive '" + d + "'");
        }
    }

    const Symbol& lookup(const Ref& r) const {
        auto it = defined_.find(r.name);
        if (it == defined_.end()) {
            fail(r.line, r.col, "undefined label '" + r.name + "'");
        }
        return it->second;
    }

    std::uint64_t value_of(const Token& t, int line) {
        if (auto n = parse_number(t.text)) {
            return *n;
        }
        return lookup(ident(t, line)).addr;
    }

    void resolve() {
        std::uint64_t next = prog_.base + pending_.size();
        for (const auto& name : extern_order_) {
            defined_[name].addr = next++;
        }
        for (auto& p : pending_) {
            Instr& ins = p.ins;
            if (p.target) {
                const Symbol& s = lookup(*p.target);
                bool control = ins.opcode != Opcode::Const;
                if (control && s.kind == SymbolKind::Data) {
                    fail(p.target->line, p.target->col, "control transfer to data symbol '" + s.name + "'");
                }
                if (ins.opcode == Opcode::Jmp && s.kind == SymbolKind::Extern) {
                    fail(p.target->line, p.target->col, "jump to bodiless symbol '" + s.name + "'");
                }
                if (ins.opcode == Opcode::Br && s.kind == SymbolKind::Extern) {
                    fail(p.target->line, p.target->col, "branch to bodiless symbol '" + s.name + "'");
                }
                ins.sym = s.name;
                ins.imm = s.addr;
            }
            if (p.target2) {
                const Symbol& s = lookup(*p.target2);
                if (s.kind != SymbolKind::Code) {
                    fail(p.target2->line, p.target2->col, "branch to non-code symbol '" + s.name + "'");
                }
                ins.sym2 = s.name;
                ins.imm2 = s.addr;
            }
            prog_.code.push_back(ins);
        }
        for (const auto& name : label_order_) {
            const Symbol& s = defined_.at(name);
            if (s.addr >= prog_.code_end()) {
                // A label after the last instruction addresses nothing.
                throw AsmError(0, 0, "label '" + name + "' does not precede an instruction");
            }
        }
        for (const auto& pd : data_) {
            DataImage img;
            img.addr = value_of(pd.addr, pd.line);
            for (const auto& v : pd.values) {
                if (pd.quad) {
                    std::uint64_t q = value_of(v, pd.line);
                    for (int k = 0; k < 8; ++k) {
                        img.bytes.push_back(static_cast<std::uint8_t>(q >> (8 * k)));
                    }
                    continue;
                }
                std::string_view hex = v.text;
                if (hex.size() % 2 != 0) {
                    fail(pd.line, v.col, "odd number of hex digits in '" + v.text + "'");
                }
                for (std::size_t k = 0; k < hex.size(); k += 2) {
                    std::uint8_t b = 0;
                    auto [ptr, ec] = std::from_chars(hex.data() + k, hex.data() + k + 2, b, 16);
                    if (ec != std::errc() || ptr != hex.data() + k + 2) {
                        fail(pd.line, v.col, "bad hex byte in '" + v.text + "'");
                    }
                    img.bytes.push_back(b);
                }
            }
            prog_.data.push_back(std::move(img));
        }
        std::stable_sort(prog_.data.begin(), prog_.data.end(),
                         [](const DataImage& a, const DataImage& b) { return a.addr < b.addr; });
        for (auto& [name, s] : defined_) {
            prog_.symbols.push_back(s);
        }
        if (entry_refs_.empty()) {
            for (const auto& name : label_order_) {
                if (defined_.at(name).addr == prog_.base) {
                    prog_.entries.push_back(name);
                }
            }
        }
        for (const auto& r : entry_refs_) {
            if (lookup(r).kind != SymbolKind::Code) {
                fail(r.line, r.col, "entry '" + r.name + "' is not a code label");
            }
            prog_.entries.push_back(r.name);
        }
        auto diags = validate(prog_);
        if (!diags.empty()) {
            throw AsmError(0, 0, diags.front().message);
        }
    }

    std::string_view text_;
    Program prog_;
    std::vector<PendingInstr> pending_;
    std::vector<PendingData> data_;
    std::map<std::string, Symbol> defined_;
    std::vector<std::string> label_order_;
    std::vector<std::string> extern_order_;
    std::vector<Ref> entry_refs_;
};

} // namespace

Program assemble(std::string_view text, const AsmOptions& opts) { return Assembler(text, opts).run(); }

const char* mnemonic(const Instr& ins) {
    switch (ins.opcode) {
    case Opcode::Const:
        return "const";
    case Opcode::Mov:
        return "mov";
    case Opcode::Unary:
    case Opcode::Bin:
    case Opcode::Cmp:
        for (const auto& o : kOps) {
            if (o.op == ins.op && o.opcode == ins.opcode) {
                return o.name;
            }
        }
        return "?";
    case Opcode::Load:
        return "load";
    case Opcode::Store:
        return "store";
    case Opcode::Jmp:
        return "jmp";
    case Opcode::Jmpr:
        return "jmpr";
    case Opcode::Br:
        return "br";
    case Opcode::Call:
        return "call";
    case Opcode::Callr:
        return "callr";
    case Opcode::Ret:
        return "ret";
    case Opcode::Halt:
        return "halt";
    case Opcode::Intrinsic:
        return "intrinsic";
    }
    return "?";
}

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::string r(unsigned i) { return "r" + std::to_string(i); }

std::string mem(const Instr& ins) {
    std::string s = "[" + r(ins.rs);
    if (ins.off > 0) {
        s += "+" + hex(static_cast<std::uint64_t>(ins.off));
    } else if (ins.off < 0) {
        s += "-" + hex(static_cast<std::uint64_t>(-ins.off));
    }
    return s + "]";
}

std::string target(const std::string& sym, std::uint64_t addr) { return sym.empty() ? hex(addr) : sym; }

} // namespace

std::string format_instr(const Instr& ins) {
    std::string m = mnemonic(ins);
    switch (ins.opcode) {
    case Opcode::Const:
        return m + " " + r(ins.rd) + ", " + (ins.sym.empty() ? hex(ins.imm) : ins.sym);
    case Opcode::Mov:
    case Opcode::Unary:
        return m + " " + r(ins.rd) + ", " + r(ins.rs);
    case Opcode::Bin:
    case Opcode::Cmp:
        return m + " " + r(ins.rd) + ", " + r(ins.rs) + ", " + r(ins.rt);
    case Opcode::Load:
        return m + "." + std::to_string(ins.width) + " " + r(ins.rd) + ", " + mem(ins);
    case Opcode::Store:
        return m + "." + std::to_string(ins.width) + " " + mem(ins) + ", " + r(ins.rt);
    case Opcode::Jmp:
    case Opcode::Call:
    case Opcode::Intrinsic:
        return m + " " + target(ins.sym, ins.imm);
    case Opcode::Jmpr:
    case Opcode::Callr:
        return m + " " + r(ins.rs);
    case Opcode::Br:
        return m + " " + r(ins.rs) + ", " + target(ins.sym, ins.imm) + ", " + target(ins.sym2, ins.imm2);
    case Opcode::Ret:
    case Opcode::Halt:
        return m;
    }
    return m;
}

std::string disassemble(const Program& p) {
    std::ostringstream os;
    if (p.code.empty() && p.symbols.empty() && p.data.empty() && p.entries.empty()) {
        return {};
    }
    os << ".base " << hex(p.base) << "\n";
    std::vector<const Symbol*> externs;
    std::multimap<std::uint64_t, const Symbol*> labels;
    for (const auto& s : p.symbols) {
        if (s.kind == SymbolKind::Extern) {
            externs.push_back(&s);
        } else if (s.kind == SymbolKind::Data) {
            os << ".global " << s.name << " " << hex(s.addr) << " " << s.size << "\n";
        } else {
            labels.emplace(s.addr, &s);
        }
    }
    std::sort(externs.begin(), externs.end(), [](const Symbol* a, const Symbol* b) { return a->addr < b->addr; });
    for (const auto* s : externs) {
        os << ".extern " << s->name << "\n";
    }
    for (const auto& img : p.data) {
        os << ".data " << hex(img.addr) << " ";
        static const char* digits = "0123456789abcdef";
        for (auto b : img.bytes) {
            os << digits[b >> 4] << digits[b & 15];
        }
        os << "\n";
    }
    for (const auto& e : p.entries) {
        os << ".entry " << e << "\n";
    }
    for (std::size_t i = 0; i < p.code.size(); ++i) {
        auto range = labels.equal_range(p.base + i);
        for (auto it = range.first; it != range.second; ++it) {
            os << it->second->name << ":\n";
        }
        os << "    " << format_instr(p.code[i]) << "\n";
    }
    return os.str();
}

} // namespace esx::eir
