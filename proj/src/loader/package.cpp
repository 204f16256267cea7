#include "esx/loader/package.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace esx::loader {

using nlohmann::json;

namespace {

constexpr std::uint64_t kPage = 0x1000;
constexpr std::uint64_t kDefaultGlobals = 0x1000;
constexpr std::uint64_t kDefaultHeap = 0x10000;
constexpr std::uint64_t kDefaultStack = 0x10000;

[[noreturn]] void fail(const std::string& msg) { throw LoadError(msg); }

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) {
        fail(where + " must be an object");
    }
    for (const auto& [k, v] : obj.items()) {
        if (!allowed.count(k)) {
            fail("unknown field '" + k + "' in " + where);
        }
    }
}

// Accepts a non-negative integer or a "0x.." / decimal string.
std::uint64_t to_u64(const json& v, const std::string& what) {
    if (v.is_number_unsigned()) {
        return v.get<std::uint64_t>();
    }
    if (v.is_number_integer()) {
        auto i = v.get<std::int64_t>();
        if (i < 0) {
            fail(what + " must not be negative");
        }
        return static_cast<std::uint64_t>(i);
    }
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        try {
            std::size_t used = 0;
            std::uint64_t r = 0;
            if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
                r = std::stoull(s.substr(2), &used, 16);
                used += 2;
            } else {
                r = std::stoull(s, &used, 10);
            }
            if (used == s.size() && !s.empty() && s[0] != '-') {
                return r;
            }
        } catch (const std::exception&) {
        }
        fail(what + " is not a valid number: '" + s + "'");
    }
    fail(what + " must be a number or hex string");
}

const std::string& str(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string() || it->get_ref<const std::string&>().empty()) {
        fail(where + " needs a non-empty string '" + key + "'");
    }
    return it->get_ref<const std::string&>();
}

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

Range parse_range(const json& j, const std::string& where) {
    check_keys(j, {"base", "size"}, where);
    if (!j.contains("base") || !j.contains("size")) {
        fail(where + " needs 'base' and 'size'");
    }
    Range r{to_u64(j["base"], where + ".base"), to_u64(j["size"], where + ".size")};
    if (r.size == 0) {
        fail(where + " has zero size");
    }
    if (r.end() < r.base) {
        fail(where + " wraps around the address space");
    }
    return r;
}

ParamKind parse_kind(const std::string& k, const std::string& where) {
    if (k == "value") {
        return ParamKind::Value;
    }
    if (k == "ptr_in") {
        return ParamKind::PtrIn;
    }
    if (k == "ptr_out") {
        return ParamKind::PtrOut;
    }
    if (k == "ptr_inout") {
        return ParamKind::PtrInOut;
    }
    if (k == "user_check") {
        return ParamKind::UserCheck;
    }
    fail(where + " has unknown kind '" + k + "'");
}

ECallSpec parse_ecall(const json& j, std::size_t pos) {
    const std::string where = "ecalls[" + std::to_string(pos) + "]";
    check_keys(j, {"index", "name", "entry", "params"}, where);
    ECallSpec e;
    if (!j.contains("index")) {
        fail(where + " needs 'index'");
    }
    std::uint64_t idx = to_u64(j["index"], where + ".index");
    if (idx > 0xFFFF) {
        fail(where + ".index is too large");
    }
    e.index = static_cast<unsigned>(idx);
    e.name = str(j, "name", where);
    e.entry = str(j, "entry", where);
    if (j.contains("params")) {
        if (!j["params"].is_array()) {
            fail(where + ".params must be an array");
        }
        std::size_t pi = 0;
        for (const auto& pj : j["params"]) {
            const std::string pw = where + ".params[" + std::to_string(pi++) + "]";
            check_keys(pj, {"name", "kind", "width", "size", "size_param", "max_size"}, pw);
            ParamSpec p;
            p.name = str(pj, "name", pw);
            p.kind = parse_kind(str(pj, "kind", pw), pw);
            if (pj.contains("width")) {
                if (p.kind != ParamKind::Value) {
                    fail(pw + ": 'width' applies to value params only");
                }
                std::uint64_t w = to_u64(pj["width"], pw + ".width");
                if (w != 8 && w != 16 && w != 32 && w != 64) {
                    fail(pw + ": width must be 8, 16, 32 or 64 bits");
                }
                p.width = static_cast<unsigned>(w);
            }
            if (pj.contains("size")) {
                p.size = to_u64(pj["size"], pw + ".size");
                if (*p.size == 0) {
                    fail(pw + ": size must be positive");
                }
            }
            if (pj.contains("size_param")) {
                if (!pj["size_param"].is_string()) {
                    fail(pw + ": size_param must be a string");
                }
                p.size_param = pj["size_param"].get<std::string>();
            }
            if (pj.contains("max_size")) {
                p.max_size = to_u64(pj["max_size"], pw + ".max_size");
                if (p.max_size == 0) {
                    fail(pw + ": max_size must be positive");
                }
            }
            const bool has_size = p.size.has_value() || !p.size_param.empty();
            if (p.is_buffer()) {
                if (p.size.has_value() == !p.size_param.empty()) {
                    fail(pw + ": buffer params need exactly one of 'size' or 'size_param'");
                }
                if (p.size && *p.size > p.max_size && !pj.contains("max_size")) {
                    p.max_size = *p.size;
                }
            } else if (has_size || pj.contains("max_size")) {
                fail(pw + ": only buffer params take a size");
            }
            e.params.push_back(std::move(p));
        }
    }
    std::set<std::string> names;
    for (const auto& p : e.params) {
        if (!names.insert(p.name).second) {
            fail(where + ": duplicate param name '" + p.name + "'");
        }
    }
    for (const auto& p : e.params) {
        if (p.size_param.empty()) {
            continue;
        }
        auto it = std::find_if(e.params.begin(), e.params.end(),
                               [&](const ParamSpec& q) { return q.name == p.size_param; });
        if (it == e.params.end() || it->kind != ParamKind::Value) {
            fail(where + ": bad size reference '" + p.size_param + "' for param '" + p.name +
                 "' (must name a value param)");
        }
    }
    return e;
}

std::vector<ExpectedFinding> parse_expected_list(const json& arr, const std::string& where) {
    if (!arr.is_array()) {
        fail(where + " must be an array");
    }
    std::vector<ExpectedFinding> out;
    std::size_t i = 0;
    for (const auto& f : arr) {
        const std::string w = where + "[" + std::to_string(i++) + "]";
        check_keys(f, {"ecall", "kind", "label", "severity"}, w);
        ExpectedFinding e{str(f, "ecall", w), str(f, "kind", w), str(f, "label", w), str(f, "severity", w)};
        static const std::set<std::string> kinds{"controlled-jump", "controlled-write", "null-deref", "double-fetch"};
        if (!kinds.count(e.kind)) {
            fail(w + ": unknown finding kind '" + e.kind + "'");
        }
        if (e.severity != "high" && e.severity != "low") {
            fail(w + ": severity must be 'high' or 'low'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

void check_expected(const ExpectedFindings& ex, const EnclavePackage& pkg) {
    for (const auto& f : ex.findings) {
        if (std::none_of(pkg.ecalls.begin(), pkg.ecalls.end(), [&](const ECallSpec& e) { return e.name == f.ecall; })) {
            fail("expected finding names unknown ecall '" + f.ecall + "'");
        }
        const eir::Symbol* s = pkg.program.find(f.label);
        if (!s || s->kind != eir::SymbolKind::Code) {
            fail("expected finding names unknown label '" + f.label + "'");
        }
    }
}

Layout build_layout(const json& m, const eir::Program* prog_hint, std::uint64_t enclave_base,
                    std::uint64_t enclave_size) {
    Layout l;
    l.enclave = Range{enclave_base, enclave_size};
    json sections = m.contains("sections") ? m["sections"] : json::object();
    check_keys(sections, {"code", "globals", "heap", "stack"}, "sections");
    if (sections.contains("code")) {
        l.code = parse_range(sections["code"], "sections.code");
    } else {
        std::uint64_t units = prog_hint ? prog_hint->image_end() - prog_hint->base : 0;
        l.code = Range{enclave_base, std::max(kPage, round_up(units, kPage))};
    }
    l.globals = sections.contains("globals") ? parse_range(sections["globals"], "sections.globals")
                                             : Range{l.code.end(), kDefaultGlobals};
    l.heap = sections.contains("heap") ? parse_range(sections["heap"], "sections.heap")
                                       : Range{l.globals.end(), kDefaultHeap};
    l.stack = sections.contains("stack") ? parse_range(sections["stack"], "sections.stack")
                                         : Range{l.enclave.end() - std::min(kDefaultStack, enclave_size), std::min(kDefaultStack, enclave_size)};
    const std::pair<const char*, const Range*> all[] = {
        {"code", &l.code}, {"globals", &l.globals}, {"heap", &l.heap}, {"stack", &l.stack}};
    for (const auto& [name, r] : all) {
        if (!l.enclave.contains(*r) || r->end() < r->base) {
            fail(std::string("section '") + name + "' lies outside the enclave range");
        }
    }
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) {
            if (all[i].second->overlaps(*all[j].second)) {
                fail(std::string("sections '") + all[i].first + "' and '" + all[j].first + "' overlap");
            }
        }
    }
    return l;
}

} // namespace

const char* param_kind_name(ParamKind k) {
    switch (k) {
    case ParamKind::Value:
        return "value";
    case ParamKind::PtrIn:
        return "ptr_in";
    case ParamKind::PtrOut:
        return "ptr_out";
    case ParamKind::PtrInOut:
        return "ptr_inout";
    case ParamKind::UserCheck:
        return "user_check";
    }
    return "?";
}

std::optional<unsigned> ECallSpec::param_index(const std::string& pname) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == pname) {
            return static_cast<unsigned>(i);
        }
    }
    return std::nullopt;
}

const std::vector<std::string>& builtin_hook_ids() {
    static const std::vector<std::string> ids{"sgx_is_within_enclave", "sgx_is_outside_enclave", "memcpy", "memset",
                                              "malloc", "free", "ocall"};
    return ids;
}

EnclavePackage parse_package(const std::string& manifest_json, const std::string& eir_source) {
    json m;
    try {
        m = json::parse(manifest_json);
    } catch (const json::parse_error& e) {
        fail(std::string("manifest parse error: ") + e.what());
    }
    check_keys(m, {"name", "enclave_base", "enclave_size", "sections", "ecalls", "hooks", "expected_findings"},
               "manifest");
    EnclavePackage pkg;
    pkg.name = str(m, "name", "manifest");
    if (!m.contains("enclave_base") || !m.contains("enclave_size")) {
        fail("manifest needs 'enclave_base' and 'enclave_size'");
    }
    if (!m["enclave_base"].is_string()) {
        fail("enclave_base must be a hex string");
    }
    const std::uint64_t base = to_u64(m["enclave_base"], "enclave_base");
    const std::uint64_t size = to_u64(m["enclave_size"], "enclave_size");
    if (base < kNullPageEnd) {
        fail("enclave_base " + hex(base) + " places the null page inside the enclave");
    }
    if (size == 0 || base + size < base) {
        fail("enclave_size must be positive and must not wrap");
    }

    std::uint64_t code_base = base;
    if (m.contains("sections") && m["sections"].is_object() && m["sections"].contains("code")) {
        code_base = parse_range(m["sections"]["code"], "sections.code").base;
    }
    try {
        pkg.program = eir::assemble(eir_source, eir::AsmOptions{code_base});
    } catch (const eir::AsmError& e) {
        fail(std::string("assembly error: ") + e.what());
    }
    if (pkg.program.base != code_base) {
        fail("program .base " + hex(pkg.program.base) + " differs from the code section base " + hex(code_base));
    }
    pkg.layout = build_layout(m, &pkg.program, base, size);
    const Layout& l = pkg.layout;
    if (pkg.program.image_end() > l.code.end()) {
        fail("program does not fit in the code section");
    }
    for (const auto& img : pkg.program.data) {
        Range r{img.addr, img.bytes.size()};
        if (!l.enclave.contains(r)) {
            fail("data image at " + hex(img.addr) + " lies outside the enclave");
        }
        if (r.overlaps(l.heap) || r.overlaps(l.stack) || r.overlaps(l.code)) {
            fail("data image at " + hex(img.addr) + " overlaps the code, heap or stack section");
        }
    }
    for (const auto& s : pkg.program.symbols) {
        if (s.kind == eir::SymbolKind::Data && !l.enclave.contains(Range{s.addr, s.size})) {
            fail("global '" + s.name + "' lies outside the enclave");
        }
    }

    if (m.contains("ecalls")) {
        if (!m["ecalls"].is_array()) {
            fail("ecalls must be an array");
        }
        std::size_t pos = 0;
        for (const auto& ej : m["ecalls"]) {
            pkg.ecalls.push_back(parse_ecall(ej, pos++));
        }
    }
    std::sort(pkg.ecalls.begin(), pkg.ecalls.end(),
              [](const ECallSpec& a, const ECallSpec& b) { return a.index < b.index; });
    std::set<std::string> ecall_names;
    for (std::size_t i = 0; i < pkg.ecalls.size(); ++i) {
        const auto& e = pkg.ecalls[i];
        if (e.index != i) {
            fail("ecall indices must be unique and dense from 0 (problem at index " + std::to_string(e.index) + ")");
        }
        if (!ecall_names.insert(e.name).second) {
            fail("duplicate ecall name '" + e.name + "'");
        }
        const eir::Symbol* s = pkg.program.find(e.entry);
        if (!s || s->kind != eir::SymbolKind::Code) {
            fail("entry symbol not found: '" + e.entry + "' (ecall '" + e.name + "')");
        }
    }
    if (pkg.ecalls.empty()) {
        pkg.warnings.push_back("package '" + pkg.name + "' declares no ecalls");
    }

    if (m.contains("hooks")) {
        if (!m["hooks"].is_object()) {
            fail("hooks must be an object");
        }
        const auto& ids = builtin_hook_ids();
        for (const auto& [sym, v] : m["hooks"].items()) {
            HookBinding b;
            if (v.is_string()) {
                b.builtin = v.get<std::string>();
            } else if (v.is_object()) {
                check_keys(v, {"builtin", "out_buffer"}, "hooks." + sym);
                b.builtin = str(v, "builtin", "hooks." + sym);
                if (v.contains("out_buffer")) {
                    if (b.builtin != "ocall") {
                        fail("hooks." + sym + ": out_buffer applies to ocall bindings only");
                    }
                    const auto& ob = v["out_buffer"];
                    check_keys(ob, {"param_reg", "size_reg"}, "hooks." + sym + ".out_buffer");
                    if (!ob.contains("param_reg") || !ob.contains("size_reg")) {
                        fail("hooks." + sym + ".out_buffer needs 'param_reg' and 'size_reg'");
                    }
                    std::uint64_t pr = to_u64(ob["param_reg"], "param_reg");
                    std::uint64_t sr = to_u64(ob["size_reg"], "size_reg");
                    if (pr >= eir::kNumRegs || sr >= eir::kNumRegs) {
                        fail("hooks." + sym + ".out_buffer register out of range");
                    }
                    b.out_buffer = OutBuffer{static_cast<unsigned>(pr), static_cast<unsigned>(sr)};
                }
            } else {
                fail("hooks." + sym + " must be a builtin id or an object");
            }
            if (std::find(ids.begin(), ids.end(), b.builtin) == ids.end()) {
                fail("hooks." + sym + ": unknown builtin '" + b.builtin + "'");
            }
            const eir::Symbol* s = pkg.program.find(sym);
            if (!s || s->kind == eir::SymbolKind::Data) {
                fail("hooks." + sym + ": no code or extern symbol of that name");
            }
            pkg.hooks.emplace(sym, std::move(b));
        }
    }
    for (const auto& s : pkg.program.symbols) {
        if (s.kind == eir::SymbolKind::Extern && !pkg.hooks.count(s.name)) {
            pkg.warnings.push_back("extern '" + s.name + "' has no hook binding");
        }
    }

    if (m.contains("expected_findings")) {
        ExpectedFindings ex;
        ex.findings = parse_expected_list(m["expected_findings"], "expected_findings");
        check_expected(ex, pkg);
        pkg.expected = std::move(ex);
    }
    return pkg;
}

ExpectedFindings parse_expected(const std::string& json_text, const EnclavePackage& pkg) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(std::string("expected-findings parse error: ") + e.what());
    }
    ExpectedFindings ex;
    if (j.is_array()) {
        ex.findings = parse_expected_list(j, "expected");
    } else {
        check_keys(j, {"exhaustive", "findings", "variant", "patterns"}, "expected");
        if (j.contains("variant")) {
            if (!j["variant"].is_string() ||
                (j["variant"] != "vulnerable" && j["variant"] != "patched" && j["variant"] != "clean")) {
                fail("expected.variant must be \"vulnerable\", \"patched\" or \"clean\"");
            }
            ex.variant = j["variant"].get<std::string>();
        }
        if (j.contains("patterns")) {
            if (!j["patterns"].is_array()) {
                fail("expected.patterns must be an array");
            }
            for (const auto& p : j["patterns"]) {
                static const std::set<std::string> known = {"P1", "P2", "P3", "P4", "P5"};
                if (!p.is_string() || !known.count(p.get<std::string>())) {
                    fail("unknown pattern in expected.patterns");
                }
                ex.patterns.push_back(p.get<std::string>());
            }
        }
        if (j.contains("exhaustive")) {
            if (!j["exhaustive"].is_boolean()) {
                fail("expected.exhaustive must be a boolean");
            }
            ex.exhaustive = j["exhaustive"].get<bool>();
        }
        ex.findings = parse_expected_list(j.contains("findings") ? j["findings"] : json::array(), "expected.findings");
    }
    check_expected(ex, pkg);
    return ex;
}

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        fail("cannot read " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

EnclavePackage load_package(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        fail("package directory not found: " + dir.string());
    }
    EnclavePackage pkg = parse_package(read_file(dir / "manifest.json"), read_file(dir / "enclave.eir"));
    if (std::filesystem::exists(dir / "expected.json")) {
        pkg.expected = parse_expected(read_file(dir / "expected.json"), pkg);
    }
    return pkg;
}

std::vector<ECallSpec> ecall_table(const EnclavePackage& pkg) { return pkg.ecalls; }

} // namespace esx::loader
