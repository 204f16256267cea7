#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "esx/report/report.hpp"

namespace esx::report {

using detect::Finding;
using detect::ProvenanceEntry;
using detect::Witness;
using nlohmann::ordered_json;

namespace {

std::string hex_addr(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string hex_bytes(const std::vector<std::uint8_t>& b) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(2 * b.size());
    for (auto x : b) {
        s.push_back(digits[x >> 4]);
        s.push_back(digits[x & 15]);
    }
    return s;
}

std::uint64_t parse_addr(const std::string& s) {
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) {
        throw ReportError("bad address '" + s + "'");
    }
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s.substr(2), &used, 16);
    } catch (const std::exception&) {
        throw ReportError("bad address '" + s + "'");
    }
    if (used != s.size() - 2) {
        throw ReportError("bad address '" + s + "'");
    }
    return v;
}

std::vector<std::uint8_t> parse_bytes(const std::string& s) {
    if (s.size() % 2) {
        throw ReportError("odd-length hex bytes");
    }
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') {
            return c - '0';
        }
        if (c >= 'a' && c <= 'f') {
            return c - 'a' + 10;
        }
        if (c >= 'A' && c <= 'F') {
            return c - 'A' + 10;
        }
        throw ReportError("bad hex digit");
    };
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < s.size(); i += 2) {
        out.push_back(static_cast<std::uint8_t>(nib(s[i]) * 16 + nib(s[i + 1])));
    }
    return out;
}

ordered_json witness_json(const Witness& w) {
    ordered_json j;
    ordered_json args = ordered_json::object();
    for (const auto& [i, b] : w.args) {
        args[std::to_string(i)] = hex_bytes(b);
    }
    ordered_json host = ordered_json::object();
    for (const auto& [a, b] : w.host_memory) {
        host[hex_addr(a)] = hex_bytes(b);
    }
    ordered_json globals = ordered_json::object();
    for (const auto& [a, b] : w.globals) {
        globals[hex_addr(a)] = hex_bytes({b});
    }
    ordered_json reads = ordered_json::array();
    for (const auto& r : w.host_reads) {
        reads.push_back({{"pc", r.pc}, {"addr", hex_addr(r.addr)}, {"bytes", hex_bytes(r.bytes)}});
    }
    ordered_json ocalls = ordered_json::array();
    for (const auto& o : w.ocalls) {
        ocalls.push_back({{"pc", o.pc}, {"ret", hex_addr(o.ret)}, {"out", hex_bytes(o.out)}});
    }
    j["args"] = std::move(args);
    j["host_memory"] = std::move(host);
    j["globals"] = std::move(globals);
    j["host_reads"] = std::move(reads);
    j["ocalls"] = std::move(ocalls);
    j["event_value"] = hex_addr(w.event_value);
    return j;
}

Witness witness_from(const ordered_json& j) {
    Witness w;
    for (const auto& [k, v] : j.at("args").items()) {
        w.args[static_cast<unsigned>(std::stoul(k))] = parse_bytes(v.get<std::string>());
    }
    for (const auto& [k, v] : j.at("host_memory").items()) {
        w.host_memory[parse_addr(k)] = parse_bytes(v.get<std::string>());
    }
    for (const auto& [k, v] : j.at("globals").items()) {
        auto b = parse_bytes(v.get<std::string>());
        if (b.size() != 1) {
            throw ReportError("global witness entries are single bytes");
        }
        w.globals[parse_addr(k)] = b[0];
    }
    for (const auto& r : j.at("host_reads")) {
        w.host_reads.push_back({r.at("pc").get<std::uint64_t>(), parse_addr(r.at("addr").get<std::string>()),
                                parse_bytes(r.at("bytes").get<std::string>())});
    }
    for (const auto& o : j.at("ocalls")) {
        w.ocalls.push_back({o.at("pc").get<std::uint64_t>(), parse_addr(o.at("ret").get<std::string>()),
                            parse_bytes(o.at("out").get<std::string>())});
    }
    w.event_value = parse_addr(j.at("event_value").get<std::string>());
    return w;
}

ordered_json finding_json(const Finding& f) {
    ordered_json j;
    j["id"] = f.id;
    j["kind"] = detect::kind_name(f.kind);
    j["pc"] = f.pc;
    j["label"] = f.label;
    j["severity"] = detect::severity_name(f.severity);
    j["confidence"] = detect::confidence_name(f.confidence);
    if (f.reaches_enclave) {
        j["reaches_enclave"] = *f.reaches_enclave;
    }
    if (f.value_controlled) {
        j["value_controlled"] = *f.value_controlled;
    }
    if (f.related_pc) {
        j["related_pc"] = *f.related_pc;
    }
    j["occurrences"] = f.occurrences;
    j["roots"] = f.roots;
    j["controlled"] = f.controlled;
    ordered_json prov = ordered_json::array();
    for (const auto& p : f.provenance) {
        ordered_json e;
        e["label"] = p.label;
        if (p.param) {
            e["param"] = *p.param;
        }
        if (p.offset) {
            e["offset"] = *p.offset;
        }
        if (p.deref_of) {
            e["deref_of"] = *p.deref_of;
        }
        if (p.elided) {
            e["elided"] = *p.elided;
        }
        prov.push_back(std::move(e));
    }
    j["provenance"] = std::move(prov);
    j["constraints"] = f.constraints;
    if (f.witness) {
        j["witness"] = witness_json(*f.witness);
    }
    ordered_json trace = ordered_json::array();
    for (const auto& t : f.trace) {
        ordered_json e{{"pc", t.pc}, {"kind", t.kind}};
        if (t.taken) {
            e["taken"] = *t.taken;
        }
        if (t.hook) {
            e["hook"] = *t.hook;
        }
        trace.push_back(std::move(e));
    }
    j["trace"] = std::move(trace);
    return j;
}

template <class T>
std::optional<T> opt(const ordered_json& j, const char* key) {
    if (!j.contains(key)) {
        return std::nullopt;
    }
    return j.at(key).get<T>();
}

Finding finding_from(const ordered_json& j, unsigned ecall, const std::string& ecall_name) {
    Finding f;
    f.id = j.at("id").get<std::string>();
    auto kind = detect::parse_kind(j.at("kind").get<std::string>());
    auto sev = detect::parse_severity(j.at("severity").get<std::string>());
    auto conf = detect::parse_confidence(j.at("confidence").get<std::string>());
    if (!kind || !sev || !conf) {
        throw ReportError("bad finding kind, severity or confidence in " + f.id);
    }
    f.kind = *kind;
    f.severity = *sev;
    f.confidence = *conf;
    f.ecall = ecall;
    f.ecall_name = ecall_name;
    f.pc = j.at("pc").get<std::uint64_t>();
    f.label = j.at("label").get<std::string>();
    f.reaches_enclave = opt<bool>(j, "reaches_enclave");
    f.value_controlled = opt<bool>(j, "value_controlled");
    f.related_pc = opt<std::uint64_t>(j, "related_pc");
    f.occurrences = j.at("occurrences").get<std::uint64_t>();
    f.roots = j.at("roots").get<unsigned>();
    f.controlled = j.at("controlled").get<std::string>();
    for (const auto& e : j.at("provenance")) {
        ProvenanceEntry p;
        p.label = e.at("label").get<std::string>();
        p.param = opt<std::uint32_t>(e, "param");
        p.offset = opt<std::uint32_t>(e, "offset");
        p.deref_of = opt<std::string>(e, "deref_of");
        p.elided = opt<std::uint64_t>(e, "elided");
        f.provenance.push_back(std::move(p));
    }
    f.constraints = j.at("constraints").get<std::vector<std::string>>();
    if (j.contains("witness")) {
        f.witness = witness_from(j.at("witness"));
    }
    for (const auto& e : j.at("trace")) {
        detect::TraceEntry t;
        t.pc = e.at("pc").get<std::uint64_t>();
        t.kind = e.at("kind").get<std::string>();
        t.taken = opt<bool>(e, "taken");
        t.hook = opt<std::string>(e, "hook");
        f.trace.push_back(std::move(t));
    }
    return f;
}

ordered_json limits_json(const exec::Limits& l) {
    return ordered_json{{"max_steps", l.max_steps},
                        {"max_states", l.max_states},
                        {"max_fork_depth", l.max_fork_depth},
                        {"loop_bound", l.loop_bound},
                        {"solver_budget", l.solver_budget},
                        {"timeout_ms", static_cast<std::uint64_t>(l.timeout.count())},
                        {"max_jump_targets", l.max_jump_targets}};
}

exec::Limits limits_from(const ordered_json& j) {
    exec::Limits l;
    l.max_steps = j.at("max_steps").get<std::uint64_t>();
    l.max_states = j.at("max_states").get<std::uint64_t>();
    l.max_fork_depth = j.at("max_fork_depth").get<unsigned>();
    l.loop_bound = j.at("loop_bound").get<unsigned>();
    l.solver_budget = j.at("solver_budget").get<std::uint64_t>();
    l.timeout = std::chrono::milliseconds(j.at("timeout_ms").get<std::uint64_t>());
    l.max_jump_targets = j.at("max_jump_targets").get<unsigned>();
    return l;
}

} // namespace

std::string to_json(const Report& r, int indent) {
    ordered_json j;
    j["tool_version"] = r.tool_version;
    j["package"] = r.package;
    j["seed"] = r.seed;
    j["limits"] = limits_json(r.limits);
    ordered_json ecalls = ordered_json::array();
    for (const auto& e : r.ecalls) {
        ordered_json ej;
        ej["index"] = e.index;
        ej["name"] = e.name;
        ej["stats"] = {{"states_created", e.stats.states_created},
                       {"states_completed", e.stats.states_completed},
                       {"truncations", e.stats.truncations},
                       {"steps", e.stats.steps},
                       {"solver_unknowns", e.stats.solver_unknowns},
                       {"elapsed_ms", e.stats.elapsed_ms}};
        ordered_json fs = ordered_json::array();
        for (const auto& f : e.findings) {
            fs.push_back(finding_json(f));
        }
        ej["findings"] = std::move(fs);
        ecalls.push_back(std::move(ej));
    }
    j["ecalls"] = std::move(ecalls);
    return j.dump(indent) + "\n";
}

Report from_json(const std::string& text) {
    Report r;
    try {
        ordered_json j = ordered_json::parse(text);
        r.tool_version = j.at("tool_version").get<std::string>();
        r.package = j.at("package").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.limits = limits_from(j.at("limits"));
        for (const auto& ej : j.at("ecalls")) {
            EcallSection s;
            s.index = ej.at("index").get<unsigned>();
            s.name = ej.at("name").get<std::string>();
            const auto& st = ej.at("stats");
            s.stats.states_created = st.at("states_created").get<std::uint64_t>();
            s.stats.states_completed = st.at("states_completed").get<std::uint64_t>();
            s.stats.truncations = st.at("truncations").get<std::uint64_t>();
            s.stats.steps = st.at("steps").get<std::uint64_t>();
            s.stats.solver_unknowns = st.at("solver_unknowns").get<std::uint64_t>();
            s.stats.elapsed_ms = st.at("elapsed_ms").get<std::uint64_t>();
            for (const auto& fj : ej.at("findings")) {
                s.findings.push_back(finding_from(fj, s.index, s.name));
            }
            r.ecalls.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ReportError(std::string("malformed report: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ReportError(std::string("malformed report: ") + e.what());
    }
    return r;
}

} // namespace esx::report
