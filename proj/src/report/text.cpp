#include <sstream>

#include "esx/report/report.hpp"

namespace esx::report {

using detect::Finding;

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::string bytes_hex(const std::vector<std::uint8_t>& b) {
    std::ostringstream os;
    os << std::hex;
    for (auto x : b) {
        os << (x < 16 ? "0" : "") << static_cast<unsigned>(x);
    }
    return os.str();
}

std::string provenance_line(const detect::ProvenanceEntry& p) {
    std::string s = p.label;
    if (p.elided) {
        return "... " + std::to_string(*p.elided) + " more";
    }
    if (p.param) {
        s += " param=" + std::to_string(*p.param);
    }
    if (p.offset) {
        s += " offset=" + std::to_string(*p.offset);
    }
    if (p.deref_of) {
        s += " of " + *p.deref_of;
    }
    return s;
}

void witness_text(std::ostream& os, const detect::Witness& w, const std::string& pad) {
    for (const auto& [i, b] : w.args) {
        os << pad << "arg " << i << ": " << bytes_hex(b) << "\n";
    }
    for (const auto& r : w.host_reads) {
        os << pad << "host " << hex(r.addr) << " @" << hex(r.pc) << ": " << bytes_hex(r.bytes) << "\n";
    }
    for (const auto& [a, b] : w.globals) {
        if (b != 0) {
            os << pad << "global " << hex(a) << ": " << bytes_hex({b}) << "\n";
        }
    }
    for (const auto& o : w.ocalls) {
        os << pad << "ocall @" << hex(o.pc) << " -> " << hex(o.ret);
        if (!o.out.empty()) {
            os << " out " << bytes_hex(o.out);
        }
        os << "\n";
    }
    os << pad << "event value: " << hex(w.event_value) << "\n";
}

void finding_header(std::ostream& os, const Finding& f) {
    os << "[" << f.id << "] " << detect::kind_name(f.kind) << " " << detect::severity_name(f.severity) << " ("
       << detect::confidence_name(f.confidence) << ") at " << hex(f.pc) << " <" << f.label << ">";
    if (f.occurrences > 1) {
        os << " x" << f.occurrences;
    }
    os << "\n";
}

} // namespace

std::size_t Report::finding_count() const {
    std::size_t n = 0;
    for (const auto& e : ecalls) {
        n += e.findings.size();
    }
    return n;
}

const Finding* Report::find(const std::string& id) const {
    for (const auto& e : ecalls) {
        for (const auto& f : e.findings) {
            if (f.id == id) {
                return &f;
            }
        }
    }
    return nullptr;
}

std::vector<detect::ProvenanceEntry> flatten_provenance(const std::vector<detect::ProvenanceEntry>& chain,
                                                        bool verbose) {
    if (verbose || chain.size() <= kMaxProvenance) {
        return chain;
    }
    std::vector<detect::ProvenanceEntry> out(chain.begin(), chain.begin() + (kMaxProvenance - 1));
    detect::ProvenanceEntry marker;
    marker.label = "elided";
    marker.elided = chain.size() - (kMaxProvenance - 1);
    out.push_back(std::move(marker));
    return out;
}

Report build_report(const loader::EnclavePackage& pkg, const std::vector<driver::EcallResult>& results,
                    const exec::Limits& limits, std::uint64_t seed, bool verbose_provenance) {
    Report r;
    r.package = pkg.name;
    r.seed = seed;
    r.limits = limits;
    for (const auto& res : results) {
        EcallSection s{res.index, res.name, res.stats, res.findings};
        for (auto& f : s.findings) {
            f.provenance = flatten_provenance(f.provenance, verbose_provenance);
        }
        r.ecalls.push_back(std::move(s));
    }
    return r;
}

std::string to_text(const Report& r) {
    std::ostringstream os;
    os << "package " << r.package << " (seed " << r.seed << ")\n";
    for (const auto& e : r.ecalls) {
        const auto& st = e.stats;
        os << "\necall " << e.index << " " << e.name << ": " << e.findings.size() << " finding(s); states "
           << st.states_created << " created, " << st.states_completed << " completed, " << st.truncations
           << " truncated; " << st.steps << " steps; " << st.solver_unknowns << " solver unknowns\n";
        for (const auto& f : e.findings) {
            os << "  ";
            finding_header(os, f);
            if (f.reaches_enclave) {
                os << "    reaches enclave: " << (*f.reaches_enclave ? "yes" : "no")
                   << ", value controlled: " << (f.value_controlled.value_or(false) ? "yes" : "no") << "\n";
            }
            if (f.related_pc) {
                os << "    first read at " << hex(*f.related_pc) << "\n";
            }
            os << "    controlled: " << f.controlled << "\n";
            for (const auto& p : f.provenance) {
                os << "    <- " << provenance_line(p) << "\n";
            }
            if (f.witness) {
                witness_text(os, *f.witness, "    ");
            }
        }
    }
    return os.str();
}

std::string explain(const Report& r, const std::string& id) {
    const Finding* f = r.find(id);
    if (!f) {
        throw ReportError("unknown finding id '" + id + "'");
    }
    std::ostringstream os;
    finding_header(os, *f);
    os << "ecall " << f->ecall << " " << f->ecall_name << "\n";
    os << "controlled expression: " << f->controlled << "\n";
    os << "\n== trace (" << f->trace.size() << " steps) ==\n";
    for (std::size_t i = 0; i < f->trace.size(); ++i) {
        const auto& t = f->trace[i];
        os << "  " << i << "  " << hex(t.pc) << "  " << t.kind;
        if (t.taken) {
            os << (*t.taken ? " taken" : " not-taken");
        }
        if (t.hook) {
            os << " " << *t.hook;
        }
        if (t.kind == "concretized") {
            os << "  <- address or size pinned to one value";
        }
        os << "\n";
    }
    os << "\n== provenance ==\n";
    for (const auto& p : f->provenance) {
        os << "  " << provenance_line(p) << "\n";
    }
    os << "\n== constraints (" << f->constraints.size() << ") ==\n";
    for (const auto& c : f->constraints) {
        os << "  " << c << "\n";
    }
    os << "\n== witness ==\n";
    if (f->witness) {
        witness_text(os, *f->witness, "  ");
    } else {
        os << "  none (solver gave up)\n";
    }
    return os.str();
}

} // namespace esx::report
