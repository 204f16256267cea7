#include <catch_amalgamated.hpp>

#include "esx/driver/analyze.hpp"
#include "esx/driver/corpus.hpp"
#include "esx/eir/program.hpp"
#include "esx/report/report.hpp"
#include "support/package.hpp"

using namespace esx;
using detect::Finding;
using report::Report;

namespace {

const std::filesystem::path kCorpus = ESX_CORPUS_DIR;

Report analyze_report(const loader::EnclavePackage& pkg, bool verbose = false) {
    driver::AnalyzeOptions opts;
    return report::build_report(pkg, driver::analyze_package(pkg, opts), opts.limits, opts.seed, verbose);
}

struct Corpus {
    std::vector<std::pair<loader::EnclavePackage, Report>> items;
};

const Corpus& corpus() {
    static const Corpus c = [] {
        Corpus out;
        for (const auto& dir : driver::corpus_packages(kCorpus)) {
            auto pkg = loader::load_package(dir);
            Report r = analyze_report(pkg);
            out.items.emplace_back(std::move(pkg), std::move(r));
        }
        return out;
    }();
    return c;
}

const std::pair<loader::EnclavePackage, Report>& corpus_item(const std::string& name) {
    for (const auto& it : corpus().items) {
        if (it.first.name == name) {
            return it;
        }
    }
    FAIL("no corpus package " << name);
    throw std::logic_error("unreachable");
}

std::vector<detect::ProvenanceEntry> chain(std::size_t n) {
    std::vector<detect::ProvenanceEntry> c;
    for (std::size_t i = 0; i < n; ++i) {
        detect::ProvenanceEntry e;
        e.label = "deref-of";
        e.deref_of = "a" + std::to_string(i);
        c.push_back(e);
    }
    return c;
}

} // namespace

TEST_CASE("corpus programs round-trip through the disassembler") {
    for (const auto& [pkg, r] : corpus().items) {
        INFO(pkg.name);
        CHECK(eir::assemble(eir::disassemble(pkg.program)) == pkg.program);
        CHECK(eir::validate(pkg.program).empty());
    }
}

TEST_CASE("corpus tables") {
    const auto& gmp = corpus_item("gmp_add").first;
    REQUIRE(gmp.ecalls.size() == 1);
    CHECK(gmp.ecalls[0].name == "e_mpz_add");
    CHECK(gmp.program.find("e_mpz_add") != nullptr);
    REQUIRE(gmp.ecalls[0].params.size() == 3);
    for (const auto& p : gmp.ecalls[0].params) {
        CHECK(p.kind == loader::ParamKind::UserCheck);
    }
    auto wolf = loader::ecall_table(corpus_item("wolfssl_like").first);
    REQUIRE(wolf.size() == 3);
    CHECK(wolf[0].name == "e_wolfssl_new");
    CHECK(wolf[1].name == "e_wolfssl_use_key");
    CHECK(wolf[2].name == "e_wolfssl_connect");
    auto sig = loader::ecall_table(corpus_item("signal_like").first);
    REQUIRE(sig.size() == 2);
    for (const auto& e : sig) {
        for (const auto& p : e.params) {
            CHECK(p.kind == loader::ParamKind::Value);
        }
    }
}

TEST_CASE("JSON round trip is lossless") {
    for (const auto& [pkg, r] : corpus().items) {
        INFO(pkg.name);
        std::string text = report::to_json(r);
        Report back = report::from_json(text);
        CHECK(back == r);
        CHECK(report::to_json(back) == text);
    }
}

TEST_CASE("gmp_add report shape") {
    const Report& r = corpus_item("gmp_add").second;
    REQUIRE(r.ecalls.size() == 1);
    REQUIRE(r.ecalls[0].findings.size() == 1);
    const Finding& f = r.ecalls[0].findings[0];
    CHECK(f.kind == detect::FindingKind::ControlledWrite);
    CHECK(f.reaches_enclave == true);
    CHECK(f.value_controlled == true);
    bool arg0 = false;
    for (const auto& p : f.provenance) {
        arg0 = arg0 || (p.label == "ecall-arg" && p.param == 0u);
    }
    CHECK(arg0);
    std::string json = report::to_json(r);
    CHECK(json.find("\"kind\": \"controlled-write\"") != std::string::npos);
    CHECK(json.find("\"label\": \"ecall-arg\"") != std::string::npos);
}

TEST_CASE("empty findings keep full stats") {
    const Report& r = corpus_item("signal_like").second;
    CHECK(r.finding_count() == 0);
    REQUIRE(r.ecalls.size() == 2);
    for (const auto& e : r.ecalls) {
        CHECK(e.findings.empty());
        CHECK(e.stats.states_created >= 1);
        CHECK(e.stats.steps > 0);
    }
    std::string json = report::to_json(r);
    CHECK(json.find("\"findings\": []") != std::string::npos);
    CHECK(json.find("\"states_completed\"") != std::string::npos);
}

TEST_CASE("malformed reports are rejected") {
    CHECK_THROWS_AS(report::from_json("{"), report::ReportError);
    CHECK_THROWS_AS(report::from_json("{}"), report::ReportError);
    std::string good = report::to_json(corpus_item("gmp_add").second);
    std::string bad = good;
    bad.replace(bad.find("controlled-write"), 16, "controlled-read!");
    CHECK_THROWS_AS(report::from_json(bad), report::ReportError);
}

TEST_CASE("provenance chains are flattened to 16 entries") {
    auto flat = report::flatten_provenance(chain(20), false);
    REQUIRE(flat.size() == report::kMaxProvenance);
    CHECK(flat.back().label == "elided");
    CHECK(flat.back().elided == 5u);
    CHECK(flat[14].deref_of == "a14");
    CHECK(report::flatten_provenance(chain(20), true).size() == 20);
    CHECK(report::flatten_provenance(chain(16), false).size() == 16);
    CHECK_FALSE(report::flatten_provenance(chain(16), false).back().elided);
}

TEST_CASE("deep dereference chains are elided unless verbose") {
    std::string src = "e:\n    load.8 r1, [r0]\n";
    for (int i = 0; i < 12; ++i) {
        src += "    load.8 r1, [r1]\n";
    }
    src += "site:\n    callr r1\n    ret\n";
    auto pkg = testing::make_package(src, "e", R"([{"name": "p", "kind": "user_check"}])");
    Report brief = analyze_report(pkg);
    Report full = analyze_report(pkg, true);
    REQUIRE(brief.finding_count() == 1);
    const auto& bp = brief.ecalls[0].findings[0].provenance;
    const auto& fp = full.ecalls[0].findings[0].provenance;
    CHECK(fp.size() > report::kMaxProvenance);
    REQUIRE(bp.size() == report::kMaxProvenance);
    CHECK(*bp.back().elided == fp.size() - (report::kMaxProvenance - 1));
}

TEST_CASE("text digest and explain") {
    const Report& r = corpus_item("wolfssl_like").second;
    std::string text = report::to_text(r);
    CHECK(text.find("controlled-jump high") != std::string::npos);
    CHECK(text.find("ssl_send_cb") != std::string::npos);
    CHECK(text.find("ecall-arg param=0") != std::string::npos);

    std::string ex = report::explain(r, "2.1");
    for (const char* section : {"== trace", "== provenance ==", "== constraints", "== witness =="}) {
        CHECK(ex.find(section) != std::string::npos);
    }
    // the session field read is pinned to one enclave address
    CHECK(ex.find("concretized") != std::string::npos);
    CHECK_THROWS_AS(report::explain(r, "7.7"), report::ReportError);
}

TEST_CASE("every exact corpus finding replays") {
    std::size_t confirmed = 0, exact = 0;
    for (const auto& [pkg, r] : corpus().items) {
        for (const auto& e : r.ecalls) {
            for (const auto& f : e.findings) {
                if (f.confidence != detect::Confidence::Exact) {
                    continue;
                }
                ++exact;
                auto res = report::replay_witness(pkg, f);
                if (std::holds_alternative<report::Confirmed>(res)) {
                    ++confirmed;
                } else {
                    FAIL_CHECK(pkg.name << " " << f.id << ": " << std::get<report::Diverged>(res).reason);
                }
            }
        }
    }
    CHECK(exact > 0);
    CHECK(confirmed == exact);
}

TEST_CASE("replay negative controls") {
    const auto& [pkg, r] = corpus_item("gmp_add");
    Finding f = r.ecalls[0].findings[0];
    REQUIRE(f.witness);
    SECTION("a flipped argument byte diverges") {
        f.witness->args.at(0)[0] ^= 0xff;
        CHECK(std::holds_alternative<report::Diverged>(report::replay_witness(pkg, f)));
    }
    SECTION("a flipped host byte moves the write") {
        auto& last = f.witness->host_reads.back();
        last.bytes[2] ^= 0x01;
        auto res = report::replay_witness(pkg, f);
        REQUIRE(std::holds_alternative<report::Diverged>(res));
        CHECK(std::get<report::Diverged>(res).reason.find("witness address") != std::string::npos);
    }
    SECTION("no witness is a precondition error") {
        f.witness.reset();
        CHECK_THROWS_AS(report::replay_witness(pkg, f), std::invalid_argument);
    }
    SECTION("a wrong branch direction diverges") {
        const auto& [tpkg, tr] = corpus_item("rust_tls_like");
        Finding g = tr.ecalls[0].findings[0];
        g.witness->args.at(0).assign(8, 0); // null session takes the reject branch
        auto res = report::replay_witness(tpkg, g);
        REQUIRE(std::holds_alternative<report::Diverged>(res));
    }
}
