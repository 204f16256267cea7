#include <catch_amalgamated.hpp>

#include "esx/detect/detectors.hpp"
#include "esx/exec/explorer.hpp"
#include "esx/sgx/model.hpp"
#include "support/grid.hpp"
#include "support/package.hpp"

using namespace esx;
using namespace esx::exec;
using symx::Expr;
using symx::LabelKind;

namespace {

std::vector<State> explore(const loader::EnclavePackage& pkg, State s) {
    std::size_t faults = 0;
    auto ends = testing::explore_all(pkg, std::move(s), &faults);
    CHECK(faults == 0);
    return ends;
}

using testing::grid_package;
using testing::probe_state;
constexpr std::uint64_t kEnc = testing::kGridEnclave;

Expr c64(std::uint64_t v) { return symx::mk_const(64, v); }

std::size_t count_kind(const Expr& e, LabelKind k) {
    std::size_t n = 0;
    for (const auto& l : e.labels().items()) {
        n += l.kind == k;
    }
    return n;
}

} // namespace

TEST_CASE("SDK checks follow the tri-state truth table on the 16-byte grid") {
    auto pkg = grid_package();
    std::size_t mismatches = 0, cases = 0;
    for (int len = 1; len <= 16; ++len) {
        for (int off = -16; off <= 16; ++off) {
            ++cases;
            const long lo = off, hi = off + len; // relative to the enclave base, enclave is [0, 16)
            const bool within = lo >= 0 && hi <= 16;
            const bool outside = hi <= 0 || lo >= 16;
            auto ends = explore(pkg, probe_state(pkg, c64(kEnc + off), c64(len)));
            if (ends.size() != 1 || !ends[0].regs[4].is_const() || !ends[0].regs[0].is_const() ||
                ends[0].regs[4].value() != within || ends[0].regs[0].value() != outside) {
                ++mismatches;
                UNSCOPED_INFO("len " << len << " off " << off);
            }
            if (!within && !outside) {
                // Overlap: neither check passes.
                CHECK((ends.size() == 1 && ends[0].regs[4].value() == 0 && ends[0].regs[0].value() == 0));
            }
        }
    }
    CHECK(cases == 16 * 33);
    CHECK(mismatches == 0);
}

TEST_CASE("a symbolic address splits each check") {
    auto pkg = grid_package();
    Expr a = symx::mk_sym(64, {}, "a");
    auto ends = explore(pkg, probe_state(pkg, a, c64(8)));
    // within -> (1, 0); not within -> outside or overlap
    std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
    for (const auto& s : ends) {
        seen.insert({s.regs[4].value(), s.regs[0].value()});
    }
    CHECK(seen == std::set<std::pair<std::uint64_t, std::uint64_t>>{{1, 0}, {0, 1}, {0, 0}});
    CHECK(ends.size() == 3);
}

TEST_CASE("SDK check examples") {
    auto pkg = grid_package();
    SECTION("the enclave base with size 8 is within only") {
        auto ends = explore(pkg, probe_state(pkg, c64(kEnc), c64(8)));
        REQUIRE(ends.size() == 1);
        CHECK(ends[0].regs[4].value() == 1);
        CHECK(ends[0].regs[0].value() == 0);
    }
    SECTION("an object ending one byte inside is neither") {
        auto ends = explore(pkg, probe_state(pkg, c64(kEnc - 7), c64(8)));
        REQUIRE(ends.size() == 1);
        CHECK(ends[0].regs[4].value() == 0);
        CHECK(ends[0].regs[0].value() == 0);
    }
    SECTION("a host range is outside only") {
        auto ends = explore(pkg, probe_state(pkg, c64(0x50000), c64(64)));
        REQUIRE(ends.size() == 1);
        CHECK(ends[0].regs[4].value() == 0);
        CHECK(ends[0].regs[0].value() == 1);
    }
    SECTION("size zero is outside, never within") {
        auto ends = explore(pkg, probe_state(pkg, c64(kEnc + 4), c64(0)));
        REQUIRE(ends.size() == 1);
        CHECK(ends[0].regs[4].value() == 0);
        CHECK(ends[0].regs[0].value() == 1);
    }
}

TEST_CASE("marshalling isolates buffers and labels every slot root") {
    auto pkg = testing::make_package("e:\n    ret\n", "e", R"([
        {"name": "v", "kind": "value", "width": 32},
        {"name": "p", "kind": "user_check"},
        {"name": "in", "kind": "ptr_in", "size": 24},
        {"name": "out", "kind": "ptr_out", "size": 8},
        {"name": "io", "kind": "ptr_inout", "size_param": "n", "max_size": 64},
        {"name": "n", "kind": "value", "width": 16}
    ])");
    symx::SymbolScope scope(1);
    symx::Solver solver;
    State s = sgx::init_state(pkg, pkg.ecalls[0], mem::MemoryEnv::from_package(pkg), solver);
    REQUIRE(s.args);
    const auto& args = *s.args;
    REQUIRE(args.slots.size() == 6);

    std::vector<loader::Range> regions{{args.struct_base, 8 * 6}};
    for (const auto& slot : args.slots) {
        CHECK(slot.slot_addr % 8 == 0);
        CHECK(slot.slot_addr == args.struct_base + 8 * slot.index);
        if (slot.buffer) {
            CHECK(pkg.layout.heap.contains(loader::Range{*slot.buffer, slot.buffer_size}));
            regions.push_back({*slot.buffer, slot.buffer_size});
        }
    }
    CHECK(pkg.layout.heap.contains(regions[0]));
    for (std::size_t i = 0; i < regions.size(); ++i) {
        for (std::size_t j = i + 1; j < regions.size(); ++j) {
            CHECK_FALSE(regions[i].overlaps(regions[j]));
        }
    }

    for (const auto& slot : args.slots) {
        for (const auto& root : slot.roots) {
            REQUIRE(count_kind(root, LabelKind::EcallArg) == 1);
            for (const auto& l : root.labels().items()) {
                if (l.kind == LabelKind::EcallArg) {
                    CHECK(l.param == slot.index);
                }
            }
        }
    }
    CHECK(args.slots[0].roots.size() == 1);
    CHECK(args.slots[0].roots[0].width() == 32);
    CHECK(args.slots[1].roots[0].width() == 64);
    CHECK(args.slots[2].roots.size() == 24);
    CHECK(args.slots[3].roots.empty());
    // the symbolic size is pinned to its least feasible value
    REQUIRE(args.concretized_sizes.count(4));
    CHECK(args.concretized_sizes.at(4) == 1);
    CHECK(args.slots[4].buffer_size == 1);

    // user_check slot holds the raw symbol; ptr_out bytes are zero
    Expr slot1 = s.memory.load_enclave(args.slots[1].slot_addr, 8);
    CHECK(slot1 == args.slots[1].roots[0]);
    Expr out = s.memory.load_enclave(*args.slots[3].buffer, 8);
    REQUIRE(out.is_const());
    CHECK(out.value() == 0);
    Expr in0 = s.memory.load_enclave(*args.slots[2].buffer, 1);
    CHECK(in0 == args.slots[2].roots[0]);
    CHECK(s.regs[0].value() == args.struct_base);
}

namespace {

loader::EnclavePackage summary_package(const std::string& body, const std::string& params) {
    return testing::make_package(".extern memcpy\n.extern memset\n.extern malloc\n.extern free\n.extern oc\n"
                                 ".extern oc_out\n.global g_buf 0x10001000 32\ne:\n" +
                                     body,
                                 "e", params,
                                 R"({"memcpy": "memcpy", "memset": "memset", "malloc": "malloc", "free": "free",
                                     "oc": "ocall",
                                     "oc_out": {"builtin": "ocall", "out_buffer": {"param_reg": 0, "size_reg": 1}}})");
}

std::vector<State> run_summary(const loader::EnclavePackage& pkg) {
    symx::SymbolScope scope(1);
    symx::Solver solver;
    return explore(pkg, sgx::init_state(pkg, pkg.ecalls[0], mem::MemoryEnv::from_package(pkg), solver));
}

} // namespace

TEST_CASE("memcpy from a user_check source yields host bytes rooted in the argument") {
    auto pkg = summary_package(R"(
    load.8 r1, [r0]
    const r0, g_buf
    const r2, 4
    call memcpy
    halt
)",
                               R"([{"name": "src", "kind": "user_check"}])");
    auto ends = run_summary(pkg);
    REQUIRE(ends.size() == 1);
    for (unsigned i = 0; i < 4; ++i) {
        Expr b = ends[0].memory.load_enclave(0x10001000 + i, 1);
        CHECK_FALSE(b.is_const());
        CHECK(count_kind(b, LabelKind::HostMemory) == 1);
        CHECK(detect::roots_of(b) == (detect::kRootArg | detect::kRootHost));
    }
    CHECK(ends[0].memory.load_enclave(0x10001004, 1).labels().contains(LabelKind::GlobalState));
}

TEST_CASE("memset writes constant bytes") {
    auto pkg = summary_package(R"(
    const r0, g_buf
    const r1, 0
    const r2, 8
    call memset
    halt
)",
                               "[]");
    auto ends = run_summary(pkg);
    REQUIRE(ends.size() == 1);
    Expr v = ends[0].memory.load_enclave(0x10001000, 8);
    REQUIRE(v.is_const());
    CHECK(v.value() == 0);
}

TEST_CASE("malloc returns disjoint enclave ranges") {
    auto pkg = summary_package(R"(
    const r0, 16
    call malloc
    mov r5, r0
    const r0, 16
    call malloc
    mov r6, r0
    call free
    halt
)",
                               "[]");
    auto ends = run_summary(pkg);
    REQUIRE(ends.size() == 1);
    const auto& r = ends[0].regs;
    REQUIRE(r[5].is_const());
    REQUIRE(r[6].is_const());
    CHECK(pkg.layout.heap.contains(loader::Range{r[5].value(), 16}));
    CHECK(pkg.layout.heap.contains(loader::Range{r[6].value(), 16}));
    CHECK_FALSE(loader::Range{r[5].value(), 16}.overlaps(loader::Range{r[6].value(), 16}));
    CHECK(r[5].labels().contains(LabelKind::EnclaveAlloc));
}

TEST_CASE("ocalls return fresh host values and havoc declared out buffers") {
    auto pkg = summary_package(R"(
    call oc
    mov r5, r0
    call oc
    mov r6, r0
    const r0, g_buf
    const r1, 8
    call oc_out
    halt
)",
                               "[]");
    auto ends = run_summary(pkg);
    REQUIRE(ends.size() == 1);
    auto& s = ends[0];
    CHECK_FALSE(s.regs[5].is_const());
    CHECK_FALSE(s.regs[5] == s.regs[6]);
    CHECK(s.regs[5].labels().contains(LabelKind::HostMemory));
    REQUIRE(s.ocalls.size() == 3);
    CHECK(s.ocalls[0].out_bytes.empty());
    REQUIRE(s.ocalls[2].out_bytes.size() == 8);
    CHECK(s.ocalls[2].out_addr == 0x10001000);
    for (unsigned i = 0; i < 8; ++i) {
        Expr b = s.memory.load_enclave(0x10001000 + i, 1);
        CHECK(b == s.ocalls[2].out_bytes[i]);
        CHECK(b.labels().contains(LabelKind::HostMemory));
    }
    // beyond the declared size memory is untouched
    CHECK(s.memory.load_enclave(0x10001008, 1).labels().contains(LabelKind::GlobalState));
}

TEST_CASE("unknown builtin ids are rejected") {
    CHECK_THROWS_AS(sgx::builtin_hook("strcpy"), std::invalid_argument);
}
