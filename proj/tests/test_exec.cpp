#include <catch_amalgamated.hpp>

#include "esx/exec/explorer.hpp"
#include "esx/sgx/model.hpp"
#include "support/package.hpp"

using namespace esx;
using namespace esx::exec;
using symx::Expr;

namespace {

struct PathEnd {
    Termination term;
    Expr r0;
    std::vector<Expr> constraints;
    std::vector<TraceStep> trace;
};

struct Recorder : EventSink {
    std::vector<PathEnd> ends;
    std::vector<Expr> jumps;
    bool flag_jumps = false;

    bool on_jump(const State&, const Expr& target, symx::Solver&) override {
        jumps.push_back(target);
        return flag_jumps;
    }
    void on_path_end(const State& s, const Termination& t, symx::Solver&) override {
        ends.push_back({t, s.regs[0], s.constraints, s.trace.to_vector()});
    }
};

// Checks every fork: children extend the parent by cond / not cond and are
// each satisfiable.
struct ForkAudit : Observer {
    std::size_t forks = 0, bad = 0, terminated = 0;

    void on_fork(const std::vector<Expr>& parent, const Expr& cond, const State& taken,
                 const State& other) override {
        ++forks;
        auto extends = [&](const State& s, const Expr& c) {
            if (s.constraints.size() != parent.size() + 1 || !(s.constraints.back() == c)) {
                return false;
            }
            for (std::size_t i = 0; i < parent.size(); ++i) {
                if (!(s.constraints[i] == parent[i])) {
                    return false;
                }
            }
            return symx::is_sat_verdict(symx::is_sat(s.constraints, symx::mk_true()));
        };
        if (!extends(taken, cond) || !extends(other, symx::bnot(cond))) {
            ++bad;
        }
    }
    void on_terminate(const State&, const Termination&) override { ++terminated; }
};

struct Run {
    loader::EnclavePackage pkg;
    Recorder rec;
    ForkAudit audit;
    Stats stats;
};

void run(Run& r, const Limits& limits = {}) {
    symx::SymbolScope scope(1);
    symx::Solver setup;
    auto env = mem::MemoryEnv::from_package(r.pkg);
    State s = sgx::init_state(r.pkg, r.pkg.ecalls[0], env, setup);
    HookRegistry hooks = sgx::make_hooks(r.pkg);
    Explorer ex(r.pkg, hooks, limits, r.rec, &r.audit);
    r.stats = ex.run(std::move(s));
}

std::size_t count(const Recorder& rec, EndKind k) {
    std::size_t n = 0;
    for (const auto& e : rec.ends) {
        n += e.term.kind == k;
    }
    return n;
}

} // namespace

TEST_CASE("straight-line code computes concrete results") {
    Run r{testing::make_package(R"(
e:
    const r1, 6
    const r2, 7
    mul r3, r1, r2
    const r4, 2
    sub r0, r3, r4
    ult r5, r4, r3
    add r0, r0, r5
    ret
)", "e")};
    run(r);
    REQUIRE(r.rec.ends.size() == 1);
    CHECK(r.rec.ends[0].term.kind == EndKind::Exit);
    REQUIRE(r.rec.ends[0].r0.is_const());
    CHECK(r.rec.ends[0].r0.value() == 41);
    CHECK(r.stats.states_created == 1);
    CHECK(r.stats.states_completed == 1);
    CHECK(r.stats.steps == 8);
}

TEST_CASE("a symbolic branch forks into both directions") {
    Run r{testing::make_package(R"(
e:
    load.8 r1, [r0]
    const r2, 10
    ult r3, r1, r2
    br r3, small, big
small:
    const r0, 1
    ret
big:
    const r0, 2
    ret
)", "e", R"([{"name": "x", "kind": "value", "width": 64}])")};
    run(r);
    REQUIRE(r.rec.ends.size() == 2);
    CHECK(count(r.rec, EndKind::Exit) == 2);
    CHECK(r.audit.forks == 1);
    CHECK(r.audit.bad == 0);
    CHECK(r.audit.terminated == 2);
    std::set<std::uint64_t> results;
    for (const auto& e : r.rec.ends) {
        results.insert(e.r0.value());
        CHECK(e.constraints.size() == 1);
        bool saw_branch = false;
        for (const auto& t : e.trace) {
            saw_branch = saw_branch || t.kind == StepKind::Branch;
        }
        CHECK(saw_branch);
    }
    CHECK(results == std::set<std::uint64_t>{1, 2});
}

TEST_CASE("an infeasible side adds no constraint") {
    Run r{testing::make_package(R"(
e:
    load.8 r1, [r0]
    const r2, 0xff
    and r1, r1, r2
    const r2, 0x100
    ult r3, r1, r2
    br r3, yes, no
yes:
    ret
no:
    halt
)", "e", R"([{"name": "x", "kind": "value", "width": 64}])")};
    run(r);
    REQUIRE(r.rec.ends.size() == 1);
    CHECK(r.rec.ends[0].term.kind == EndKind::Exit);
    CHECK(r.rec.ends[0].constraints.empty());
    CHECK(r.audit.forks == 0);
}

TEST_CASE("call and ret go through the stack") {
    Run r{testing::make_package(R"(
e:
    const r0, 5
    call double
    call double
    ret
double:
    add r0, r0, r0
    ret
)", "e")};
    run(r);
    REQUIRE(r.rec.ends.size() == 1);
    CHECK(r.rec.ends[0].term.kind == EndKind::Exit);
    CHECK(r.rec.ends[0].r0.value() == 20);
}

TEST_CASE("halt ends the path as Halt") {
    Run r{testing::make_package("e:\n    halt\n", "e")};
    run(r);
    REQUIRE(r.rec.ends.size() == 1);
    CHECK(r.rec.ends[0].term.kind == EndKind::Halt);
}

TEST_CASE("an overwritten return address is a symbolic jump") {
    Run r{testing::make_package(R"(
e:
    load.8 r1, [r0]
    call f
    ret
f:
    store.8 [r15], r1
    ret
)", "e", R"([{"name": "x", "kind": "value", "width": 64}])")};
    r.rec.flag_jumps = true;
    run(r);
    REQUIRE(r.rec.jumps.size() == 1);
    CHECK_FALSE(r.rec.jumps[0].is_const());
    REQUIRE(r.rec.ends.size() == 1);
    CHECK(r.rec.ends[0].term.kind == EndKind::Finding);
}

TEST_CASE("a jump constrained to two targets is enumerated, not reported") {
    Run r{testing::make_package(R"(
e:
    load.8 r1, [r0]
    const r2, 1
    and r1, r1, r2
    const r3, f2
    const r4, f1
    sub r3, r3, r4
    mul r1, r1, r3
    add r1, r1, r4
    jmpr r1
f1:
    const r0, 11
    ret
f2:
    const r0, 22
    ret
)", "e", R"([{"name": "x", "kind": "value", "width": 64}])")};
    run(r);
    REQUIRE(r.rec.jumps.size() == 1);
    REQUIRE(r.rec.ends.size() == 2);
    std::set<std::uint64_t> results;
    for (const auto& e : r.rec.ends) {
        CHECK(e.term.kind == EndKind::Exit);
        results.insert(e.r0.value());
    }
    CHECK(results == std::set<std::uint64_t>{11, 22});
    CHECK(r.audit.bad == 0);
}

TEST_CASE("loop bound truncates a symbolic loop") {
    Run r{testing::make_package(R"(
e:
    load.8 r1, [r0]
    const r2, 0
loop:
    ult r3, r2, r1
    br r3, body, done
body:
    const r4, 1
    add r2, r2, r4
    jmp loop
done:
    ret
)", "e", R"([{"name": "n", "kind": "value", "width": 64}])")};
    Limits l;
    l.loop_bound = 5;
    run(r, l);
    CHECK(count(r.rec, EndKind::Exit) == 5);
    CHECK(count(r.rec, EndKind::Truncated) == 1);
    CHECK(r.stats.truncations == 1);
    CHECK(r.audit.bad == 0);
    CHECK(r.audit.terminated == r.rec.ends.size());
}

TEST_CASE("max-steps and max-states truncate") {
    const char* spin = R"(
e:
    jmp e
)";
    Run a{testing::make_package(spin, "e")};
    Limits l;
    l.max_steps = 100;
    l.loop_bound = 1000;
    run(a, l);
    REQUIRE(a.rec.ends.size() == 1);
    CHECK(a.rec.ends[0].term.kind == EndKind::Truncated);
    CHECK(a.rec.ends[0].term.reason == "max-steps");

    Run b{testing::make_package(R"(
e:
    load.8 r1, [r0]
    const r2, 0
loop:
    const r3, 1
    and r4, r1, r3
    lshr r1, r1, r3
    br r4, one, zero
one:
    add r2, r2, r3
zero:
    const r3, 1
    add r5, r5, r3
    const r3, 16
    ult r4, r5, r3
    br r4, loop, out
out:
    ret
)", "e", R"([{"name": "bits", "kind": "value", "width": 64}])")};
    l = Limits{};
    l.max_states = 8;
    run(b, l);
    CHECK(b.stats.states_created == 8);
    CHECK(b.stats.truncations >= 1);
    CHECK(b.audit.terminated == b.rec.ends.size());
    CHECK(b.stats.states_completed + b.stats.truncations == b.rec.ends.size());
}

TEST_CASE("calling an unhooked extern faults the path") {
    Run r{testing::make_package(R"(
.extern mystery
e:
    call mystery
    ret
)", "e")};
    run(r);
    REQUIRE(r.rec.ends.size() == 1);
    CHECK(r.rec.ends[0].term.kind == EndKind::Fault);
    CHECK(r.rec.ends[0].term.reason.find("mystery") != std::string::npos);
}

TEST_CASE("every path ends with exactly one classification") {
    Run r{testing::make_package(R"(
e:
    load.8 r1, [r0]
    load.8 r2, [r0+8]
    const r3, 3
    and r1, r1, r3
    eq r4, r1, r3
    br r4, a, b
a:
    ult r5, r2, r3
    br r5, a1, a2
a1:
    halt
a2:
    ret
b:
    jmpr r2
)", "e", R"([{"name": "x", "kind": "value", "width": 64}, {"name": "t", "kind": "value", "width": 64}])")};
    r.rec.flag_jumps = true;
    run(r);
    CHECK(r.rec.ends.size() == 3);
    CHECK(r.audit.terminated == r.rec.ends.size());
    CHECK(r.stats.states_created == r.rec.ends.size());
    CHECK(r.audit.bad == 0);
    CHECK(count(r.rec, EndKind::Halt) == 1);
    CHECK(count(r.rec, EndKind::Exit) == 1);
    CHECK(count(r.rec, EndKind::Finding) == 1);
}

TEST_CASE("hook registry rejects duplicates and unknown symbols") {
    auto pkg = testing::make_package(".extern h\ne:\n    ret\n", "e");
    HookRegistry reg;
    auto noop = [](State&& s, ExecContext&) {
        std::vector<State> v;
        v.push_back(std::move(s));
        return v;
    };
    reg.bind(pkg.program, "h", "h", noop);
    CHECK(reg.size() == 1);
    CHECK_THROWS_AS(reg.bind(pkg.program, "h", "h", noop), std::invalid_argument);
    CHECK_THROWS_AS(reg.bind(pkg.program, "nope", "nope", noop), std::invalid_argument);
}

TEST_CASE("limits must be positive") {
    Limits l;
    CHECK_NOTHROW(validate_limits(l));
    l.max_states = 0;
    CHECK_THROWS_AS(validate_limits(l), std::invalid_argument);
}
