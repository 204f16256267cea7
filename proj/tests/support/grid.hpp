#pragma once

#include <vector>

#include "esx/eir/program.hpp"
#include "esx/exec/explorer.hpp"
#include "esx/sgx/model.hpp"

namespace esx::testing {

inline constexpr std::uint64_t kGridEnclave = 0x10000;

// A 16-byte enclave with code elsewhere; the probe runs both SDK checks on
// (r2, r3) and leaves is_within in r4 and is_outside in r0.
inline loader::EnclavePackage grid_package() {
    loader::EnclavePackage pkg;
    pkg.name = "grid";
    pkg.layout.enclave = {kGridEnclave, 16};
    pkg.layout.code = {0x400000, 0x1000};
    pkg.layout.globals = {0x401000, 0x1000};
    pkg.layout.heap = {0x402000, 0x1000};
    pkg.layout.stack = {0x403000, 0x1000};
    eir::AsmOptions opts;
    opts.base = 0x400000;
    pkg.program = eir::assemble(R"(
.extern sgx_is_within_enclave
.extern sgx_is_outside_enclave
e:
    mov r0, r2
    mov r1, r3
    call sgx_is_within_enclave
    mov r4, r0
    mov r0, r2
    mov r1, r3
    call sgx_is_outside_enclave
    halt
)",
                                opts);
    pkg.hooks["sgx_is_within_enclave"] = {"sgx_is_within_enclave", std::nullopt};
    pkg.hooks["sgx_is_outside_enclave"] = {"sgx_is_outside_enclave", std::nullopt};
    return pkg;
}

inline exec::State probe_state(const loader::EnclavePackage& pkg, symx::Expr addr, symx::Expr size) {
    exec::State s(mem::SymMemory(mem::MemoryEnv::from_package(pkg)));
    for (auto& r : s.regs) {
        r = symx::mk_const(64, 0);
    }
    s.pc = pkg.program.find("e")->addr;
    s.regs[2] = std::move(addr);
    s.regs[3] = std::move(size);
    return s;
}

struct KeepEnds : exec::EventSink {
    std::vector<exec::State> ends;
    std::size_t faults = 0;
    void on_path_end(const exec::State& s, const exec::Termination& t, symx::Solver&) override {
        faults += t.kind == exec::EndKind::Fault;
        ends.push_back(s);
    }
};

// Final states of every path from s.
inline std::vector<exec::State> explore_all(const loader::EnclavePackage& pkg, exec::State s,
                                            std::size_t* faults = nullptr) {
    exec::HookRegistry hooks = sgx::make_hooks(pkg);
    KeepEnds keep;
    exec::Explorer ex(pkg, hooks, exec::Limits{}, keep);
    ex.run(std::move(s));
    if (faults) {
        *faults = keep.faults;
    }
    return std::move(keep.ends);
}

} // namespace esx::testing
