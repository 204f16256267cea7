#include "esx/driver/analyze.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <mutex>
#include <thread>

#include "esx/detect/detectors.hpp"
#include "esx/sgx/model.hpp"

namespace esx::driver {

EcallResult analyze_ecall(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall,
                          const exec::Limits& limits, std::uint64_t seed, exec::Observer* observer) {
    symx::SymbolScope scope(ecall.index + 1);
    auto env = mem::MemoryEnv::from_package(pkg);
    exec::HookRegistry hooks = sgx::make_hooks(pkg);
    detect::Detectors det(pkg, ecall, detect::Sentinels::for_layout(pkg.layout));
    exec::Explorer explorer(pkg, hooks, limits, det, observer, seed);
    symx::Solver setup(symx::SolverConfig{limits.solver_budget, seed});
    exec::State init = sgx::init_state(pkg, ecall, env, setup);
    EcallResult r;
    r.index = ecall.index;
    r.name = ecall.name;
    r.stats = explorer.run(std::move(init));
    r.stats.solver_unknowns += setup.unknowns();
    r.findings = det.findings();
    return r;
}

std::vector<EcallResult> analyze_package(const loader::EnclavePackage& pkg, const AnalyzeOptions& opts) {
    std::vector<const loader::ECallSpec*> todo;
    for (const auto& e : pkg.ecalls) {
        if (opts.ecalls.empty() || std::find(opts.ecalls.begin(), opts.ecalls.end(), e.index) != opts.ecalls.end()) {
            todo.push_back(&e);
        }
    }
    std::vector<EcallResult> results(todo.size());
    std::vector<std::exception_ptr> errors(todo.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < todo.size(); i = next++) {
            try {
                results[i] = analyze_ecall(pkg, *todo[i], opts.limits, opts.seed);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    unsigned n = std::max(1u, std::min<unsigned>(opts.workers, static_cast<unsigned>(todo.size())));
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < n; ++i) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return results;
}

std::optional<unsigned> resolve_ecall(const loader::EnclavePackage& pkg, const std::string& ref) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(ref.data(), ref.data() + ref.size(), v);
    if (ec == std::errc{} && p == ref.data() + ref.size()) {
        for (const auto& e : pkg.ecalls) {
            if (e.index == v) {
                return v;
            }
        }
        return std::nullopt;
    }
    for (const auto& e : pkg.ecalls) {
        if (e.name == ref) {
            return e.index;
        }
    }
    return std::nullopt;
}

} // namespace esx::driver
