#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "esx/exec/explorer.hpp"
#include "esx/loader/package.hpp"
#include "esx/mem/memory.hpp"

namespace esx::sgx {

class MarshalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Symbolic size bounds used by hooks (memcpy/memset/malloc/ocall buffers).
inline constexpr std::uint64_t kMaxHookSize = loader::kDefaultMaxSize;

// Materializes the ECALL's parameters in enclave memory: buffers first,
// then the 8-byte-per-parameter argument struct. Symbolic buffer sizes are
// pinned to their smallest value in [1, max_size].
exec::MarshalledArgs marshal_args(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall, exec::State& s,
                                  symx::Solver& solver);

// Entry state: pc at the ECALL entry, r0 = argument struct, r15 = stack top
// with the exit sentinel pushed.
exec::State init_state(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall,
                       std::shared_ptr<const mem::MemoryEnv> env, symx::Solver& solver);

// [addr, addr+size) inside / strictly outside the enclave. Size 0 is never
// inside and always outside.
symx::Expr is_within_pred(const symx::Expr& addr, const symx::Expr& size, const loader::Range& enclave);
symx::Expr is_outside_pred(const symx::Expr& addr, const symx::Expr& size, const loader::Range& enclave);

// Summary for a builtin id; throws std::invalid_argument for unknown ids.
exec::HookFn builtin_hook(const std::string& id, const std::optional<loader::OutBuffer>& out_buffer = {});

// One binding per manifest hook entry.
exec::HookRegistry make_hooks(const loader::EnclavePackage& pkg);

} // namespace esx::sgx
