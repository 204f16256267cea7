#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "esx/loader/package.hpp"
#include "esx/symx/expr.hpp"
#include "esx/symx/solver.hpp"

namespace esx::mem {

using loader::Range;
using symx::Expr;

enum class Region : std::uint8_t { MustEnclave, MustHost, MustNullPage, MayOverlap };

const char* region_name(Region r);

struct RegionClass {
    Region kind = Region::MayOverlap;
    bool enclave_sat = false;
    bool host_sat = false;
    bool null_sat = false;
    bool unknown = false;
    friend bool operator==(const RegionClass&, const RegionClass&) = default;
};

// [addr, addr+size) ⊆ r without wrapping; false for size 0.
Expr range_within(const Expr& addr, const Expr& size, const Range& r);
// [addr, addr+size) ∩ r = ∅ and the range does not wrap; true for size 0.
Expr range_disjoint(const Expr& addr, const Expr& size, const Range& r);
// Some byte addr+i (mod 2^64), i < len, lies in r.
Expr range_intersects(const Expr& addr, std::uint64_t len, const Range& r);

// Where can the len-byte access at addr land? Unknown solver verdicts give
// MayOverlap with every flag set.
RegionClass classify(const Expr& addr, std::uint64_t len, std::span<const Expr> constraints, const Range& enclave,
                     symx::Solver& solver);

class HeapExhausted : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct FetchRecord {
    Expr addr;
    unsigned width = 0;
    std::uint64_t pc = 0;
    Expr value;
};

struct WriteRecord {
    Expr addr;
    std::uint64_t concrete = 0;
    Expr value;
    unsigned width = 0;
    std::uint64_t pc = 0;
};

// Immutable per-exploration environment shared by every state.
struct MemoryEnv {
    loader::Layout layout;
    std::map<std::uint64_t, std::vector<std::uint8_t>> images; // data images by start address

    static std::shared_ptr<const MemoryEnv> from_package(const loader::EnclavePackage& pkg);
    [[nodiscard]] std::optional<std::uint8_t> image_byte(std::uint64_t addr) const;
};

namespace detail {

// Copy-on-write holder: copies share storage until one of them mutates.
template <class T>
class Cow {
  public:
    Cow() : p_(std::make_shared<T>()) {}
    const T& get() const { return *p_; }
    T& mut() {
        if (p_.use_count() > 1) {
            p_ = std::make_shared<T>(*p_);
        }
        return *p_;
    }

  private:
    std::shared_ptr<T> p_;
};

} // namespace detail

// Enclave bytes are concrete addresses mapped to byte expressions; host
// memory is never stored (each host read yields a fresh symbol).
class SymMemory {
  public:
    explicit SymMemory(std::shared_ptr<const MemoryEnv> env);

    [[nodiscard]] const MemoryEnv& env() const { return *env_; }
    [[nodiscard]] const Range& enclave() const { return env_->layout.enclave; }

    // Written byte, else image byte, else the stable global-state havoc byte.
    Expr enclave_byte(std::uint64_t addr);
    void set_enclave_byte(std::uint64_t addr, const Expr& byte);

    // Little-endian multi-byte access at a concrete address. Bytes outside
    // the enclave are dropped on store; load requires an enclave range.
    Expr load_enclave(std::uint64_t addr, unsigned width);
    void store_concrete(std::uint64_t addr, const Expr& value, unsigned width);

    // Bump allocation in the heap section, 16-byte aligned.
    std::uint64_t alloc_enclave(std::uint64_t size);
    [[nodiscard]] std::uint64_t heap_ptr() const { return heap_ptr_; }

    Expr fresh_host(const Expr& addr, unsigned width, std::uint64_t pc, bool steered);

    void log_write(WriteRecord r) { writes_.mut().push_back(std::move(r)); }
    [[nodiscard]] const std::vector<FetchRecord>& fetch_log() const { return fetches_.get(); }
    [[nodiscard]] const std::vector<WriteRecord>& write_log() const { return writes_.get(); }
    [[nodiscard]] const std::map<std::uint64_t, Expr>& havoc() const { return havoc_.get(); }
    [[nodiscard]] const std::map<std::uint64_t, Expr>& store() const { return store_.get(); }

  private:
    std::shared_ptr<const MemoryEnv> env_;
    detail::Cow<std::map<std::uint64_t, Expr>> store_;
    detail::Cow<std::map<std::uint64_t, Expr>> havoc_;
    detail::Cow<std::vector<FetchRecord>> fetches_;
    detail::Cow<std::vector<WriteRecord>> writes_;
    std::uint64_t heap_ptr_ = 0;
};

struct ReadResult {
    Expr value; // width*8 bits
    RegionClass region;
    bool host = false;
    bool concretized = false;
};

struct WriteResult {
    RegionClass region;
    std::uint64_t concrete_addr = 0;
    bool concretized = false;
};

// Symbolic-address read. Constraints may gain an equality when the address
// is pinned to enclave memory but not unique.
ReadResult read(SymMemory& mem, const Expr& addr, unsigned width, std::vector<Expr>& constraints, std::uint64_t pc,
                symx::Solver& solver);

// Symbolic-address write. A non-unique address is pinned to one model value,
// preferring a host location.
WriteResult write(SymMemory& mem, const Expr& addr, const Expr& value, unsigned width,
                  std::vector<Expr>& constraints, std::uint64_t pc, symx::Solver& solver);

} // namespace esx::mem
