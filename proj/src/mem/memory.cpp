#include "esx/mem/memory.hpp"

#include <sstream>

namespace esx::mem {

using symx::mk_const;
using symx::Op;

namespace {

const Range kNullPage{0, loader::kNullPageEnd};
constexpr std::uint64_t kSteerDistance = 0x1000;

Expr c64(std::uint64_t v) { return mk_const(64, v); }

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

bool within_c(std::uint64_t a, std::uint64_t len, const Range& r) {
    return len != 0 && a >= r.base && a <= r.end() && len <= r.end() - a;
}

bool intersects_c(std::uint64_t a, std::uint64_t len, const Range& r) {
    return (a - r.base) < r.size || (r.base - a) < len;
}

// Everything [addr, addr+len) could touch without reaching host memory.
Expr covered_by_trusted_or_null(const Expr& addr, std::uint64_t len, const Range& enclave) {
    Expr size = c64(len);
    Expr r = symx::bor(range_within(addr, size, enclave), range_within(addr, size, kNullPage));
    if (enclave.base == kNullPage.end()) {
        r = symx::bor(r, range_within(addr, size, Range{0, enclave.end()}));
    }
    return r;
}

bool covered_c(std::uint64_t a, std::uint64_t len, const Range& enclave) {
    return within_c(a, len, enclave) || within_c(a, len, kNullPage) ||
           (enclave.base == kNullPage.end() && within_c(a, len, Range{0, enclave.end()}));
}

RegionClass from_flags(bool e, bool h, bool n) {
    RegionClass rc;
    rc.enclave_sat = e;
    rc.host_sat = h;
    rc.null_sat = n;
    int count = int(e) + int(h) + int(n);
    if (count == 1) {
        rc.kind = e ? Region::MustEnclave : h ? Region::MustHost : Region::MustNullPage;
    } else if (count == 0) {
        // Infeasible path; stay conservative.
        rc.enclave_sat = rc.host_sat = rc.null_sat = true;
        rc.kind = Region::MayOverlap;
    } else {
        rc.kind = Region::MayOverlap;
    }
    return rc;
}

std::optional<std::uint64_t> model_value(const symx::Verdict& v, const Expr& e) {
    if (auto* s = std::get_if<symx::Sat>(&v)) {
        return symx::eval_total(s->model, e);
    }
    return std::nullopt;
}

// Two feasible values at least kSteerDistance apart.
bool steerable(const Expr& addr, std::uint64_t c, std::span<const Expr> constraints, symx::Solver& solver) {
    Expr far = symx::mk_false();
    if (c <= ~0ULL - kSteerDistance) {
        far = symx::bor(far, symx::ule(c64(c + kSteerDistance), addr));
    }
    if (c >= kSteerDistance) {
        far = symx::bor(far, symx::ule(addr, c64(c - kSteerDistance)));
    }
    auto v = solver.check(constraints, far);
    return !symx::is_unsat_verdict(v);
}

bool unique_value(const Expr& addr, std::uint64_t c, std::span<const Expr> constraints, symx::Solver& solver) {
    return symx::is_unsat_verdict(solver.check(constraints, symx::ne(addr, c64(c))));
}

} // namespace

const char* region_name(Region r) {
    switch (r) {
    case Region::MustEnclave:
        return "must-enclave";
    case Region::MustHost:
        return "must-host";
    case Region::MustNullPage:
        return "must-null-page";
    case Region::MayOverlap:
        return "may-overlap";
    }
    return "?";
}

Expr range_within(const Expr& addr, const Expr& size, const Range& r) {
    Expr b = c64(r.base);
    Expr e = c64(r.end());
    return symx::band(symx::band(symx::ne(size, c64(0)), symx::ule(b, addr)),
                      symx::band(symx::ule(addr, e), symx::ule(size, symx::sub(e, addr))));
}

Expr range_disjoint(const Expr& addr, const Expr& size, const Range& r) {
    Expr last_off = symx::sub(size, c64(1));
    Expr no_wrap = symx::ule(last_off, symx::sub(c64(~0ULL), addr));
    Expr last = symx::add(addr, last_off);
    Expr apart = symx::bor(symx::ult(last, c64(r.base)), symx::ule(c64(r.end()), addr));
    return symx::bor(symx::eq(size, c64(0)), symx::band(no_wrap, apart));
}

Expr range_intersects(const Expr& addr, std::uint64_t len, const Range& r) {
    return symx::bor(symx::ult(symx::sub(addr, c64(r.base)), c64(r.size)),
                     symx::ult(symx::sub(c64(r.base), addr), c64(len)));
}

RegionClass classify(const Expr& addr, std::uint64_t len, std::span<const Expr> constraints, const Range& enclave,
                     symx::Solver& solver) {
    if (len == 0) {
        throw std::invalid_argument("classify needs len >= 1");
    }
    if (addr.is_const()) {
        std::uint64_t a = addr.value();
        return from_flags(intersects_c(a, len, enclave), !covered_c(a, len, enclave), intersects_c(a, len, kNullPage));
    }
    auto e = solver.check(constraints, range_intersects(addr, len, enclave));
    auto n = solver.check(constraints, range_intersects(addr, len, kNullPage));
    auto h = solver.check(constraints, symx::bnot(covered_by_trusted_or_null(addr, len, enclave)));
    if (symx::is_unknown_verdict(e) || symx::is_unknown_verdict(n) || symx::is_unknown_verdict(h)) {
        RegionClass rc{Region::MayOverlap, true, true, true, true};
        return rc;
    }
    return from_flags(symx::is_sat_verdict(e), symx::is_sat_verdict(h), symx::is_sat_verdict(n));
}

std::shared_ptr<const MemoryEnv> MemoryEnv::from_package(const loader::EnclavePackage& pkg) {
    auto env = std::make_shared<MemoryEnv>();
    env->layout = pkg.layout;
    for (const auto& img : pkg.program.data) {
        env->images.emplace(img.addr, img.bytes);
    }
    return env;
}

std::optional<std::uint8_t> MemoryEnv::image_byte(std::uint64_t addr) const {
    auto it = images.upper_bound(addr);
    if (it == images.begin()) {
        return std::nullopt;
    }
    --it;
    std::uint64_t off = addr - it->first;
    if (off < it->second.size()) {
        return it->second[off];
    }
    return std::nullopt;
}

SymMemory::SymMemory(std::shared_ptr<const MemoryEnv> env) : env_(std::move(env)) {
    heap_ptr_ = env_->layout.heap.base;
}

Expr SymMemory::enclave_byte(std::uint64_t addr) {
    const auto& st = store_.get();
    if (auto it = st.find(addr); it != st.end()) {
        return it->second;
    }
    if (auto b = env_->image_byte(addr)) {
        return mk_const(8, *b);
    }
    const auto& hv = havoc_.get();
    if (auto it = hv.find(addr); it != hv.end()) {
        return it->second;
    }
    Expr s = symx::mk_sym(8, symx::LabelSet({symx::Label::global_state()}), "global[" + hex(addr) + "]");
    havoc_.mut().emplace(addr, s);
    return s;
}

void SymMemory::set_enclave_byte(std::uint64_t addr, const Expr& byte) {
    if (byte.width() != 8) {
        throw std::invalid_argument("enclave bytes are 8 bits wide");
    }
    store_.mut()[addr] = byte;
}

Expr SymMemory::load_enclave(std::uint64_t addr, unsigned width) {
    Expr v = enclave_byte(addr);
    for (unsigned i = 1; i < width; ++i) {
        v = symx::concat(enclave_byte(addr + i), v);
    }
    return v;
}

void SymMemory::store_concrete(std::uint64_t addr, const Expr& value, unsigned width) {
    if (value.width() != 8 * width) {
        throw std::invalid_argument("store width mismatch");
    }
    for (unsigned i = 0; i < width; ++i) {
        std::uint64_t a = addr + i;
        if (enclave().contains(a)) {
            set_enclave_byte(a, symx::mk_extract(value, 8 * i + 7, 8 * i));
        }
    }
}

std::uint64_t SymMemory::alloc_enclave(std::uint64_t size) {
    const Range& heap = env_->layout.heap;
    if (size == 0) {
        throw std::invalid_argument("allocation size must be positive");
    }
    std::uint64_t base = (heap_ptr_ + 15) & ~std::uint64_t{15};
    if (base < heap_ptr_ || base > heap.end() || size > heap.end() - base) {
        throw HeapExhausted("enclave heap exhausted allocating " + std::to_string(size) + " bytes");
    }
    heap_ptr_ = base + size;
    return base;
}

Expr SymMemory::fresh_host(const Expr& addr, unsigned width, std::uint64_t pc, bool steered) {
    symx::LabelSet labels({symx::Label::host_memory(addr.ptr()), symx::Label::deref_of(addr.ptr(), steered)});
    Expr v = symx::mk_sym(8 * width, labels, "host[" + symx::to_string(addr) + "]@" + hex(pc));
    fetches_.mut().push_back(FetchRecord{addr, width, pc, v});
    return v;
}

ReadResult read(SymMemory& mem, const Expr& addr, unsigned width, std::vector<Expr>& constraints, std::uint64_t pc,
                symx::Solver& solver) {
    ReadResult out;
    const Range& enc = mem.enclave();
    out.region = classify(addr, width, constraints, enc, solver);

    auto enclave_value = [&](std::uint64_t a, bool steered) {
        Expr v = mem.load_enclave(a, width);
        symx::LabelSet extra({symx::Label::deref_of(addr.ptr(), steered)});
        if (v.is_const()) {
            extra = extra.with(symx::Label::constant());
        }
        return symx::with_labels(v, v.labels().merged(extra));
    };

    if (addr.is_const()) {
        if (out.region.kind == Region::MustEnclave) {
            out.value = enclave_value(addr.value(), false);
        } else {
            out.host = true;
            out.value = mem.fresh_host(addr, width, pc, false);
        }
        return out;
    }
    if (out.region.kind != Region::MustEnclave) {
        out.host = true;
        out.value = mem.fresh_host(addr, width, pc, true);
        return out;
    }

    // Pinned to enclave memory: prefer untouched heap, where the bytes are
    // unconstrained, then any feasible location.
    const Range& heap = mem.env().layout.heap;
    std::optional<std::uint64_t> c;
    if (mem.heap_ptr() < heap.end()) {
        Range free{mem.heap_ptr(), heap.end() - mem.heap_ptr()};
        c = model_value(solver.check(constraints, range_within(addr, c64(width), free)), addr);
    }
    if (!c) {
        c = model_value(solver.check(constraints, range_within(addr, c64(width), enc)), addr);
    }
    if (!c) {
        // Solver gave up; fall back to treating the access as untrusted.
        out.host = true;
        out.value = mem.fresh_host(addr, width, pc, true);
        return out;
    }
    bool steered = false;
    if (!unique_value(addr, *c, constraints, solver)) {
        steered = steerable(addr, *c, constraints, solver);
        constraints.push_back(symx::eq(addr, c64(*c)));
        out.concretized = true;
    }
    out.value = enclave_value(*c, steered);
    return out;
}

WriteResult write(SymMemory& mem, const Expr& addr, const Expr& value, unsigned width,
                  std::vector<Expr>& constraints, std::uint64_t pc, symx::Solver& solver) {
    WriteResult out;
    const Range& enc = mem.enclave();
    out.region = classify(addr, width, constraints, enc, solver);
    std::uint64_t c = 0;
    if (addr.is_const()) {
        c = addr.value();
    } else {
        std::optional<std::uint64_t> pick;
        if (out.region.host_sat) {
            Expr host_only = symx::band(symx::bnot(range_intersects(addr, width, enc)),
                                        symx::bnot(range_intersects(addr, width, kNullPage)));
            pick = model_value(solver.check(constraints, host_only), addr);
        }
        if (!pick) {
            pick = solver.value_of(constraints, addr);
        }
        c = pick.value_or(0);
        if (!unique_value(addr, c, constraints, solver)) {
            constraints.push_back(symx::eq(addr, c64(c)));
            out.concretized = true;
        }
    }
    out.concrete_addr = c;
    mem.store_concrete(c, value, width);
    mem.log_write(WriteRecord{addr, c, value, width, pc});
    return out;
}

} // namespace esx::mem
