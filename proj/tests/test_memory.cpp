#include <catch_amalgamated.hpp>

#include <random>

#include "esx/mem/memory.hpp"

using namespace esx;
using namespace esx::mem;
using symx::Expr;
using symx::mk_const;

namespace {

Expr c64(std::uint64_t v) { return mk_const(64, v); }

loader::Layout small_layout() {
    loader::Layout l;
    l.enclave = {0x10000000, 0x100000};
    l.code = {0x10000000, 0x10000};
    l.globals = {0x10010000, 0x1000};
    l.heap = {0x10020000, 0x10000};
    l.stack = {0x100F0000, 0x10000};
    return l;
}

std::shared_ptr<const MemoryEnv> env_with_image() {
    auto env = std::make_shared<MemoryEnv>();
    env->layout = small_layout();
    env->images[0x10010000] = {0x11, 0x22, 0x33, 0x44};
    return env;
}

bool proved(const symx::MustVerdict& v) { return std::holds_alternative<symx::Proved>(v); }

// Per-address facts computed with plain interval arithmetic on 128-bit ints.
struct Facts {
    bool enclave = false, null = false, host = false;
};

Facts concrete_facts(std::uint64_t a, std::uint64_t len, const Range& enc) {
    Facts f;
    for (std::uint64_t i = 0; i < len; ++i) {
        std::uint64_t b = a + i;
        bool in_enc = b >= enc.base && b < enc.base + enc.size;
        bool in_null = b < 0x1000;
        f.enclave |= in_enc;
        f.null |= in_null;
    }
    unsigned __int128 lo = a, hi = static_cast<unsigned __int128>(a) + len;
    auto inside = [&](unsigned __int128 b, unsigned __int128 e) { return lo >= b && hi <= e; };
    bool trusted = inside(enc.base, static_cast<unsigned __int128>(enc.base) + enc.size) || inside(0, 0x1000) ||
                   (enc.base == 0x1000 && inside(0, static_cast<unsigned __int128>(enc.base) + enc.size));
    f.host = !trusted;
    return f;
}

} // namespace

TEST_CASE("range predicates on the 16-byte grid") {
    const Range enc{0x2000, 16};
    for (std::uint64_t len = 1; len <= 16; ++len) {
        for (int off = -16; off <= 16; ++off) {
            std::uint64_t a = enc.base + static_cast<std::uint64_t>(static_cast<std::int64_t>(off));
            bool within = a >= enc.base && a + len <= enc.end();
            bool disjoint = a + len <= enc.base || a >= enc.end();
            Expr w = range_within(c64(a), c64(len), enc);
            Expr d = range_disjoint(c64(a), c64(len), enc);
            INFO("len " << len << " off " << off);
            CHECK(w.is_true() == within);
            CHECK(d.is_true() == disjoint);
            if (!within && !disjoint) {
                CHECK(w.is_false());
                CHECK(d.is_false());
            }
        }
    }
}

TEST_CASE("range predicates: size zero and wrap") {
    const Range enc{0x2000, 16};
    CHECK(range_within(c64(0x2000), c64(0), enc).is_false());
    CHECK(range_disjoint(c64(0x2000), c64(0), enc).is_true());
    // [~0-1, ~0-1+4) wraps through zero; never disjoint.
    CHECK(range_disjoint(c64(~0ULL - 1), c64(4), enc).is_false());
    CHECK(range_intersects(c64(~0ULL - 1), 4, Range{0, 0x1000}).is_true());
}

TEST_CASE("classify constant addresses") {
    const Range enc = small_layout().enclave;
    symx::Solver s;
    std::vector<Expr> pc;
    CHECK(classify(c64(0x10000010), 8, pc, enc, s).kind == Region::MustEnclave);
    CHECK(classify(c64(0x20000000), 8, pc, enc, s).kind == Region::MustHost);
    CHECK(classify(c64(0x0), 8, pc, enc, s).kind == Region::MustNullPage);
    CHECK(classify(c64(0x10000000 - 4), 8, pc, enc, s).kind == Region::MayOverlap);
    CHECK(classify(c64(0x0FFC), 8, pc, enc, s).kind == Region::MayOverlap);
}

TEST_CASE("classify symbolic addresses") {
    const Range enc = small_layout().enclave;
    symx::Solver s;
    Expr p = symx::mk_sym(64, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "p");
    std::vector<Expr> none;
    RegionClass any = classify(p, 8, none, enc, s);
    CHECK(any.kind == Region::MayOverlap);
    CHECK(any.enclave_sat);
    CHECK(any.host_sat);
    CHECK(any.null_sat);

    std::vector<Expr> inside = {range_within(p, c64(8), enc)};
    CHECK(classify(p, 8, inside, enc, s).kind == Region::MustEnclave);
    std::vector<Expr> outside = {range_disjoint(p, c64(8), enc), symx::ule(c64(0x1000), p)};
    CHECK(classify(p, 8, outside, enc, s).kind == Region::MustHost);
}

TEST_CASE("classify agrees with an interval oracle") {
    std::mt19937_64 rng(7);
    symx::Solver s;
    for (int iter = 0; iter < 1000; ++iter) {
        // Enclave near the null page or far from it; 8-bit offset window.
        Range enc = (rng() % 3 == 0) ? Range{0x1000, 0x20 + rng() % 0x40} : Range{0x4000 + (rng() % 64), 1 + rng() % 64};
        std::uint64_t len = 1 + rng() % 8;
        std::uint64_t k;
        switch (rng() % 4) {
        case 0:
            k = enc.base - 0x80 + rng() % 0x100;
            break;
        case 1:
            k = enc.end() - 0x80 + rng() % 0x100;
            break;
        case 2:
            k = 0x1000 - 0x80 + rng() % 0x100;
            break;
        default:
            k = ~0ULL - rng() % 0x100;
            break;
        }
        Expr x = symx::mk_sym(8, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "x");
        Expr addr = symx::add(c64(k), symx::mk_zext(x, 64));
        std::uint64_t lo = rng() % 256;
        std::uint64_t hi = lo + rng() % (256 - lo);
        std::vector<Expr> pc = {symx::ule(mk_const(8, lo), x), symx::ule(x, mk_const(8, hi))};

        Facts any;
        int kinds = 0;
        for (std::uint64_t v = lo; v <= hi; ++v) {
            Facts f = concrete_facts(k + v, len, enc);
            any.enclave |= f.enclave;
            any.null |= f.null;
            any.host |= f.host;
        }
        kinds = int(any.enclave) + int(any.null) + int(any.host);
        RegionClass rc = classify(addr, len, pc, enc, s);
        INFO("k=" << k << " len=" << len << " lo=" << lo << " hi=" << hi << " enc=" << enc.base << "+" << enc.size);
        REQUIRE_FALSE(rc.unknown);
        CHECK(rc.enclave_sat == any.enclave);
        CHECK(rc.null_sat == any.null);
        CHECK(rc.host_sat == any.host);
        if (kinds == 1) {
            Region want = any.enclave ? Region::MustEnclave : any.host ? Region::MustHost : Region::MustNullPage;
            CHECK(rc.kind == want);
        } else {
            CHECK(rc.kind == Region::MayOverlap);
        }
    }
}

TEST_CASE("enclave bytes: image, store, stable havoc") {
    SymMemory m(env_with_image());
    CHECK(m.load_enclave(0x10010000, 4).value() == 0x44332211);
    Expr g1 = m.enclave_byte(0x10010100);
    Expr g2 = m.enclave_byte(0x10010100);
    CHECK(g1.is_sym());
    CHECK(g1.sym_id() == g2.sym_id());
    CHECK(g1.labels().contains(symx::LabelKind::GlobalState));

    SymMemory fork = m;
    m.store_concrete(0x10010000, mk_const(16, 0xBEEF), 2);
    CHECK(m.load_enclave(0x10010000, 4).value() == 0x4433BEEF);
    CHECK(fork.load_enclave(0x10010000, 4).value() == 0x44332211);
    // The fork shares the havoc byte created before the copy.
    CHECK(fork.enclave_byte(0x10010100).sym_id() == g1.sym_id());

    // Bytes past the enclave end are dropped.
    m.store_concrete(0x100FFFFE, mk_const(32, 0xAABBCCDD), 4);
    CHECK(m.store().count(0x100FFFFF) == 1);
    CHECK(m.store().count(0x10100000) == 0);
}

TEST_CASE("read after write at a symbolic in-enclave address") {
    SymMemory m(env_with_image());
    symx::Solver s;
    Expr p = symx::mk_sym(64, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "p");
    std::vector<Expr> pc = {range_within(p, c64(8), Range{0x10010000, 0x100})};
    Expr v = mk_const(64, 0x1122334455667788);
    WriteResult w = write(m, p, v, 8, pc, 0x10000000, s);
    CHECK(w.region.kind == Region::MustEnclave);
    CHECK(w.concretized);
    REQUIRE(m.write_log().size() == 1);
    ReadResult r = read(m, p, 8, pc, 0x10000004, s);
    CHECK_FALSE(r.host);
    CHECK(r.value.is_const());
    CHECK(r.value.value() == 0x1122334455667788);
}

TEST_CASE("host reads are fresh and logged") {
    SymMemory m(env_with_image());
    symx::Solver s;
    std::vector<Expr> pc;
    ReadResult a = read(m, c64(0x20000000), 8, pc, 0x10000000, s);
    ReadResult b = read(m, c64(0x20000000), 8, pc, 0x10000004, s);
    CHECK(a.host);
    CHECK(b.host);
    CHECK(a.value.sym_id() != b.value.sym_id());
    CHECK(a.value.labels().contains(symx::LabelKind::HostMemory));
    CHECK(m.fetch_log().size() == 2);

    Expr p = symx::mk_sym(64, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "p");
    ReadResult c = read(m, p, 4, pc, 0x10000008, s);
    CHECK(c.host);
    CHECK(c.value.width() == 32);
    bool steered = false;
    for (const auto& l : c.value.labels().items()) {
        if (l.kind == symx::LabelKind::DerefOf) {
            steered = l.steered;
        }
    }
    CHECK(steered);
}

TEST_CASE("writes prefer host locations") {
    SymMemory m(env_with_image());
    symx::Solver s;
    Expr p = symx::mk_sym(64, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "p");
    std::vector<Expr> pc;
    WriteResult w = write(m, p, mk_const(8, 1), 1, pc, 0x10000000, s);
    CHECK(w.region.kind == Region::MayOverlap);
    CHECK_FALSE(m.enclave().contains(w.concrete_addr));
    CHECK(w.concrete_addr >= 0x1000);
    CHECK(m.store().empty());
    REQUIRE(pc.size() == 1);
}

TEST_CASE("heap allocation") {
    SymMemory m(env_with_image());
    CHECK(m.alloc_enclave(24) == 0x10020000);
    CHECK(m.alloc_enclave(1) == 0x10020020);
    CHECK(m.alloc_enclave(8) == 0x10020030);
    CHECK_THROWS_AS(m.alloc_enclave(0x10000), HeapExhausted);
    CHECK_THROWS_AS(m.alloc_enclave(0), std::invalid_argument);
}

TEST_CASE("classify is equivalent to the exported predicates") {
    const Range enc{0x10000000, 0x100000};
    symx::Solver s;
    Expr p = symx::mk_sym(64, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "p");
    std::vector<Expr> pc = {range_within(p, c64(8), enc)};
    CHECK(proved(s.must(pc, symx::bnot(range_disjoint(p, c64(8), enc)))));
}

TEST_CASE("every read carries a deref-of link to its address") {
    std::mt19937_64 rng(7);
    SymMemory m(env_with_image());
    symx::Solver s;
    std::vector<Expr> pc;
    Expr p = symx::mk_sym(64, symx::LabelSet({symx::Label::ecall_arg(0, 0)}), "p");
    std::vector<Expr> inside = {range_within(p, c64(8), Range{0x10010000, 0x40})};
    const unsigned widths[] = {1, 2, 4, 8};
    for (int i = 0; i < 200; ++i) {
        unsigned w = widths[rng() % 4];
        Expr addr;
        std::vector<Expr>* cs = &pc;
        switch (rng() % 4) {
        case 0: addr = c64(0x10010000 + rng() % 0x100); break;       // image and havoc bytes
        case 1: addr = c64(0x30000000 + rng() % 0x100); break;       // host
        case 2: addr = symx::add(p, c64(rng() % 16)); break;         // anywhere
        default: addr = p; cs = &inside; break;                      // pinned inside
        }
        std::vector<Expr> local = *cs;
        ReadResult r = read(m, addr, w, local, 0x10000000 + i, s);
        INFO(symx::to_string(addr));
        CHECK(r.value.width() == 8 * w);
        bool linked = false;
        for (const auto& l : r.value.labels().items()) {
            linked = linked || l.kind == symx::LabelKind::DerefOf;
        }
        CHECK(linked);
    }
}
