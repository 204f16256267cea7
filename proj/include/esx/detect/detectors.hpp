#pragma once

#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "esx/detect/finding.hpp"
#include "esx/exec/explorer.hpp"
#include "esx/loader/package.hpp"

namespace esx::detect {

// Two far-apart probe addresses; a value that can hit both is unconstrained.
struct Sentinels {
    std::uint64_t first = 0x41414000;
    std::uint64_t second = 0x42424000;

    // Defaults, moved below the enclave if it happens to cover them.
    static Sentinels for_layout(const loader::Layout& layout);
};

unsigned roots_of(const symx::Expr& e);
std::vector<ProvenanceEntry> provenance_of(const symx::Expr& e);
// Code label at pc, else nearest preceding label with a +0x offset.
std::string label_for(const eir::Program& program, std::uint64_t pc);

class Detectors : public exec::EventSink {
  public:
    Detectors(const loader::EnclavePackage& pkg, const loader::ECallSpec& ecall,
              Sentinels sentinels = Sentinels{});

    bool on_jump(const exec::State& s, const symx::Expr& target, symx::Solver& solver) override;
    bool on_access(const exec::State& s, const symx::Expr& addr, unsigned width, bool is_write,
                   symx::Solver& solver) override;
    void on_store(const exec::State& s, const symx::Expr& addr, const symx::Expr& value, unsigned width,
                  symx::Solver& solver) override;
    void on_path_end(const exec::State& s, const exec::Termination& t, symx::Solver& solver) override;

    // The individual checks. They do not record anything.
    std::optional<Finding> check_jump(const exec::State& s, const symx::Expr& target, symx::Solver& solver);
    std::optional<Finding> check_write(const exec::State& s, const symx::Expr& addr, const symx::Expr& value,
                                       unsigned width, symx::Solver& solver);
    std::optional<Finding> check_null(const exec::State& s, const symx::Expr& addr, unsigned width,
                                      symx::Solver& solver);
    std::vector<Finding> check_double_fetch(const exec::State& s, symx::Solver& solver);

    // Deduplicated, in discovery order.
    [[nodiscard]] const std::vector<Finding>& findings() const { return findings_; }
    [[nodiscard]] const Sentinels& sentinels() const { return sentinels_; }

  private:
    using Key = std::tuple<FindingKind, std::uint64_t, unsigned, std::uint64_t>;

    Finding base_finding(const exec::State& s, FindingKind kind, const symx::Expr& controlled) const;
    // True when an equivalent exact finding exists; bumps its count.
    bool seen(const Key& k);
    void record(const Key& k, Finding f);
    void attach_witness(Finding& f, const exec::State& s, const symx::Expr& event, const symx::Expr& pred,
                        symx::Solver& solver) const;

    const loader::EnclavePackage& pkg_;
    const loader::ECallSpec& ecall_;
    Sentinels sentinels_;
    std::vector<Finding> findings_;
    std::map<Key, std::size_t> index_;
};

// Witness for `pred` on the state's path: args, host reads, globals and
// ocall results, all taken from one model. Host reads are kept outside
// the enclave. nullopt when the solver cannot produce a model.
std::optional<Witness> make_witness(const loader::ECallSpec& ecall, const exec::State& s, const symx::Expr& event,
                                    const symx::Expr& pred, const loader::Range& enclave,
                                    const symx::SolverConfig& cfg);

} // namespace esx::detect
