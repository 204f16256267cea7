#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>

#include "esx/symx/expr.hpp"

namespace esx::symx {

// Concrete semantics of a single operator on already-masked operand values.
// udiv/urem are total: x/0 = all-ones, x%0 = x.
std::uint64_t eval_op(Op op, unsigned width, unsigned lo, std::span<const std::uint64_t> vals,
                      std::span<const unsigned> widths);

class Model {
  public:
    void set(std::uint64_t sym_id, std::uint64_t value) { values_[sym_id] = value; }
    [[nodiscard]] std::optional<std::uint64_t> get(std::uint64_t sym_id) const {
        auto it = values_.find(sym_id);
        if (it == values_.end()) {
            return std::nullopt;
        }
        return it->second;
    }
    [[nodiscard]] bool contains(std::uint64_t sym_id) const { return values_.count(sym_id) != 0; }
    [[nodiscard]] const std::map<std::uint64_t, std::uint64_t>& values() const { return values_; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }
    friend bool operator==(const Model&, const Model&) = default;

  private:
    std::map<std::uint64_t, std::uint64_t> values_;
};

class UnassignedSymbol : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Throws UnassignedSymbol if a symbol in expr has no value in the model.
std::uint64_t eval(const Model& model, const Expr& expr);
// Unassigned symbols evaluate to zero.
std::uint64_t eval_total(const Model& model, const Expr& expr);

} // namespace esx::symx
