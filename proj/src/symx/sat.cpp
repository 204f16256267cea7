#include "esx/symx/sat.hpp"

#include <algorithm>

namespace esx::symx::sat {

namespace {

constexpr double kVarDecay = 0.95;
constexpr std::uint64_t kRestartBase = 64;

// Luby sequence, 0-based: 1 1 2 1 1 2 4 ...
std::uint64_t luby(std::uint64_t x) {
    std::uint64_t size = 1;
    unsigned seq = 0;
    while (size < x + 1) {
        ++seq;
        size = 2 * size + 1;
    }
    while (size - 1 != x) {
        size = (size - 1) >> 1;
        --seq;
        x = x % size;
    }
    return 1ULL << seq;
}

std::uint64_t splitmix(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

CdclSolver::CdclSolver(std::uint64_t seed) : rng_(seed) {}

Var CdclSolver::new_var() {
    Var v = static_cast<Var>(assigns_.size());
    assigns_.push_back(0);
    level_.push_back(0);
    reason_.push_back(-1);
    polarity_.push_back(rng_ != 0 ? static_cast<char>(splitmix(rng_) & 1) : 1);
    seen_.push_back(0);
    activity_.push_back(0.0);
    heap_pos_.push_back(-1);
    watches_.emplace_back();
    watches_.emplace_back();
    heap_insert(v);
    return v;
}

void CdclSolver::add_clause(std::vector<Lit> lits) {
    if (unsat_) {
        return;
    }
    std::sort(lits.begin(), lits.end());
    lits.erase(std::unique(lits.begin(), lits.end()), lits.end());
    std::vector<Lit> kept;
    kept.reserve(lits.size());
    for (std::size_t i = 0; i < lits.size(); ++i) {
        if (i + 1 < lits.size() && lits[i + 1] == negate(lits[i])) {
            return; // tautology
        }
        int v = lit_value(lits[i]);
        if (v == 1) {
            return;
        }
        if (v == 0) {
            kept.push_back(lits[i]);
        }
    }
    if (kept.empty()) {
        unsat_ = true;
        return;
    }
    if (kept.size() == 1) {
        enqueue(kept[0], -1);
        if (propagate() != -1) {
            unsat_ = true;
        }
        return;
    }
    clauses_.push_back(Clause{std::move(kept)});
    attach(static_cast<int>(clauses_.size()) - 1);
}

void CdclSolver::attach(int ci) {
    const auto& c = clauses_[ci].lits;
    watches_[c[0]].push_back(ci);
    watches_[c[1]].push_back(ci);
}

void CdclSolver::enqueue(Lit l, int reason) {
    Var v = var_of(l);
    assigns_[v] = is_negated(l) ? -1 : 1;
    level_[v] = decision_level();
    reason_[v] = reason;
    trail_.push_back(l);
}

int CdclSolver::propagate() {
    while (qhead_ < trail_.size()) {
        Lit p = trail_[qhead_++];
        Lit false_lit = negate(p);
        auto& ws = watches_[false_lit];
        std::size_t i = 0;
        std::size_t j = 0;
        while (i < ws.size()) {
            int ci = ws[i++];
            auto& lits = clauses_[ci].lits;
            if (lits[0] == false_lit) {
                std::swap(lits[0], lits[1]);
            }
            if (lit_value(lits[0]) == 1) {
                ws[j++] = ci;
                continue;
            }
            bool moved = false;
            for (std::size_t k = 2; k < lits.size(); ++k) {
                if (lit_value(lits[k]) != -1) {
                    std::swap(lits[1], lits[k]);
                    watches_[lits[1]].push_back(ci);
                    moved = true;
                    break;
                }
            }
            if (moved) {
                continue;
            }
            ws[j++] = ci;
            if (lit_value(lits[0]) == -1) {
                while (i < ws.size()) {
                    ws[j++] = ws[i++];
                }
                ws.resize(j);
                qhead_ = trail_.size();
                return ci;
            }
            enqueue(lits[0], ci);
        }
        ws.resize(j);
    }
    return -1;
}

void CdclSolver::analyze(int confl, std::vector<Lit>& out, int& out_level) {
    out.clear();
    out.push_back(0);
    int path = 0;
    Lit p = -1;
    int idx = static_cast<int>(trail_.size()) - 1;
    std::vector<Var> touched;
    do {
        const auto& lits = clauses_[confl].lits;
        for (std::size_t j = (p == -1) ? 0 : 1; j < lits.size(); ++j) {
            Lit q = lits[j];
            Var v = var_of(q);
            if (!seen_[v] && level_[v] > 0) {
                seen_[v] = 1;
                touched.push_back(v);
                bump(v);
                if (level_[v] >= decision_level()) {
                    ++path;
                } else {
                    out.push_back(q);
                }
            }
        }
        while (!seen_[var_of(trail_[idx])]) {
            --idx;
        }
        p = trail_[idx];
        --idx;
        confl = reason_[var_of(p)];
        seen_[var_of(p)] = 0;
        --path;
    } while (path > 0);
    out[0] = negate(p);

    // Drop literals implied by others already in the clause.
    std::size_t keep = 1;
    for (std::size_t i = 1; i < out.size(); ++i) {
        int r = reason_[var_of(out[i])];
        bool redundant = r != -1;
        if (redundant) {
            const auto& lits = clauses_[r].lits;
            for (std::size_t k = 1; k < lits.size(); ++k) {
                Var u = var_of(lits[k]);
                if (!seen_[u] && level_[u] > 0) {
                    redundant = false;
                    break;
                }
            }
        }
        if (!redundant) {
            out[keep++] = out[i];
        }
    }
    out.resize(keep);
    for (Var v : touched) {
        seen_[v] = 0;
    }

    out_level = 0;
    if (out.size() > 1) {
        std::size_t max_i = 1;
        for (std::size_t i = 2; i < out.size(); ++i) {
            if (level_[var_of(out[i])] > level_[var_of(out[max_i])]) {
                max_i = i;
            }
        }
        std::swap(out[1], out[max_i]);
        out_level = level_[var_of(out[1])];
    }
}

void CdclSolver::backtrack(int level) {
    if (decision_level() <= level) {
        return;
    }
    for (int i = static_cast<int>(trail_.size()) - 1; i >= trail_lim_[level]; --i) {
        Var v = var_of(trail_[i]);
        polarity_[v] = is_negated(trail_[i]) ? 1 : 0;
        assigns_[v] = 0;
        reason_[v] = -1;
        if (heap_pos_[v] < 0) {
            heap_insert(v);
        }
    }
    trail_.resize(trail_lim_[level]);
    trail_lim_.resize(level);
    qhead_ = trail_.size();
}

void CdclSolver::bump(Var v) {
    activity_[v] += var_inc_;
    if (activity_[v] > 1e100) {
        for (auto& a : activity_) {
            a *= 1e-100;
        }
        var_inc_ *= 1e-100;
    }
    if (heap_pos_[v] >= 0) {
        heap_up(heap_pos_[v]);
    }
}

void CdclSolver::heap_insert(Var v) {
    heap_pos_[v] = static_cast<int>(heap_.size());
    heap_.push_back(v);
    heap_up(heap_pos_[v]);
}

void CdclSolver::heap_up(int pos) {
    Var v = heap_[pos];
    while (pos > 0) {
        int parent = (pos - 1) / 2;
        Var pv = heap_[parent];
        if (activity_[pv] > activity_[v] || (activity_[pv] == activity_[v] && pv < v)) {
            break;
        }
        heap_[pos] = pv;
        heap_pos_[pv] = pos;
        pos = parent;
    }
    heap_[pos] = v;
    heap_pos_[v] = pos;
}

void CdclSolver::heap_down(int pos) {
    Var v = heap_[pos];
    const int n = static_cast<int>(heap_.size());
    while (true) {
        int child = 2 * pos + 1;
        if (child >= n) {
            break;
        }
        auto better = [&](Var a, Var b) { return activity_[a] > activity_[b] || (activity_[a] == activity_[b] && a < b); };
        if (child + 1 < n && better(heap_[child + 1], heap_[child])) {
            ++child;
        }
        if (!better(heap_[child], v)) {
            break;
        }
        heap_[pos] = heap_[child];
        heap_pos_[heap_[pos]] = pos;
        pos = child;
    }
    heap_[pos] = v;
    heap_pos_[v] = pos;
}

Var CdclSolver::heap_pop() {
    Var top = heap_[0];
    Var last = heap_.back();
    heap_.pop_back();
    heap_pos_[top] = -1;
    if (!heap_.empty()) {
        heap_[0] = last;
        heap_pos_[last] = 0;
        heap_down(0);
    }
    return top;
}

Lit CdclSolver::pick_branch() {
    while (!heap_.empty()) {
        Var v = heap_pop();
        if (assigns_[v] == 0) {
            return mk_lit(v, polarity_[v] != 0);
        }
    }
    return -1;
}

Result CdclSolver::solve(std::uint64_t conflict_budget) {
    if (unsat_) {
        return Result::Unsat;
    }
    if (propagate() != -1) {
        unsat_ = true;
        return Result::Unsat;
    }
    std::uint64_t restarts = 0;
    std::uint64_t until_restart = luby(restarts) * kRestartBase;
    std::uint64_t spent = 0;
    std::vector<Lit> learnt;
    while (true) {
        int confl = propagate();
        if (confl != -1) {
            ++conflicts_;
            ++spent;
            if (decision_level() == 0) {
                unsat_ = true;
                return Result::Unsat;
            }
            int bt = 0;
            analyze(confl, learnt, bt);
            backtrack(bt);
            if (learnt.size() == 1) {
                enqueue(learnt[0], -1);
            } else {
                clauses_.push_back(Clause{learnt});
                int ci = static_cast<int>(clauses_.size()) - 1;
                attach(ci);
                enqueue(learnt[0], ci);
            }
            var_inc_ /= kVarDecay;
            if (spent >= conflict_budget) {
                backtrack(0);
                return Result::Unknown;
            }
            if (--until_restart == 0) {
                ++restarts;
                until_restart = luby(restarts) * kRestartBase;
                backtrack(0);
            }
            continue;
        }
        Lit next = pick_branch();
        if (next == -1) {
            model_.assign(assigns_.size(), 0);
            for (std::size_t v = 0; v < assigns_.size(); ++v) {
                model_[v] = assigns_[v] == 1 ? 1 : 0;
            }
            backtrack(0);
            return Result::Sat;
        }
        trail_lim_.push_back(static_cast<int>(trail_.size()));
        enqueue(next, -1);
    }
}

} // namespace esx::symx::sat
