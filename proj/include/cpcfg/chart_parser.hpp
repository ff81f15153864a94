#pragma once

// Memoized top-down 2D CYK over center-order regions.
//
//   c[B][X] = max over X -> Y Z and splits (B1, B2) of
//             m(X -> Y Z, B1, B2) + c[B1][Y] + c[B2][Z]
//
// followed, per region, by the unit closure (X => ... => T costs nothing and
// reuses T's hidden vector) and the optional top-w beam.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <optional>
#include <vector>

#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/grammar.hpp"
#include "cpcfg/tree.hpp"

namespace cpcfg {

struct BinaryInput {
    RuleId rule;
    Direction dir;
    const Region& left;
    const Region& right;
    const double* h1;
    const double* h2;
};

// Production scorers write a hidden vector of hidden_dim() doubles next to
// each score; hidden_dim() may be 0.
template <class S>
concept ProductionScorer = requires(const S& s, const Document& d, BoxId b, RuleId r, const BinaryInput& in, double* h) {
    { s.hidden_dim() } -> std::convertible_to<std::size_t>;
    { s.unary(d, b, r, h) } -> std::convertible_to<double>;
    { s.binary(in, h) } -> std::convertible_to<double>;
};

struct ParseOptions {
    std::size_t beam = 0;  // 0 = unbounded
    SplitOptions splits;
};

struct ParseStats {
    std::size_t regions = 0;
    std::size_t splits = 0;
    std::size_t rule_evals = 0;
};

struct ChartEntry {
    SymbolId symbol = kNoSymbol;
    double score = 0;
    std::size_t hidden = 0;  // offset into the chart's hidden arena
    RuleId rule = kNoRule;   // base production; its head is the unit target when `unit` is set
    RegionId left = 0, right = 0;
    Direction dir = Direction::Vertical;
    std::uint32_t split_index = 0;
    BoxId box = 0;
    const UnitPath* unit = nullptr;
};

struct ParseResult {
    ParseTree tree;
    double score = 0;
    ParseStats stats;
};

template <ProductionScorer S>
class Chart {
public:
    Chart(const Document& doc, const Grammar& g, const S& scorer, ParseOptions opts = {})
        : doc_(doc), g_(g), scorer_(scorer), opts_(opts), regions_(doc, opts.splits), dim_(scorer.hidden_dim()) {}

    RegionTable& regions() { return regions_; }
    const ParseStats& stats() const { return stats_; }

    const ChartEntry* entry(RegionId region, SymbolId symbol) {
        compute(region);
        const auto& cell = cells_[region];
        int k = cell.slot[symbol];
        return k < 0 ? nullptr : &cell.entries[static_cast<std::size_t>(k)];
    }

    const std::vector<ChartEntry>& entries(RegionId region) {
        compute(region);
        return cells_[region].entries;
    }

    const double* hidden(const ChartEntry& e) const { return arena_.data() + e.hidden; }

    std::optional<ParseTree> backtrace(RegionId region, SymbolId symbol) {
        const ChartEntry* e = entry(region, symbol);
        if (!e) return std::nullopt;
        ParseTree t;
        t.root = build(t, region, *e);
        t.score = e->score;
        return t;
    }

private:
    struct Cell {
        bool done = false;
        std::vector<ChartEntry> entries;
        std::vector<int> slot;
    };
    struct Candidate {
        bool set = false;
        ChartEntry e;
    };

    bool better(const Candidate& best, double score, RuleId rule, std::uint32_t split) const {
        if (!best.set || score > best.e.score) return true;
        if (score < best.e.score) return false;
        return rule < best.e.rule || (rule == best.e.rule && split < best.e.split_index);
    }

    void compute(RegionId id) {
        if (cells_.size() <= id) cells_.resize(regions_.size() + 1);
        if (cells_[id].done) return;
        const std::size_t nsym = g_.symbol_count();
        std::vector<Candidate> base(nsym);
        std::vector<double> scratch(dim_), best_h(nsym * dim_);

        if (regions_.region(id).size() == 1) {
            BoxId b = regions_.region(id).by_x.front();
            Terminal term = doc_.terminal(b);
            for (RuleId rid : g_.lexical_rules()) {
                const auto& r = g_.rule(rid);
                if (!terminal_accepts(r.terminal, term)) continue;
                double s = scorer_.unary(doc_, b, rid, scratch.data());
                ++stats_.rule_evals;
                auto& c = base[r.head];
                if (!better(c, s, rid, 0)) continue;
                c.set = true;
                c.e = ChartEntry{};
                c.e.symbol = r.head;
                c.e.score = s;
                c.e.rule = rid;
                c.e.box = b;
                std::copy(scratch.begin(), scratch.end(), best_h.begin() + static_cast<std::ptrdiff_t>(r.head * dim_));
            }
        } else {
            const auto& splits = regions_.splits(id);
            for (const auto& sp : splits) {
                compute(sp.left);
                compute(sp.right);
            }
            for (const auto& sp : splits) {
                ++stats_.splits;
                const auto& L = cells_[sp.left];
                const auto& R = cells_[sp.right];
                const Region& lreg = regions_.region(sp.left);
                const Region& rreg = regions_.region(sp.right);
                for (const auto& e1 : L.entries) {
                    for (RuleId rid : g_.binary_by_left(e1.symbol)) {
                        const auto& r = g_.rule(rid);
                        int k = R.slot[r.right];
                        if (k < 0) continue;
                        const auto& e2 = R.entries[static_cast<std::size_t>(k)];
                        double m = scorer_.binary(BinaryInput{rid, sp.dir, lreg, rreg, hidden(e1), hidden(e2)},
                                                  scratch.data());
                        ++stats_.rule_evals;
                        double s = m + e1.score + e2.score;
                        auto& c = base[r.head];
                        if (!better(c, s, rid, sp.index)) continue;
                        c.set = true;
                        c.e = ChartEntry{};
                        c.e.symbol = r.head;
                        c.e.score = s;
                        c.e.rule = rid;
                        c.e.left = sp.left;
                        c.e.right = sp.right;
                        c.e.dir = sp.dir;
                        c.e.split_index = sp.index;
                        std::copy(scratch.begin(), scratch.end(),
                                  best_h.begin() + static_cast<std::ptrdiff_t>(r.head * dim_));
                    }
                }
            }
        }
        ++stats_.regions;

        // Base winners move to the arena; unit entries share their target's vector.
        for (SymbolId x = 0; x < nsym; ++x) {
            if (!base[x].set) continue;
            base[x].e.hidden = arena_.size();
            arena_.insert(arena_.end(), best_h.begin() + static_cast<std::ptrdiff_t>(x * dim_),
                          best_h.begin() + static_cast<std::ptrdiff_t>((x + 1) * dim_));
        }
        std::vector<ChartEntry> out;
        for (SymbolId x = 0; x < nsym; ++x) {
            const ChartEntry* best = base[x].set ? &base[x].e : nullptr;
            const UnitPath* via = nullptr;
            auto paths = g_.unit_paths(x);
            for (std::size_t p = 1; p < paths.size(); ++p) {
                const auto& t = base[paths[p].target];
                if (t.set && (!best || t.e.score > best->score)) {
                    best = &t.e;
                    via = &paths[p];
                }
            }
            if (!best) continue;
            ChartEntry e = *best;
            e.symbol = x;
            e.unit = via;
            out.push_back(e);
        }
        if (opts_.beam > 0 && id != regions_.root() && out.size() > opts_.beam) {
            // equal scores: shorter unit chains first, so a unit wrapper never
            // pushes its own target out of the beam
            auto chain = [](const ChartEntry& e) { return e.unit ? e.unit->path.size() : std::size_t{1}; };
            std::stable_sort(out.begin(), out.end(), [&](const ChartEntry& a, const ChartEntry& b) {
                if (a.score != b.score) return a.score > b.score;
                return chain(a) < chain(b);
            });
            out.resize(opts_.beam);
            std::sort(out.begin(), out.end(), [](const ChartEntry& a, const ChartEntry& b) { return a.symbol < b.symbol; });
        }
        if (cells_.size() <= id) cells_.resize(regions_.size());
        auto& cell = cells_[id];
        cell.slot.assign(nsym, -1);
        for (std::size_t i = 0; i < out.size(); ++i) cell.slot[out[i].symbol] = static_cast<int>(i);
        cell.entries = std::move(out);
        cell.done = true;
    }

    const ChartEntry& child_entry(RegionId region, SymbolId symbol) {
        const ChartEntry* e = entry(region, symbol);
        if (!e) throw Error("chart backtrace: missing entry for " + g_.name(symbol));
        return *e;
    }

    int build(ParseTree& t, RegionId region, const ChartEntry& e) {
        auto boxes = regions_.region(region).ids();
        if (e.unit) {
            // path runs e.symbol ... target; the target carries the base derivation.
            const auto& path = e.unit->path;
            ChartEntry base = e;
            base.unit = nullptr;
            base.symbol = path.back();
            int child = build(t, region, base);
            for (std::size_t i = path.size() - 1; i-- > 0;) {
                TreeNode n;
                n.symbol = path[i];
                n.boxes = boxes;
                n.left = child;
                child = t.add(std::move(n));
            }
            return child;
        }
        const auto& r = g_.rule(e.rule);
        TreeNode n;
        n.symbol = e.symbol;
        n.rule = e.rule;
        n.boxes = std::move(boxes);
        if (!r.is_lexical) {
            n.dir = e.dir;
            n.left = build(t, e.left, child_entry(e.left, r.left));
            n.right = build(t, e.right, child_entry(e.right, r.right));
        }
        return t.add(std::move(n));
    }

    const Document& doc_;
    const Grammar& g_;
    const S& scorer_;
    ParseOptions opts_;
    RegionTable regions_;
    std::size_t dim_;
    std::vector<Cell> cells_;
    std::vector<double> arena_;
    ParseStats stats_;
};

template <ProductionScorer S>
std::optional<ParseResult> parse_constrained(const Document& doc, const Grammar& g, const S& scorer, SymbolId root,
                                             const ParseOptions& opts = {}) {
    Chart<S> chart(doc, g, scorer, opts);
    auto tree = chart.backtrace(chart.regions().root(), root);
    if (!tree) return std::nullopt;
    ParseResult out;
    out.score = tree->score;
    out.tree = std::move(*tree);
    out.stats = chart.stats();
    return out;
}

// Best tree rooted at the start symbol, or nullopt when the grammar cannot
// derive the document.
template <ProductionScorer S>
std::optional<ParseResult> parse_best(const Document& doc, const Grammar& g, const S& scorer,
                                      const ParseOptions& opts = {}) {
    return parse_constrained(doc, g, scorer, g.start(), opts);
}

// Recomputes a tree's score bottom-up without the chart.
template <ProductionScorer S>
double tree_score(const ParseTree& t, const Document& doc, const Grammar& g, const S& scorer) {
    if (t.empty()) throw Error("tree_score: empty tree");
    RegionTable regions(doc);
    const std::size_t dim = scorer.hidden_dim();
    std::vector<double> h(t.nodes.size() * dim);
    std::vector<double> score(t.nodes.size(), 0.0);
    std::vector<RegionId> reg(t.nodes.size(), 0);
    // Children are visited before parents: walk pre-order, evaluate in reverse.
    std::vector<int> order;
    t.visit([&](int i) { order.push_back(i); });
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        int i = *it;
        const auto& n = t.node(i);
        auto* hi = h.data() + static_cast<std::size_t>(i) * dim;
        reg[i] = regions.intern(n.boxes);
        if (n.is_unit()) {
            std::copy_n(h.data() + static_cast<std::size_t>(n.left) * dim, dim, hi);
            score[i] = score[n.left];
            continue;
        }
        if (n.rule >= g.rules().size()) throw Error("tree_score: rule absent from grammar");
        const auto& r = g.rule(n.rule);
        if (r.is_lexical) {
            score[i] = scorer.unary(doc, n.boxes.at(0), n.rule, hi);
            continue;
        }
        double m = scorer.binary(BinaryInput{n.rule, n.dir, regions.region(reg[n.left]), regions.region(reg[n.right]),
                                             h.data() + static_cast<std::size_t>(n.left) * dim,
                                             h.data() + static_cast<std::size_t>(n.right) * dim},
                                 hi);
        score[i] = m + score[n.left] + score[n.right];
    }
    return score[t.root];
}

}  // namespace cpcfg
