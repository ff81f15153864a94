#pragma once

// Compatible-tree search: the tree whose extracted record is closest to a
// target record under HED. Same recursion as the chart parser with HED in
// place of the score and min in place of max; states carry the slice of
// the target a subtree is responsible for:
//
//   header struct      the whole header (and the whole line-item list)
//   header field       a span of the field's value
//   list               a contiguous range of target line-items
//   item (range)       a range; at most one item is matched, the rest inserted
//   item (single)      one target item, or none
//   item field         a span of that item's field value
//   N                  nothing; costs 0
//
// Target content a derivation leaves out (a nullable field elided, an item
// without a match) is charged as insertions where it is dropped.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/grammar.hpp"
#include "cpcfg/metrics.hpp"
#include "cpcfg/record.hpp"
#include "cpcfg/tree.hpp"

namespace cpcfg {

enum class FieldSplit : std::uint8_t {
    Token,  // field spans split only between whitespace-separated tokens
    Char,   // any character position (exact minimum HED)
};

struct OracleOptions {
    SplitOptions splits;
    FieldSplit field_split = FieldSplit::Char;
};

struct OracleResult {
    ParseTree tree;
    std::int64_t cost = 0;
    std::size_t states = 0;
};

class CompatibleParser {
public:
    CompatibleParser(const Document& doc, const Grammar& g, const RecordSchema& rs, const Record& target,
                     OracleOptions opts = {})
        : doc_(doc), g_(g), rs_(rs), opts_(opts), regions_(doc, opts.splits) {
        prepare_target(conform(target, rs));
        prepare_symbols();
        prepare_goal_spaces();
        for (const auto& b : doc.boxes()) content_.push_back(detail::strip_space(b.content));
    }

    std::optional<OracleResult> run() {
        RegionId root = regions_.root();
        Goal g{Kind::Header, 0, 0, 0};
        auto c = solve(root, g_.start(), g, false);
        if (c >= kInf) return std::nullopt;
        OracleResult out;
        out.cost = c + insert_cost(all_slots_ & ~cov_[g_.start()], g);
        out.tree.root = build(out.tree, root, g_.start(), g, false);
        out.states = states_;
        return out;
    }

private:
    static constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;

    enum class Kind : std::uint8_t { None, Header, HField, Range, ItemRange, Single, IField };
    struct Goal {
        Kind kind;
        int item;  // Single / IField: target item, -1 = none
        int a, b;  // span or range
    };
    enum class How : std::uint8_t { Unset, Inf, Leaf, Binary, Unit, Dispatch };
    struct Decision {
        std::int64_t cost = kInf;
        How how = How::Unset;
        RuleId rule = kNoRule;
        std::uint32_t split = 0;
        int k = 0;           // span/range cut of a binary rule
        std::uint32_t path = 0;
        int j = -1;          // item chosen by a dispatch or inside a unit path
    };

    static std::int64_t add(std::int64_t a, std::int64_t b) { return a >= kInf || b >= kInf ? kInf : a + b; }

    static std::size_t pair_index(int a, int b) {
        return static_cast<std::size_t>(b) * static_cast<std::size_t>(b + 1) / 2 + static_cast<std::size_t>(a);
    }
    static std::size_t pair_count(std::size_t n) { return (n + 1) * (n + 2) / 2; }

    // Goals of each symbol are numbered densely; see goal_index.
    void prepare_goal_spaces() {
        const std::size_t m = istr_.size();
        space_.assign(g_.symbol_count(), 0);
        ifield_off_.assign(g_.symbol_count(), {});
        for (SymbolId s = 0; s < g_.symbol_count(); ++s) {
            switch (role_[s]) {
                case Role::Noise: space_[s] = 1; break;
                case Role::HeaderField: space_[s] = pair_count(hstr_[static_cast<std::size_t>(slot_[s])].size()); break;
                case Role::ItemField: {
                    std::size_t n = 1;
                    for (std::size_t j = 0; j < m; ++j) {
                        ifield_off_[s].push_back(n);
                        n += pair_count(istr_[j][static_cast<std::size_t>(slot_[s]) - list_slot_ - 1].size());
                    }
                    space_[s] = n;
                    break;
                }
                case Role::List: space_[s] = pair_count(m); break;
                case Role::Item: space_[s] = pair_count(m) + m + 1; break;
                default: space_[s] = m + 2; break;
            }
        }
    }

    std::size_t goal_index(SymbolId x, const Goal& g) const {
        switch (g.kind) {
            case Kind::None:
            case Kind::Header: return 0;
            case Kind::Single:
                return role_[x] == Role::Item ? pair_count(istr_.size()) + static_cast<std::size_t>(g.item + 1)
                                              : static_cast<std::size_t>(g.item + 2);
            case Kind::Range:
            case Kind::ItemRange:
            case Kind::HField: return pair_index(g.a, g.b);
            case Kind::IField:
                return g.item < 0 ? 0 : ifield_off_[x][static_cast<std::size_t>(g.item)] + pair_index(g.a, g.b);
        }
        return 0;
    }

    // Index of the decision slot for a state, allocating the cell on first use.
    std::size_t slot(RegionId r, SymbolId x, const Goal& g, bool base) {
        const std::size_t nsym = g_.symbol_count();
        auto& cells = cells_[base ? 1 : 0];
        std::size_t c = static_cast<std::size_t>(r) * nsym + x;
        if (cells.size() <= c) cells.resize(std::max(c + 1, regions_.size() * nsym), -1);
        if (cells[c] < 0) {
            cells[c] = static_cast<std::int64_t>(store_.size());
            store_.resize(store_.size() + space_[x]);
        }
        std::size_t gi = goal_index(x, g);
        if (gi >= space_[x]) throw Error("compatible_parse: goal outside its symbol's goal space");
        return static_cast<std::size_t>(cells[c]) + gi;
    }

    void prepare_target(const Record& t) {
        for (const auto& f : rs_.header_fields()) hstr_.push_back(detail::strip_space(t.header.at(f)));
        for (const auto& item : t.items) {
            std::vector<std::string> row;
            std::int64_t total = 0;
            for (const auto& f : rs_.item_fields()) {
                row.push_back(detail::strip_space(item.at(f)));
                total += static_cast<std::int64_t>(row.back().size());
            }
            istr_.push_back(std::move(row));
            item_ins_.push_back(total);
        }
        item_prefix_.assign(1, 0);
        for (auto v : item_ins_) item_prefix_.push_back(item_prefix_.back() + v);
        // Token boundaries in stripped coordinates.
        auto cuts = [](const std::string& raw) {
            std::vector<int> out{0};
            int pos = 0;
            bool in_token = false;
            for (char c : raw) {
                bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
                if (space && in_token) out.push_back(pos);
                if (!space) ++pos;
                in_token = !space;
            }
            if (out.back() != pos) out.push_back(pos);
            return out;
        };
        for (const auto& f : rs_.header_fields()) hcuts_.push_back(cuts(t.header.at(f)));
        for (const auto& item : t.items) {
            std::vector<std::vector<int>> row;
            for (const auto& f : rs_.item_fields()) row.push_back(cuts(item.at(f)));
            icuts_.push_back(std::move(row));
        }
    }

    void prepare_symbols() {
        const std::size_t nh = rs_.header_fields().size();
        const std::size_t ni = rs_.item_fields().size();
        if (nh + ni + 1 > 64) throw SchemaError("compatible_parse: more than 63 record fields");
        list_slot_ = nh;
        std::size_t n = g_.symbol_count();
        role_.resize(n);
        slot_.assign(n, -1);
        cov_.assign(n, 0);
        for (SymbolId s = 0; s < n; ++s) {
            role_[s] = rs_.role(s);
            const auto& name = g_.name(s);
            if (role_[s] == Role::HeaderField) slot_[s] = index_of(rs_.header_fields(), name);
            if (role_[s] == Role::ItemField) slot_[s] = static_cast<int>(nh + 1) + index_of(rs_.item_fields(), name);
            if (slot_[s] >= 0) cov_[s] = std::uint64_t{1} << slot_[s];
            if (role_[s] == Role::List) cov_[s] = std::uint64_t{1} << list_slot_;
        }
        all_slots_ = (nh + ni + 1 == 64) ? ~std::uint64_t{0} : ((std::uint64_t{1} << (nh + ni + 1)) - 1);
        // Structs and items: union over their schema alternatives, to a fixed point.
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& r : g_.schema_rules()) {
                auto head = g_.find(r.head);
                if (!head || r.lexical()) continue;
                Role hr = role_[*head];
                if (hr != Role::Struct && hr != Role::ItemStruct && hr != Role::Item) continue;
                std::uint64_t c = cov_[*head];
                for (const auto& s : r.body)
                    if (auto id = g_.find(s)) c |= cov_[*id];
                if (c != cov_[*head]) cov_[*head] = c, changed = true;
            }
        }
        for (SymbolId s = 0; s < n; ++s)
            for (auto c : g_.symbol(s).components) cov_[s] |= cov_[c];
        for (const auto& r : g_.rules()) {
            if (r.is_lexical || r.noise) continue;
            if (r.left == r.right && r.left == r.head && is_field(r.head)) continue;
            if (role_[r.head] == Role::List) continue;
            if (cov_[r.left] & cov_[r.right])
                throw SchemaError("compatible_parse: children of " + g_.describe_rule(r.id) + " cover the same field");
        }
    }

    static int index_of(const std::vector<std::string>& v, const std::string& s) {
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == s) return static_cast<int>(i);
        return -1;
    }
    bool is_field(SymbolId s) const { return role_[s] == Role::HeaderField || role_[s] == Role::ItemField; }

    const std::string& field_text(SymbolId x, const Goal& g) const {
        static const std::string empty;
        if (g.kind == Kind::HField) return hstr_[static_cast<std::size_t>(slot_[x])];
        if (g.item < 0) return empty;
        return istr_[static_cast<std::size_t>(g.item)][static_cast<std::size_t>(slot_[x]) - list_slot_ - 1];
    }
    const std::vector<int>& field_cuts(SymbolId x, const Goal& g) const {
        static const std::vector<int> none{0};
        if (g.kind == Kind::HField) return hcuts_[static_cast<std::size_t>(slot_[x])];
        if (g.item < 0) return none;
        return icuts_[static_cast<std::size_t>(g.item)][static_cast<std::size_t>(slot_[x]) - list_slot_ - 1];
    }

    std::int64_t range_ins(int a, int b) const { return item_prefix_[static_cast<std::size_t>(b)] - item_prefix_[static_cast<std::size_t>(a)]; }

    // Target content of the slots in `mask` that a derivation drops.
    std::int64_t insert_cost(std::uint64_t mask, const Goal& g) const {
        if (!mask) return 0;
        std::int64_t c = 0;
        if (g.kind == Kind::Header) {
            for (std::size_t f = 0; f < hstr_.size(); ++f)
                if (mask >> f & 1U) c += static_cast<std::int64_t>(hstr_[f].size());
            if (mask >> list_slot_ & 1U) c += range_ins(0, static_cast<int>(istr_.size()));
        } else if (g.kind == Kind::Single && g.item >= 0) {
            const auto& row = istr_[static_cast<std::size_t>(g.item)];
            for (std::size_t f = 0; f < row.size(); ++f)
                if (mask >> (list_slot_ + 1 + f) & 1U) c += static_cast<std::int64_t>(row[f].size());
        }
        return c;
    }

    Goal child_goal(const Goal& g, SymbolId y) const {
        switch (role_[y]) {
            case Role::Noise: return Goal{Kind::None, -1, 0, 0};
            case Role::HeaderField:
                if (g.kind == Kind::Header)
                    return Goal{Kind::HField, -1, 0, static_cast<int>(hstr_[static_cast<std::size_t>(slot_[y])].size())};
                break;
            case Role::List:
                if (g.kind == Kind::Header) return Goal{Kind::Range, -1, 0, static_cast<int>(istr_.size())};
                if (g.kind == Kind::Range) return g;
                break;
            case Role::Item:
                if (g.kind == Kind::Range) return Goal{Kind::ItemRange, -1, g.a, g.b};
                if (g.kind == Kind::Single) return g;
                break;
            case Role::ItemField:
                if (g.kind == Kind::Single) {
                    Goal out{Kind::IField, g.item, 0, 0};
                    out.b = static_cast<int>(field_text(y, out).size());
                    return out;
                }
                break;
            case Role::Struct:
            case Role::ItemStruct:
            case Role::Intermediate:
                if (g.kind == Kind::Header || g.kind == Kind::Single) return g;
                break;
        }
        throw SchemaError("compatible_parse: '" + g_.name(y) + "' appears where the record shape does not allow it");
    }

    Goal list_part(SymbolId y, int a, int b) const {
        return Goal{role_[y] == Role::List ? Kind::Range : Kind::ItemRange, -1, a, b};
    }

    std::vector<int> cut_points(SymbolId x, const Goal& g) const {
        std::vector<int> out;
        if (opts_.field_split == FieldSplit::Char) {
            for (int k = g.a; k <= g.b; ++k) out.push_back(k);
        } else {
            for (int k : field_cuts(x, g))
                if (k >= g.a && k <= g.b) out.push_back(k);
        }
        return out;
    }

    std::int64_t leaf_cost(SymbolId x, BoxId box, const Goal& g) const {
        const auto& c = content_[box];
        switch (g.kind) {
            case Kind::None: return 0;
            case Kind::HField:
            case Kind::IField: {
                const auto& text = field_text(x, g);
                std::string_view part(text.data() + g.a, static_cast<std::size_t>(g.b - g.a));
                auto m = detail::lcs(c, part);
                return static_cast<std::int64_t>(c.size() + part.size() - 2 * m);
            }
            default: throw SchemaError("compatible_parse: terminal under non-field '" + g_.name(x) + "'");
        }
    }

    struct Walk {
        std::int64_t cost = kInf;
        int j = -1;
    };

    // Unit path from position idx with goal g; at most one item symbol on
    // a path, so at most one dispatch.
    Walk walk(RegionId r, const UnitPath& p, std::size_t idx, const Goal& g, int forced_j = -2) {
        if (idx + 1 == p.path.size()) return Walk{solve(r, p.path[idx], g, true), -1};
        if (g.kind == Kind::ItemRange) {
            Walk best;
            for (int j = g.a - 1; j < g.b; ++j) {
                int jj = j < g.a ? -1 : j;
                if (forced_j != -2 && jj != forced_j) continue;
                std::int64_t ins = range_ins(g.a, g.b) - (jj < 0 ? 0 : item_ins_[static_cast<std::size_t>(jj)]);
                auto rest = walk(r, p, idx, Goal{Kind::Single, jj, 0, 0});
                auto c = add(ins, rest.cost);
                if (c < best.cost) best = Walk{c, jj};
            }
            return best;
        }
        SymbolId u = p.path[idx], v = p.path[idx + 1];
        auto charge = insert_cost(cov_[u] & ~cov_[v], g);
        auto rest = walk(r, p, idx + 1, child_goal(g, v), forced_j);
        return Walk{add(charge, rest.cost), rest.j};
    }

    std::int64_t solve(RegionId r, SymbolId x, const Goal& g, bool base) {
        if (auto& e = store_[slot(r, x, g, base)]; e.how != How::Unset) return e.cost;
        Decision d;
        d.how = How::Inf;
        auto consider = [&](std::int64_t c, Decision cand) {
            if (c < d.cost) {
                cand.cost = c;
                d = cand;
            }
        };
        if (g.kind == Kind::ItemRange) {
            for (int j = g.a - 1; j < g.b; ++j) {
                int jj = j < g.a ? -1 : j;
                std::int64_t ins = range_ins(g.a, g.b) - (jj < 0 ? 0 : item_ins_[static_cast<std::size_t>(jj)]);
                Decision cand;
                cand.how = How::Dispatch;
                cand.j = jj;
                consider(add(ins, solve(r, x, Goal{Kind::Single, jj, 0, 0}, base)), cand);
            }
        } else {
            const Region& reg = regions_.region(r);
            if (reg.size() == 1) {
                BoxId b = reg.by_x.front();
                for (RuleId rid : g_.rules_by_head(x)) {
                    const auto& rule = g_.rule(rid);
                    if (!rule.is_lexical || !terminal_accepts(rule.terminal, doc_.terminal(b))) continue;
                    Decision cand;
                    cand.how = How::Leaf;
                    cand.rule = rid;
                    consider(leaf_cost(x, b, g), cand);
                }
            } else {
                const auto& splits = regions_.splits(r);
                for (RuleId rid : g_.rules_by_head(x)) {
                    const auto& rule = g_.rule(rid);
                    if (rule.is_lexical) continue;
                    for (const auto& sp : splits) {
                        Decision cand;
                        cand.how = How::Binary;
                        cand.rule = rid;
                        cand.split = sp.index;
                        binary(rule, sp, g, cand);
                        consider(cand.cost, cand);
                    }
                }
            }
            if (!base) {
                auto paths = g_.unit_paths(x);
                for (std::size_t p = 1; p < paths.size(); ++p) {
                    auto w = walk(r, paths[p], 0, g);
                    Decision cand;
                    cand.how = How::Unit;
                    cand.path = static_cast<std::uint32_t>(p);
                    cand.j = w.j;
                    consider(w.cost, cand);
                }
            }
        }
        store_[slot(r, x, g, base)] = d;
        ++states_;
        return d.cost;
    }

    enum class BinaryShape { Noise, SplitField, SplitList, Plain };

    BinaryShape shape(const Rule& rule, const Goal& g) const {
        if (rule.noise) return BinaryShape::Noise;
        if (rule.left == rule.head && rule.right == rule.head && is_field(rule.head)) return BinaryShape::SplitField;
        auto listy = [&](SymbolId s) { return role_[s] == Role::List || role_[s] == Role::Item; };
        if (g.kind == Kind::Range && listy(rule.left) && listy(rule.right)) return BinaryShape::SplitList;
        return BinaryShape::Plain;
    }

    // Fills cand.cost (and cand.k) for one rule over one split.
    void binary(const Rule& rule, const Split& sp, const Goal& g, Decision& cand) {
        const Goal none{Kind::None, -1, 0, 0};
        switch (shape(rule, g)) {
            case BinaryShape::Noise: {
                bool left_noise = rule.left == g_.noise() && (rule.right == rule.head || rule.head == g_.noise());
                Goal gl = left_noise ? none : g;
                Goal gr = left_noise ? g : none;
                if (rule.head == g_.noise()) gl = gr = none;
                cand.cost = add(solve(sp.left, rule.left, gl, false), solve(sp.right, rule.right, gr, false));
                return;
            }
            case BinaryShape::SplitField:
                for (int k : cut_points(rule.head, g)) {
                    Goal gl = g, gr = g;
                    gl.b = k;
                    gr.a = k;
                    auto c = add(solve(sp.left, rule.left, gl, false), solve(sp.right, rule.right, gr, false));
                    if (c < cand.cost) cand.cost = c, cand.k = k;
                }
                return;
            case BinaryShape::SplitList:
                for (int k = g.a; k <= g.b; ++k) {
                    auto c = add(solve(sp.left, rule.left, list_part(rule.left, g.a, k), false),
                                 solve(sp.right, rule.right, list_part(rule.right, k, g.b), false));
                    if (c < cand.cost) cand.cost = c, cand.k = k;
                }
                return;
            case BinaryShape::Plain: {
                auto c = add(solve(sp.left, rule.left, child_goal(g, rule.left), false),
                             solve(sp.right, rule.right, child_goal(g, rule.right), false));
                cand.cost = add(c, insert_cost(cov_[rule.head] & ~(cov_[rule.left] | cov_[rule.right]), g));
                return;
            }
        }
    }

    std::pair<Goal, Goal> child_goals(const Rule& rule, const Goal& g, int k) const {
        const Goal none{Kind::None, -1, 0, 0};
        switch (shape(rule, g)) {
            case BinaryShape::Noise: {
                if (rule.head == g_.noise()) return {none, none};
                bool left_noise = rule.left == g_.noise();
                return left_noise ? std::pair{none, g} : std::pair{g, none};
            }
            case BinaryShape::SplitField: {
                Goal gl = g, gr = g;
                gl.b = k;
                gr.a = k;
                return {gl, gr};
            }
            case BinaryShape::SplitList: return {list_part(rule.left, g.a, k), list_part(rule.right, k, g.b)};
            case BinaryShape::Plain: return {child_goal(g, rule.left), child_goal(g, rule.right)};
        }
        return {none, none};
    }

    const Split& split_at(RegionId r, std::uint32_t index) {
        const auto& splits = regions_.splits(r);
        return splits.at(index);
    }

    int build(ParseTree& t, RegionId r, SymbolId x, const Goal& g, bool base) {
        const Decision d = store_[slot(r, x, g, base)];
        if (d.how == How::Inf || d.how == How::Unset) throw Error("compatible_parse: backtrace reached an infeasible state");
        if (d.how == How::Dispatch) return build(t, r, x, Goal{Kind::Single, d.j, 0, 0}, base);
        auto boxes = regions_.region(r).ids();
        if (d.how == How::Unit) {
            const auto& p = g_.unit_paths(x)[d.path];
            Goal cur = g;
            std::vector<SymbolId> chain;
            for (std::size_t idx = 0; idx + 1 < p.path.size(); ++idx) {
                if (cur.kind == Kind::ItemRange) cur = Goal{Kind::Single, d.j, 0, 0};
                chain.push_back(p.path[idx]);
                cur = child_goal(cur, p.path[idx + 1]);
            }
            int child = build(t, r, p.path.back(), cur, true);
            for (std::size_t i = chain.size(); i-- > 0;) {
                TreeNode n;
                n.symbol = chain[i];
                n.boxes = boxes;
                n.left = child;
                child = t.add(std::move(n));
            }
            return child;
        }
        TreeNode n;
        n.symbol = x;
        n.rule = d.rule;
        n.boxes = std::move(boxes);
        if (d.how == How::Binary) {
            const auto& rule = g_.rule(d.rule);
            const Split sp = split_at(r, d.split);
            auto [gl, gr] = child_goals(rule, g, d.k);
            n.dir = sp.dir;
            n.left = build(t, sp.left, rule.left, gl, false);
            n.right = build(t, sp.right, rule.right, gr, false);
        }
        return t.add(std::move(n));
    }

    const Document& doc_;
    const Grammar& g_;
    const RecordSchema& rs_;
    OracleOptions opts_;
    RegionTable regions_;
    std::vector<std::string> content_;
    std::vector<std::string> hstr_;
    std::vector<std::vector<std::string>> istr_;
    std::vector<std::vector<int>> hcuts_;
    std::vector<std::vector<std::vector<int>>> icuts_;
    std::vector<std::int64_t> item_ins_, item_prefix_;
    std::vector<Role> role_;
    std::vector<int> slot_;
    std::vector<std::uint64_t> cov_;
    std::uint64_t all_slots_ = 0;
    std::size_t list_slot_ = 0;
    std::vector<std::size_t> space_;
    std::vector<std::vector<std::size_t>> ifield_off_;
    std::vector<std::int64_t> cells_[2];
    std::vector<Decision> store_;
    std::size_t states_ = 0;
};

// Minimum-HED tree for (doc, target); nullopt when the grammar cannot
// derive the document at all.
inline std::optional<OracleResult> compatible_parse(const Document& doc, const Grammar& g, const RecordSchema& rs,
                                                    const Record& target, const OracleOptions& opts = {}) {
    CompatibleParser p(doc, g, rs, target, opts);
    return p.run();
}

}  // namespace cpcfg
