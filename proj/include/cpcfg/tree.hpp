#pragma once

// Parse trees over a document's regions. Nodes come in three kinds:
//   leaf    lexical rule on a single box
//   binary  rule X -> Y Z over a split of the node's region
//   unit    X => Y on the same region (a unit or nullable alternative);
//           rule is kNoRule and the only child is `left`
//
// JSON form (version 1):
//   {"version": 1, "score": s, "root": {node}}
//   node = {"symbol": "X", "rule": id | null, "boxes": [ids],
//           "dir": "V" | "H",             (binary only)
//           "children": [node, ...]}      (0, 1 or 2 entries)

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/grammar.hpp"

namespace cpcfg {

inline constexpr int kTreeFormatVersion = 1;

struct TreeNode {
    SymbolId symbol = kNoSymbol;
    RuleId rule = kNoRule;
    std::vector<BoxId> boxes;  // sorted
    int left = -1;
    int right = -1;
    Direction dir = Direction::Vertical;

    bool is_unit() const { return rule == kNoRule; }
    bool is_leaf() const { return rule != kNoRule && left < 0; }
    bool is_binary() const { return rule != kNoRule && left >= 0; }
};

struct ParseTree {
    std::vector<TreeNode> nodes;
    int root = -1;
    double score = 0;

    bool empty() const { return root < 0; }
    const TreeNode& node(int i) const { return nodes.at(static_cast<std::size_t>(i)); }

    int add(TreeNode n) {
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    // Pre-order walk, left child before right.
    void visit(const std::function<void(int)>& f, int from = -2) const {
        int start = from == -2 ? root : from;
        if (start < 0) return;
        std::vector<int> stack{start};
        while (!stack.empty()) {
            int i = stack.back();
            stack.pop_back();
            f(i);
            const auto& n = node(i);
            if (n.right >= 0) stack.push_back(n.right);
            if (n.left >= 0) stack.push_back(n.left);
        }
    }

    // Leaf node indices in traversal order.
    std::vector<int> leaves() const {
        std::vector<int> out;
        visit([&](int i) {
            if (node(i).is_leaf()) out.push_back(i);
        });
        return out;
    }

    // Copy of the subtree rooted at node i.
    ParseTree subtree(int i) const {
        ParseTree out;
        std::function<int(int)> copy = [&](int k) {
            TreeNode n = node(k);
            if (n.left >= 0) n.left = copy(n.left);
            if (n.right >= 0) n.right = copy(n.right);
            return out.add(std::move(n));
        };
        out.root = copy(i);
        return out;
    }
};

// Structural equality: same symbols, rules, regions and split directions.
inline bool same_tree(const ParseTree& a, int ia, const ParseTree& b, int ib) {
    if ((ia < 0) != (ib < 0)) return false;
    if (ia < 0) return true;
    const auto& x = a.node(ia);
    const auto& y = b.node(ib);
    if (x.symbol != y.symbol || x.rule != y.rule || x.boxes != y.boxes) return false;
    if (x.is_binary() && x.dir != y.dir) return false;
    return same_tree(a, x.left, b, y.left) && same_tree(a, x.right, b, y.right);
}

inline bool same_tree(const ParseTree& a, const ParseTree& b) { return same_tree(a, a.root, b, b.root); }

namespace detail {

inline bool has_unit_derivation(const Grammar& g, SymbolId from, SymbolId to) {
    std::vector<bool> seen(g.symbol_count(), false);
    std::vector<SymbolId> stack{from};
    seen[from] = true;
    while (!stack.empty()) {
        auto s = stack.back();
        stack.pop_back();
        for (const auto& [h, t] : g.unit_links()) {
            if (h != s || seen[t]) continue;
            if (t == to) return true;
            seen[t] = true;
            stack.push_back(t);
        }
    }
    return false;
}

}  // namespace detail

// Throws Error describing the first violated tree invariant.
inline void check_tree(const ParseTree& t, const Grammar& g, const Document& doc) {
    if (t.empty()) throw Error("empty tree");
    t.visit([&](int i) {
        const auto& n = t.node(i);
        auto where = [&] { return "node " + std::to_string(i) + " (" + (n.symbol < g.symbol_count() ? g.name(n.symbol) : "?") + ")"; };
        if (n.symbol >= g.symbol_count()) throw Error(where() + ": unknown symbol");
        if (n.boxes.empty() || !std::is_sorted(n.boxes.begin(), n.boxes.end()) ||
            std::adjacent_find(n.boxes.begin(), n.boxes.end()) != n.boxes.end() || n.boxes.back() >= doc.size())
            throw Error(where() + ": bad box set");
        if (n.is_unit()) {
            if (n.left < 0 || n.right >= 0) throw Error(where() + ": unit node needs exactly one child");
            const auto& c = t.node(n.left);
            if (c.boxes != n.boxes) throw Error(where() + ": unit child covers a different region");
            if (!detail::has_unit_derivation(g, n.symbol, c.symbol)) throw Error(where() + ": no unit derivation");
            return;
        }
        if (n.rule >= g.rules().size()) throw Error(where() + ": rule absent from grammar");
        const auto& r = g.rule(n.rule);
        if (r.head != n.symbol) throw Error(where() + ": rule head mismatch");
        if (r.is_lexical) {
            if (n.left >= 0 || n.right >= 0) throw Error(where() + ": leaf with children");
            if (n.boxes.size() != 1) throw Error(where() + ": leaf region must be a single box");
            if (!terminal_accepts(r.terminal, doc.terminal(n.boxes[0]))) throw Error(where() + ": terminal mismatch");
            return;
        }
        if (n.left < 0 || n.right < 0) throw Error(where() + ": binary node needs two children");
        const auto& l = t.node(n.left);
        const auto& rr = t.node(n.right);
        if (l.symbol != r.left || rr.symbol != r.right) throw Error(where() + ": children do not match rule");
        std::vector<BoxId> joined;
        std::merge(l.boxes.begin(), l.boxes.end(), rr.boxes.begin(), rr.boxes.end(), std::back_inserter(joined));
        if (joined != n.boxes || std::adjacent_find(joined.begin(), joined.end()) != joined.end())
            throw Error(where() + ": children do not partition the region");
    });
}

inline nlohmann::json tree_to_json(const ParseTree& t, const Grammar& g) {
    std::function<nlohmann::json(int)> rec = [&](int i) {
        const auto& n = t.node(i);
        nlohmann::json j;
        j["symbol"] = g.name(n.symbol);
        j["rule"] = n.is_unit() ? nlohmann::json(nullptr) : nlohmann::json(n.rule);
        j["boxes"] = n.boxes;
        if (n.is_binary()) j["dir"] = std::string(direction_name(n.dir));
        auto kids = nlohmann::json::array();
        if (n.left >= 0) kids.push_back(rec(n.left));
        if (n.right >= 0) kids.push_back(rec(n.right));
        j["children"] = std::move(kids);
        return j;
    };
    nlohmann::json out;
    out["version"] = kTreeFormatVersion;
    out["score"] = t.score;
    out["root"] = t.empty() ? nlohmann::json(nullptr) : rec(t.root);
    return out;
}

inline ParseTree tree_from_json(const nlohmann::json& j, const Grammar& g) {
    try {
        if (j.at("version").get<int>() != kTreeFormatVersion)
            throw InputError("unsupported tree format version " + j.at("version").dump());
        ParseTree t;
        t.score = j.at("score").get<double>();
        std::function<int(const nlohmann::json&)> rec = [&](const nlohmann::json& n) {
            TreeNode node;
            node.symbol = g.require(n.at("symbol").get<std::string>());
            node.rule = n.at("rule").is_null() ? kNoRule : n.at("rule").get<RuleId>();
            node.boxes = n.at("boxes").get<std::vector<BoxId>>();
            if (n.contains("dir")) node.dir = n.at("dir").get<std::string>() == "H" ? Direction::Horizontal : Direction::Vertical;
            const auto& kids = n.at("children");
            if (kids.size() > 2) throw InputError("tree node with more than two children");
            if (kids.size() > 0) node.left = rec(kids[0]);
            if (kids.size() > 1) node.right = rec(kids[1]);
            return t.add(std::move(node));
        };
        if (!j.at("root").is_null()) t.root = rec(j.at("root"));
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad tree JSON: ") + e.what());
    } catch (const SchemaError& e) {
        throw InputError(std::string("bad tree JSON: ") + e.what());
    }
}

}  // namespace cpcfg
