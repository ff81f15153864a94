#pragma once

// Record schemas and their compilation into the CNF grammar consumed by the
// 2D chart parser.
//
// Schema DSL, one declaration per line ('#' starts a comment):
//
//     Head := Alt | Alt | ...
//
// where each Alt is one of
//     STRING | NUMBER | MONEY      a base terminal
//     EPS                          the empty string (the head is optional)
//     A B C                        a sequence of nonterminals
//     (A B C)!                     every ordering of the listed nonterminals
//
// The start symbol is the one declared nonterminal no other declaration
// references. `N` is the reserved noise nonterminal; it is declared
// implicitly as `N := N N | STRING` and may be referenced by the schema.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cpcfg/common.hpp"

namespace cpcfg {

enum class Terminal : std::uint8_t { String, Number, Money, Noise, Epsilon };

inline std::string_view terminal_name(Terminal t) {
    switch (t) {
        case Terminal::String: return "STRING";
        case Terminal::Number: return "NUMBER";
        case Terminal::Money: return "MONEY";
        case Terminal::Noise: return "NOISE";
        case Terminal::Epsilon: return "EPS";
    }
    return "?";
}

inline std::optional<Terminal> terminal_from_name(std::string_view s) {
    if (s == "STRING") return Terminal::String;
    if (s == "NUMBER") return Terminal::Number;
    if (s == "MONEY") return Terminal::Money;
    if (s == "NOISE") return Terminal::Noise;
    if (s == "EPS") return Terminal::Epsilon;
    return std::nullopt;
}

// Base types are nested: every MONEY token is a NUMBER and every token is a
// STRING. A lexical rule for `rule_terminal` accepts a box typed `box_terminal`
// when the box type is at least as specific.
inline bool terminal_accepts(Terminal rule_terminal, Terminal box_terminal) {
    switch (rule_terminal) {
        case Terminal::String:
        case Terminal::Noise: return true;
        case Terminal::Number: return box_terminal == Terminal::Number || box_terminal == Terminal::Money;
        case Terminal::Money: return box_terminal == Terminal::Money;
        case Terminal::Epsilon: return false;
    }
    return false;
}

inline constexpr std::string_view kNoiseSymbol = "N";
inline constexpr std::size_t kMaxPermutationArity = 6;

struct Alternative {
    enum class Kind : std::uint8_t { Terminal, Sequence, Permutation, Epsilon };
    Kind kind = Kind::Sequence;
    Terminal terminal = Terminal::String;
    std::vector<std::string> symbols;
};

struct SchemaDecl {
    std::string head;
    std::vector<Alternative> alternatives;
    int line = 0;
};

// A production at some stage of the compile pipeline. Lexical productions
// carry `terminal` and an empty body.
struct SeqRule {
    std::string head;
    std::vector<std::string> body;
    std::optional<Terminal> terminal;
    bool permute = false;
    bool from_permutation = false;  // one ordering of an expanded "!" rule; not part of identity

    bool lexical() const { return terminal.has_value(); }
    bool epsilon() const { return terminal == Terminal::Epsilon; }
    bool unit() const { return !terminal && body.size() == 1; }

    friend bool operator==(const SeqRule& a, const SeqRule& b) {
        return std::tie(a.head, a.body, a.terminal, a.permute) == std::tie(b.head, b.body, b.terminal, b.permute);
    }
    friend auto operator<=>(const SeqRule& a, const SeqRule& b) {
        return std::tie(a.head, a.body, a.terminal, a.permute) <=> std::tie(b.head, b.body, b.terminal, b.permute);
    }
};

inline bool is_noise_rule(const SeqRule& r) {
    return r.body.size() == 2 && ((r.body[0] == kNoiseSymbol && r.body[1] == r.head) ||
                                  (r.body[1] == kNoiseSymbol && r.body[0] == r.head));
}

inline std::string to_string(const SeqRule& r) {
    std::string s = r.head + " :=";
    if (r.terminal) {
        s += " ";
        s += terminal_name(*r.terminal);
    } else {
        if (r.permute) s += " (";
        for (std::size_t i = 0; i < r.body.size(); ++i) s += (i == 0 && r.permute ? "" : " ") + r.body[i];
        if (r.permute) s += ")!";
    }
    return s;
}

// ---------------------------------------------------------------------------
// DSL parsing

namespace detail {

inline bool is_identifier(std::string_view s) {
    if (s.empty()) return false;
    auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
    auto digit = [](char c) { return c >= '0' && c <= '9'; };
    if (!alpha(s.front())) return false;
    return std::all_of(s.begin(), s.end(), [&](char c) { return alpha(c) || digit(c); });
}

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline Alternative parse_alternative(std::string_view text, int line) {
    text = trim(text);
    if (text.empty()) throw InputError("empty alternative", line);
    Alternative alt;
    if (text.front() == '(') {
        auto close = text.rfind(')');
        if (close == std::string_view::npos) throw InputError("unbalanced '(' in alternative", line);
        auto tail = trim(text.substr(close + 1));
        if (tail == "!") {
            alt.kind = Alternative::Kind::Permutation;
        } else if (tail.empty()) {
            alt.kind = Alternative::Kind::Sequence;
        } else {
            throw InputError("unexpected '" + std::string(tail) + "' after ')'", line);
        }
        alt.symbols = split_ws(text.substr(1, close - 1));
        if (alt.symbols.empty()) throw InputError("empty tuple", line);
    } else {
        alt.symbols = split_ws(text);
        if (alt.symbols.size() == 1) {
            if (auto t = terminal_from_name(alt.symbols.front())) {
                if (*t == Terminal::Noise) throw InputError("NOISE is not a schema terminal", line);
                alt.kind = *t == Terminal::Epsilon ? Alternative::Kind::Epsilon : Alternative::Kind::Terminal;
                alt.terminal = *t;
                alt.symbols.clear();
                return alt;
            }
        }
        alt.kind = Alternative::Kind::Sequence;
    }
    for (const auto& s : alt.symbols) {
        if (terminal_from_name(s)) throw InputError("terminal '" + s + "' may only appear alone", line);
        if (!is_identifier(s)) throw InputError("invalid symbol '" + s + "'", line);
    }
    return alt;
}

}  // namespace detail

inline std::vector<SchemaDecl> parse_schema(std::string_view text) {
    std::vector<SchemaDecl> decls;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view view = raw;
        if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = detail::trim(view);
        if (view.empty()) continue;
        auto def = view.find(":=");
        if (def == std::string_view::npos) throw InputError("expected 'Head := ...'", line);
        SchemaDecl decl;
        decl.line = line;
        decl.head = std::string(detail::trim(view.substr(0, def)));
        if (!detail::is_identifier(decl.head) || terminal_from_name(decl.head))
            throw InputError("invalid head '" + decl.head + "'", line);
        auto rest = view.substr(def + 2);
        std::size_t start = 0;
        int depth = 0;
        for (std::size_t i = 0; i <= rest.size(); ++i) {
            if (i < rest.size() && rest[i] == '(') ++depth;
            if (i < rest.size() && rest[i] == ')') --depth;
            if (i == rest.size() || (rest[i] == '|' && depth == 0)) {
                decl.alternatives.push_back(detail::parse_alternative(rest.substr(start, i - start), line));
                start = i + 1;
            }
        }
        decls.push_back(std::move(decl));
    }
    return decls;
}

inline std::vector<SchemaDecl> read_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open schema file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_schema(buf.str());
}

// ---------------------------------------------------------------------------
// Compile pipeline

struct CompileOptions {
    // Add X -> X N next to X -> N X, reading Fig.-3 style "(N X)!" as both orders.
    bool noise_both_orders = true;
};

struct ValidatedSchema {
    std::vector<SeqRule> rules;  // declared alternatives, one rule each
    std::string start;
    std::vector<std::string> order;  // declared heads in file order
};

inline ValidatedSchema validate_schema(const std::vector<SchemaDecl>& decls) {
    ValidatedSchema out;
    std::set<std::string> declared;
    for (const auto& d : decls) {
        if (!declared.insert(d.head).second)
            throw SchemaError("line " + std::to_string(d.line) + ": duplicate declaration of '" + d.head + "'");
        if (d.alternatives.empty())
            throw SchemaError("line " + std::to_string(d.line) + ": '" + d.head + "' has no alternatives");
        out.order.push_back(d.head);
    }
    std::set<std::string> referenced;
    for (const auto& d : decls) {
        for (const auto& alt : d.alternatives) {
            SeqRule r;
            r.head = d.head;
            switch (alt.kind) {
                case Alternative::Kind::Terminal:
                case Alternative::Kind::Epsilon: r.terminal = alt.terminal; break;
                case Alternative::Kind::Permutation: {
                    if (alt.symbols.size() < 2 || alt.symbols.size() > kMaxPermutationArity)
                        throw SchemaError("line " + std::to_string(d.line) + ": permutation arity " +
                                          std::to_string(alt.symbols.size()) + " outside 2.." +
                                          std::to_string(kMaxPermutationArity));
                    std::set<std::string> distinct(alt.symbols.begin(), alt.symbols.end());
                    if (distinct.size() != alt.symbols.size())
                        throw SchemaError("line " + std::to_string(d.line) +
                                          ": permutation members must be distinct");
                    r.permute = true;
                    r.body = alt.symbols;
                    break;
                }
                case Alternative::Kind::Sequence: r.body = alt.symbols; break;
            }
            for (const auto& s : r.body) {
                if (s != kNoiseSymbol && !declared.count(s))
                    throw SchemaError("line " + std::to_string(d.line) + ": undeclared nonterminal '" + s + "'");
                if (s != d.head) referenced.insert(s);
            }
            if (std::find(out.rules.begin(), out.rules.end(), r) == out.rules.end()) out.rules.push_back(r);
        }
    }
    std::vector<std::string> starts;
    for (const auto& h : out.order)
        if (h != kNoiseSymbol && !referenced.count(h)) starts.push_back(h);
    if (starts.empty()) throw SchemaError("no start symbol: every nonterminal is referenced");
    if (starts.size() > 1) {
        std::string names;
        for (const auto& s : starts) names += (names.empty() ? "" : ", ") + s;
        throw SchemaError("multiple start symbols: " + names);
    }
    out.start = starts.front();
    return out;
}

// Replaces every "!" rule of arity k by its k! orderings (lexicographic in
// the written order); other rules pass through.
inline std::vector<SeqRule> expand_permutations(const std::vector<SeqRule>& rules) {
    std::vector<SeqRule> out;
    auto push = [&](SeqRule r) {
        if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(std::move(r));
    };
    for (const auto& r : rules) {
        if (!r.permute) {
            push(r);
            continue;
        }
        if (r.body.size() < 2 || r.body.size() > kMaxPermutationArity)
            throw SchemaError("permutation arity " + std::to_string(r.body.size()) + " outside 2.." +
                              std::to_string(kMaxPermutationArity) + " for '" + r.head + "'");
        std::vector<std::size_t> idx(r.body.size());
        std::iota(idx.begin(), idx.end(), 0);
        do {
            SeqRule p;
            p.head = r.head;
            p.from_permutation = true;
            for (auto i : idx) p.body.push_back(r.body[i]);
            push(std::move(p));
        } while (std::next_permutation(idx.begin(), idx.end()));
    }
    return out;
}

// Adds X -> N X (and X -> X N when `both_orders`) for every head X other
// than N, plus N := N N | STRING. Idempotent.
inline std::vector<SeqRule> augment_noise(const std::vector<SeqRule>& rules, bool both_orders = true) {
    std::vector<SeqRule> out = rules;
    std::set<SeqRule> seen(rules.begin(), rules.end());
    auto push = [&](SeqRule r) {
        if (seen.insert(r).second) out.push_back(std::move(r));
    };
    std::vector<std::string> heads;
    for (const auto& r : rules)
        if (r.head != kNoiseSymbol && std::find(heads.begin(), heads.end(), r.head) == heads.end())
            heads.push_back(r.head);
    const std::string n{kNoiseSymbol};
    for (const auto& h : heads) {
        push(SeqRule{h, {n, h}, std::nullopt, false});
        if (both_orders) push(SeqRule{h, {h, n}, std::nullopt, false});
    }
    push(SeqRule{n, {n, n}, std::nullopt, false});
    push(SeqRule{n, {}, Terminal::String, false});
    return out;
}

inline std::string intermediate_name(std::span<const std::string> symbols) {
    std::string s = "<";
    for (std::size_t i = 0; i < symbols.size(); ++i) s += (i ? "." : "") + symbols[i];
    return s + ">";
}

// Intermediate for any ordering of `symbols`: <A+B+C>, components sorted.
inline std::string unordered_intermediate_name(std::span<const std::string> symbols) {
    std::vector<std::string> v(symbols.begin(), symbols.end());
    std::sort(v.begin(), v.end());
    std::string s = "<";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "+" : "") + v[i];
    return s + ">";
}

using UnitLink = std::pair<std::string, std::string>;  // head => target on the same region

struct CnfRules {
    std::vector<SeqRule> rules;  // binary and lexical (incl. EPS)
    std::vector<UnitLink> units;
    std::map<std::string, std::vector<std::string>> intermediates;  // name -> covered symbols
};

namespace detail {
inline bool is_intermediate_name(const std::string& s) { return !s.empty() && s.front() == '<'; }
}  // namespace detail

// Right-binarizes sequences longer than two. Generated intermediates are
// named by the symbols they cover, so shared suffixes share one
// intermediate. Suffixes of permutation orderings are named by their
// symbol set: every ordering of that set is derivable anyway.
// Arity-1 productions X -> Y become unit links, which the compiled grammar
// closes transitively (see Grammar::unit_paths).
inline CnfRules to_cnf(const std::vector<SeqRule>& rules) {
    CnfRules out;
    std::set<SeqRule> seen;
    auto push = [&](SeqRule r) {
        if (seen.insert(r).second) out.rules.push_back(std::move(r));
    };
    for (const auto& src : rules) {
        if (src.permute) throw SchemaError("to_cnf: unexpanded permutation rule for '" + src.head + "'");
        if (src.lexical()) {
            push(SeqRule{src.head, {}, src.terminal, false});
            continue;
        }
        if (src.body.empty()) throw SchemaError("to_cnf: empty body for '" + src.head + "'");
        if (src.body.size() == 1) {
            UnitLink u{src.head, src.body.front()};
            if (u.first != u.second && std::find(out.units.begin(), out.units.end(), u) == out.units.end())
                out.units.push_back(u);
            continue;
        }
        std::string head = src.head;
        for (std::size_t i = 0; i + 2 < src.body.size(); ++i) {
            std::span<const std::string> suffix(src.body.data() + i + 1, src.body.size() - i - 1);
            auto name = src.from_permutation ? unordered_intermediate_name(suffix) : intermediate_name(suffix);
            std::vector<std::string> covered(suffix.begin(), suffix.end());
            if (src.from_permutation) std::sort(covered.begin(), covered.end());
            out.intermediates.emplace(name, std::move(covered));
            push(SeqRule{head, {src.body[i], name}, std::nullopt, false});
            head = name;
        }
        push(SeqRule{head, {src.body[src.body.size() - 2], src.body.back()}, std::nullopt, false});
    }
    return out;
}

struct NullableResult {
    std::set<std::string> nullable;
    std::vector<UnitLink> units;  // effective alternatives X => Y from X -> Y Z with Z nullable
};

// Fixed point of ε-propagation over binary rules and unit links. For every
// X -> Y Z with Z nullable the effective alternative X => Y is emitted
// (symmetrically for Y), so the parser never assigns ε to a region. Noise
// rules are not elided: X => N would let a field consist of noise alone.
inline NullableResult nullable_closure(const CnfRules& cnf, const std::string& start) {
    NullableResult out;
    auto& nullable = out.nullable;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& r : cnf.rules) {
            if (nullable.count(r.head)) continue;
            if (r.epsilon() || (!r.lexical() && nullable.count(r.body[0]) && nullable.count(r.body[1]))) {
                nullable.insert(r.head);
                changed = true;
            }
        }
        for (const auto& [head, target] : cnf.units) {
            if (!nullable.count(head) && nullable.count(target)) {
                nullable.insert(head);
                changed = true;
            }
        }
    }
    if (nullable.count(start))
        throw SchemaError("start symbol '" + start + "' is nullable: a document must contain something");
    auto push = [&](std::string head, std::string target) {
        UnitLink u{std::move(head), std::move(target)};
        if (u.first == u.second) return;
        if (std::find(out.units.begin(), out.units.end(), u) == out.units.end()) out.units.push_back(std::move(u));
    };
    for (const auto& r : cnf.rules) {
        if (r.lexical() || is_noise_rule(r)) continue;
        if (nullable.count(r.body[1])) push(r.head, r.body[0]);
        if (nullable.count(r.body[0])) push(r.head, r.body[1]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Compiled grammar

enum class SymbolKind : std::uint8_t { Schema, Noise, Intermediate };

struct SymbolInfo {
    std::string name;
    SymbolKind kind = SymbolKind::Schema;
    std::vector<SymbolId> components;  // symbols an intermediate covers
};

struct Rule {
    RuleId id = kNoRule;
    SymbolId head = kNoSymbol;
    SymbolId left = kNoSymbol;   // binary only
    SymbolId right = kNoSymbol;  // binary only
    Terminal terminal = Terminal::String;  // lexical only
    bool is_lexical = false;
    bool noise = false;
};

// A chain of unit derivations X => ... => target on one region. `path`
// starts at X, ends at target and lists the schema symbols passed in between
// (intermediates in the middle are dropped: they carry no record meaning).
struct UnitPath {
    SymbolId target = kNoSymbol;
    std::vector<SymbolId> path;
};

class Grammar {
public:
    Grammar() = default;

    // Builds a grammar from CNF productions (binary or lexical, no EPS) and
    // unit links. `schema_rules` are the declared productions, kept for
    // record-shape analysis; hand-built grammars may leave them empty.
    static Grammar from_cnf(const std::vector<SeqRule>& cnf, const std::vector<UnitLink>& units,
                            const std::string& start, const std::set<std::string>& nullable = {},
                            const std::map<std::string, std::vector<std::string>>& intermediates = {},
                            std::vector<SeqRule> schema_rules = {},
                            const std::vector<std::string>& declared_order = {}) {
        Grammar g;
        std::map<std::string, SymbolId> ids;
        auto add = [&](const std::string& name) {
            if (ids.count(name)) return;
            SymbolInfo info;
            info.name = name;
            info.kind = name == kNoiseSymbol ? SymbolKind::Noise
                        : detail::is_intermediate_name(name) ? SymbolKind::Intermediate
                                                             : SymbolKind::Schema;
            ids[name] = static_cast<SymbolId>(g.symbols_.size());
            g.symbols_.push_back(std::move(info));
        };
        std::set<std::string> used{start};
        for (const auto& r : cnf) {
            if (r.epsilon()) throw SchemaError("EPS production reached the compiled grammar");
            if (!r.lexical() && r.body.size() != 2) throw SchemaError("non-CNF production: " + to_string(r));
            used.insert(r.head);
            used.insert(r.body.begin(), r.body.end());
        }
        for (const auto& [h, t] : units) {
            used.insert(h);
            used.insert(t);
        }
        for (const auto& name : declared_order)
            if (used.count(name)) add(name);
        std::vector<std::string> rest;
        for (const auto& name : used)
            if (!detail::is_intermediate_name(name) && !ids.count(name) && name != kNoiseSymbol) rest.push_back(name);
        for (const auto& name : rest) add(name);
        if (used.count(std::string(kNoiseSymbol))) add(std::string(kNoiseSymbol));
        for (const auto& name : used)
            if (detail::is_intermediate_name(name)) add(name);  // sorted by name
        for (auto& info : g.symbols_) {
            if (info.kind != SymbolKind::Intermediate) continue;
            if (auto it = intermediates.find(info.name); it != intermediates.end())
                for (const auto& c : it->second) info.components.push_back(ids.at(c));
        }

        for (const auto& r : cnf) {
            Rule out;
            out.head = ids.at(r.head);
            if (r.lexical()) {
                out.is_lexical = true;
                out.terminal = *r.terminal;
            } else {
                out.left = ids.at(r.body[0]);
                out.right = ids.at(r.body[1]);
                out.noise = is_noise_rule(r);
            }
            g.rules_.push_back(out);
        }
        auto key = [](const Rule& r) { return std::tie(r.head, r.left, r.right, r.terminal); };
        std::sort(g.rules_.begin(), g.rules_.end(), [&](const Rule& a, const Rule& b) {
            if (a.is_lexical != b.is_lexical) return a.is_lexical;  // lexical rules first
            return key(a) < key(b);
        });
        g.rules_.erase(std::unique(g.rules_.begin(), g.rules_.end(),
                                   [&](const Rule& a, const Rule& b) {
                                       return a.is_lexical == b.is_lexical && key(a) == key(b);
                                   }),
                       g.rules_.end());
        for (const auto& [h, t] : units) g.units_.emplace_back(ids.at(h), ids.at(t));
        std::sort(g.units_.begin(), g.units_.end());
        g.units_.erase(std::unique(g.units_.begin(), g.units_.end()), g.units_.end());

        g.start_ = ids.at(start);
        g.noise_ = ids.count(std::string(kNoiseSymbol)) ? ids.at(std::string(kNoiseSymbol)) : kNoSymbol;
        g.nullable_.assign(g.symbols_.size(), false);
        for (const auto& n : nullable)
            if (ids.count(n)) g.nullable_[ids.at(n)] = true;
        g.schema_rules_ = std::move(schema_rules);
        g.declared_order_ = declared_order;
        g.prune_unreachable();
        g.index();
        return g;
    }

    const std::vector<SymbolInfo>& symbols() const { return symbols_; }
    const std::vector<Rule>& rules() const { return rules_; }
    const Rule& rule(RuleId id) const { return rules_.at(id); }
    const SymbolInfo& symbol(SymbolId id) const { return symbols_.at(id); }
    const std::string& name(SymbolId id) const { return symbols_.at(id).name; }
    std::size_t symbol_count() const { return symbols_.size(); }
    SymbolId start() const { return start_; }
    SymbolId noise() const { return noise_; }
    bool nullable(SymbolId id) const { return nullable_.at(id); }
    bool is_intermediate(SymbolId id) const { return symbols_.at(id).kind == SymbolKind::Intermediate; }

    std::optional<SymbolId> find(std::string_view name) const {
        for (SymbolId i = 0; i < symbols_.size(); ++i)
            if (symbols_[i].name == name) return i;
        return std::nullopt;
    }
    SymbolId require(std::string_view name) const {
        auto id = find(name);
        if (!id) throw SchemaError("unknown nonterminal '" + std::string(name) + "'");
        return *id;
    }

    std::span<const RuleId> lexical_rules() const { return lexical_; }
    std::span<const RuleId> binary_rules() const { return binary_; }
    std::span<const RuleId> binary_by_left(SymbolId left) const { return by_left_.at(left); }
    std::span<const RuleId> rules_by_head(SymbolId head) const { return by_head_.at(head); }
    const std::vector<std::pair<SymbolId, SymbolId>>& unit_links() const { return units_; }

    // Every unit derivation from `head`, the trivial one ([head]) first.
    std::span<const UnitPath> unit_paths(SymbolId head) const { return unit_paths_.at(head); }

    const std::vector<SeqRule>& schema_rules() const { return schema_rules_; }
    const std::vector<std::string>& declared_order() const { return declared_order_; }

    std::string describe_rule(RuleId id) const {
        const auto& r = rules_.at(id);
        std::string s = name(r.head) + " ->";
        if (r.is_lexical) {
            s += " ";
            s += terminal_name(r.terminal);
        } else {
            s += " " + name(r.left) + " " + name(r.right);
        }
        return s;
    }

    // Canonical text form; the grammar hash is taken over it.
    std::string canonical_text() const {
        std::string s = "start " + name(start_) + "\n";
        for (SymbolId i = 0; i < symbols_.size(); ++i) {
            s += "symbol " + std::to_string(i) + " " + symbols_[i].name;
            s += nullable_[i] ? " nullable\n" : "\n";
        }
        for (RuleId i = 0; i < rules_.size(); ++i) s += "rule " + std::to_string(i) + " " + describe_rule(i) + "\n";
        for (const auto& [h, t] : units_) s += "unit " + name(h) + " => " + name(t) + "\n";
        return s;
    }

    std::uint64_t hash() const { return detail::fnv1a(canonical_text()); }

private:
    void prune_unreachable() {
        std::vector<bool> reach(symbols_.size(), false);
        reach[start_] = true;
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& r : rules_) {
                if (!reach[r.head] || r.is_lexical) continue;
                for (auto s : {r.left, r.right})
                    if (!reach[s]) reach[s] = changed = true;
            }
            for (const auto& [h, t] : units_)
                if (reach[h] && !reach[t]) reach[t] = changed = true;
        }
        std::erase_if(rules_, [&](const Rule& r) { return !reach[r.head]; });
        std::erase_if(units_, [&](const auto& u) { return !reach[u.first]; });
        for (RuleId i = 0; i < rules_.size(); ++i) rules_[i].id = i;
    }

    void index() {
        lexical_.clear();
        binary_.clear();
        by_left_.assign(symbols_.size(), {});
        by_head_.assign(symbols_.size(), {});
        for (const auto& r : rules_) {
            (r.is_lexical ? lexical_ : binary_).push_back(r.id);
            if (!r.is_lexical) by_left_[r.left].push_back(r.id);
            by_head_[r.head].push_back(r.id);
        }
        std::vector<std::vector<SymbolId>> adj(symbols_.size());
        for (const auto& [h, t] : units_) adj[h].push_back(t);
        unit_paths_.assign(symbols_.size(), {});
        for (SymbolId x = 0; x < symbols_.size(); ++x) {
            // BFS over (symbol, schema symbols so far); schema symbols may not repeat.
            std::set<std::pair<SymbolId, std::vector<SymbolId>>> seen;
            std::vector<std::pair<SymbolId, std::vector<SymbolId>>> frontier{{x, {x}}};
            seen.insert(frontier.front());
            auto& out = unit_paths_[x];
            out.push_back({x, {x}});
            while (!frontier.empty()) {
                std::vector<std::pair<SymbolId, std::vector<SymbolId>>> next;
                for (const auto& [cur, chain] : frontier) {
                    for (auto t : adj[cur]) {
                        if (t == x || std::find(chain.begin(), chain.end(), t) != chain.end()) continue;
                        auto extended = chain;
                        if (!is_intermediate(t)) extended.push_back(t);
                        if (!seen.insert({t, extended}).second) continue;
                        auto path = extended;
                        if (is_intermediate(t)) path.push_back(t);
                        UnitPath up{t, std::move(path)};
                        bool dup = std::any_of(out.begin(), out.end(), [&](const UnitPath& p) {
                            return p.target == up.target && p.path == up.path;
                        });
                        if (!dup) out.push_back(std::move(up));
                        next.emplace_back(t, std::move(extended));
                    }
                }
                frontier = std::move(next);
            }
        }
    }

    std::vector<SymbolInfo> symbols_;
    std::vector<Rule> rules_;
    std::vector<std::pair<SymbolId, SymbolId>> units_;
    SymbolId start_ = kNoSymbol;
    SymbolId noise_ = kNoSymbol;
    std::vector<bool> nullable_;
    std::vector<RuleId> lexical_;
    std::vector<RuleId> binary_;
    std::vector<std::vector<RuleId>> by_left_;
    std::vector<std::vector<RuleId>> by_head_;
    std::vector<std::vector<UnitPath>> unit_paths_;
    std::vector<SeqRule> schema_rules_;
    std::vector<std::string> declared_order_;
};

inline Grammar compile_schema(const std::vector<SchemaDecl>& decls, const CompileOptions& opts = {}) {
    auto schema = validate_schema(decls);
    auto expanded = expand_permutations(schema.rules);
    auto augmented = augment_noise(expanded, opts.noise_both_orders);
    auto cnf = to_cnf(augmented);
    auto closed = nullable_closure(cnf, schema.start);
    std::vector<SeqRule> rules;
    for (const auto& r : cnf.rules)
        if (!r.epsilon()) rules.push_back(r);
    auto units = cnf.units;
    for (const auto& u : closed.units)
        if (std::find(units.begin(), units.end(), u) == units.end()) units.push_back(u);
    auto order = schema.order;
    if (std::find(order.begin(), order.end(), kNoiseSymbol) == order.end()) order.emplace_back(kNoiseSymbol);
    return Grammar::from_cnf(rules, units, schema.start, closed.nullable, cnf.intermediates, schema.rules, order);
}

inline Grammar compile_schema(std::string_view dsl, const CompileOptions& opts = {}) {
    return compile_schema(parse_schema(dsl), opts);
}

// Structural checks on a compiled grammar; returns human-readable violations.
inline std::vector<std::string> check_cnf(const Grammar& g) {
    std::vector<std::string> bad;
    for (RuleId i = 0; i < g.rules().size(); ++i) {
        const auto& r = g.rules()[i];
        if (r.id != i) bad.push_back("non-dense rule id " + std::to_string(r.id));
        if (r.is_lexical) {
            if (r.terminal == Terminal::Epsilon) bad.push_back("EPS production: " + g.describe_rule(i));
            if (r.left != kNoSymbol || r.right != kNoSymbol)
                bad.push_back("lexical rule with children: " + g.describe_rule(i));
        } else if (r.left >= g.symbol_count() || r.right >= g.symbol_count()) {
            bad.push_back("binary rule without two nonterminals: " + g.describe_rule(i));
        }
    }
    for (const auto& [h, t] : g.unit_links())
        if (h == t) bad.push_back("self unit link on " + g.name(h));
    return bad;
}

inline constexpr std::string_view kInvoiceSchema = R"(# Invoice record: header fields plus a list of line-items.
Invoice   := (InvoiceID Date LineItems TotalAmt)!
InvoiceID := STRING | EPS
Date      := STRING | Date Date | EPS
TotalAmt  := MONEY | EPS
LineItems := LineItems LineItem | LineItem
LineItem  := (Desc Qty Rate Amt)!
Desc      := STRING | Desc Desc
Qty       := NUMBER | EPS
Rate      := NUMBER | EPS
Amt       := MONEY | EPS
)";

}  // namespace cpcfg
