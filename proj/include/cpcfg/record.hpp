#pragma once

// Record shapes derived from a schema, tree -> record conversion, leaf
// labels and record files.
//
// Record JSON (one record per file):
//     {"header": {"InvoiceID": "12345", ...},
//      "line_items": [{"Desc": "Apples", "Qty": "5", ...}, ...]}
//
// Tabular export: a header table and a line-item table, both keyed by
// record id in the first column.

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/grammar.hpp"
#include "cpcfg/record_types.hpp"
#include "cpcfg/tree.hpp"

namespace cpcfg {

enum class Role : std::uint8_t {
    Noise,         // N
    HeaderField,   // has a terminal alternative, outside the repeated group
    ItemField,     // field of the repeated group's item
    List,          // L := L I | I
    Item,          // I, one record item per occurrence
    Struct,        // other schema nonterminal above the list
    ItemStruct,    // other schema nonterminal inside an item
    Intermediate,  // generated by binarization
};

// Which schema nonterminals are fields, the repeated group and its item.
class RecordSchema {
public:
    RecordSchema() = default;

    static RecordSchema from_grammar(const Grammar& g) {
        if (g.schema_rules().empty()) throw SchemaError("grammar carries no schema rules");
        RecordSchema rs;
        std::map<std::string, std::vector<const SeqRule*>> alts;
        for (const auto& r : g.schema_rules()) alts[r.head].push_back(&r);
        std::vector<std::string> order;
        for (const auto& name : g.declared_order())
            if (name != kNoiseSymbol && alts.count(name)) order.push_back(name);

        std::set<std::string> fields;
        for (const auto& name : order) {
            bool terminal = false;
            for (auto* r : alts[name])
                if (r->lexical() && !r->epsilon()) terminal = true;
            if (!terminal) continue;
            for (auto* r : alts[name]) {
                if (r->lexical()) continue;
                bool ok = std::all_of(r->body.begin(), r->body.end(),
                                      [&](const std::string& s) { return s == name || s == kNoiseSymbol; });
                if (!ok)
                    throw SchemaError("field '" + name + "' may only repeat itself (" + to_string(*r) + ")");
            }
            fields.insert(name);
        }
        for (const auto& name : order) {
            if (fields.count(name)) continue;
            std::set<std::string> others;
            bool recursive = false;
            for (auto* r : alts[name]) {
                if (r->lexical()) continue;
                for (const auto& s : r->body) {
                    if (s == name) recursive = true;
                    else if (s != kNoiseSymbol) others.insert(s);
                }
            }
            if (recursive && others.size() == 1) {
                if (!rs.list_.empty()) throw SchemaError("more than one repeated group: " + rs.list_ + ", " + name);
                rs.list_ = name;
                rs.item_ = *others.begin();
            } else if (recursive) {
                throw SchemaError("unsupported recursion in '" + name + "'");
            }
        }
        // Reachability: header side stops at the list, item side starts at the item.
        auto reach = [&](const std::string& from, const std::string& stop) {
            std::set<std::string> seen{from};
            std::vector<std::string> stack{from};
            while (!stack.empty()) {
                auto s = stack.back();
                stack.pop_back();
                for (auto* r : alts[s])
                    for (const auto& t : r->body)
                        if (t != stop && t != kNoiseSymbol && seen.insert(t).second) stack.push_back(t);
            }
            return seen;
        };
        std::string start = g.name(g.start());
        auto header_side = reach(start, rs.list_);
        std::set<std::string> item_side;
        if (!rs.item_.empty()) {
            item_side = reach(rs.item_, "");
            if (item_side.count(rs.list_)) throw SchemaError("item '" + rs.item_ + "' reaches its own list");
        }
        for (const auto& name : order) {
            Role role;
            if (name == rs.list_) role = Role::List;
            else if (name == rs.item_) role = Role::Item;
            else if (item_side.count(name)) {
                if (header_side.count(name)) throw SchemaError("'" + name + "' used both in the header and in items");
                role = fields.count(name) ? Role::ItemField : Role::ItemStruct;
            } else {
                role = fields.count(name) ? Role::HeaderField : Role::Struct;
            }
            if (role == Role::HeaderField) rs.header_fields_.push_back(name);
            if (role == Role::ItemField) rs.item_fields_.push_back(name);
            rs.roles_[name] = role;
        }
        rs.roles_[std::string(kNoiseSymbol)] = Role::Noise;
        rs.by_symbol_.assign(g.symbol_count(), Role::Intermediate);
        rs.known_.assign(g.symbol_count(), false);
        for (SymbolId i = 0; i < g.symbol_count(); ++i) {
            auto it = rs.roles_.find(g.name(i));
            if (it != rs.roles_.end()) {
                rs.by_symbol_[i] = it->second;
                rs.known_[i] = true;
            } else if (g.is_intermediate(i)) {
                rs.known_[i] = true;
            }
        }
        return rs;
    }

    const std::vector<std::string>& header_fields() const { return header_fields_; }
    const std::vector<std::string>& item_fields() const { return item_fields_; }
    const std::string& list_symbol() const { return list_; }
    const std::string& item_symbol() const { return item_; }
    bool has_items() const { return !item_.empty(); }

    Role role(SymbolId s) const {
        if (s >= by_symbol_.size() || !known_[s]) throw SchemaError("nonterminal unknown to the record schema");
        return by_symbol_[s];
    }
    Role role(const std::string& name) const { return roles_.at(name); }
    bool is_field(SymbolId s) const {
        auto r = role(s);
        return r == Role::HeaderField || r == Role::ItemField;
    }

    Record empty_record() const {
        Record r;
        for (const auto& f : header_fields_) r.header[f] = "";
        return r;
    }
    Fields empty_item() const {
        Fields f;
        for (const auto& k : item_fields_) f[k] = "";
        return f;
    }

private:
    std::vector<std::string> header_fields_, item_fields_;
    std::string list_, item_;
    std::map<std::string, Role> roles_;
    std::vector<Role> by_symbol_;
    std::vector<bool> known_;
};

namespace detail {
inline void append_token(std::string& field, const std::string& token) {
    if (token.empty()) return;
    if (!field.empty()) field += ' ';
    field += token;
}
}  // namespace detail

// Splices out N and intermediates: every field collects its leaves'
// contents in traversal order, joined by single spaces; every outermost
// item node opens a new line-item.
inline Record tree_to_record(const ParseTree& t, const Grammar& g, const Document& doc, const RecordSchema& rs) {
    if (t.empty()) throw Error("tree_to_record: empty tree");
    Record rec = rs.empty_record();
    std::function<void(int, long)> rec_walk = [&](int i, long item) {
        const auto& n = t.node(i);
        Role role = rs.role(n.symbol);
        if (role == Role::Item && item < 0) {
            rec.items.push_back(rs.empty_item());
            item = static_cast<long>(rec.items.size()) - 1;
        }
        if (n.is_leaf()) {
            const auto& content = doc.box(n.boxes.at(0)).content;
            const auto& name = g.name(n.symbol);
            switch (role) {
                case Role::Noise: break;
                case Role::HeaderField: detail::append_token(rec.header[name], content); break;
                case Role::ItemField:
                    if (item < 0) throw SchemaError("item field '" + name + "' outside any " + rs.item_symbol());
                    detail::append_token(rec.items[static_cast<std::size_t>(item)][name], content);
                    break;
                default: throw SchemaError("leaf labelled with non-field '" + name + "'");
            }
            return;
        }
        if (n.left >= 0) rec_walk(n.left, item);
        if (n.right >= 0) rec_walk(n.right, item);
    };
    rec_walk(t.root, -1);
    return rec;
}

struct LabeledLeaf {
    BoxId box = 0;
    std::string field;  // field nonterminal or "N"

    friend bool operator==(const LabeledLeaf&, const LabeledLeaf&) = default;
};

// One label per leaf, ordered by box id. Only fields and N derive terminals,
// so a leaf's own symbol is its nearest field-or-noise ancestor.
inline std::vector<LabeledLeaf> leaf_labels(const ParseTree& t, const Grammar& g) {
    std::vector<LabeledLeaf> out;
    for (int i : t.leaves()) out.push_back({t.node(i).boxes.at(0), g.name(t.node(i).symbol)});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.box < b.box; });
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json record_to_json(const Record& r) {
    nlohmann::json j;
    j["header"] = r.header;
    j["line_items"] = nlohmann::json::array();
    for (const auto& it : r.items) j["line_items"].push_back(it);
    return j;
}

inline Record record_from_json(const nlohmann::json& j) {
    try {
        Record r;
        for (const auto& [k, v] : j.at("header").items()) r.header[k] = detail::normalize_space(v.get<std::string>());
        for (const auto& item : j.at("line_items")) {
            Fields f;
            for (const auto& [k, v] : item.items()) f[k] = detail::normalize_space(v.get<std::string>());
            r.items.push_back(std::move(f));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad record: ") + e.what());
    }
}

inline std::string format_record(const Record& r) { return record_to_json(r).dump(2) + "\n"; }

inline Record parse_record(const std::string& text) {
    try {
        return record_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(std::string("bad record: ") + e.what());
    }
}

inline Record read_record(const std::string& path) { return parse_record(detail::read_file(path)); }

inline void write_record(const Record& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << format_record(r);
    if (!out) throw Error("write failed for '" + path + "'");
}

// Missing fields as empty strings so records from different sources compare.
inline Record conform(Record r, const RecordSchema& rs) {
    for (const auto& f : rs.header_fields()) r.header.try_emplace(f);
    for (auto& it : r.items)
        for (const auto& f : rs.item_fields()) it.try_emplace(f);
    for (const auto& [k, v] : r.header)
        if (std::find(rs.header_fields().begin(), rs.header_fields().end(), k) == rs.header_fields().end())
            throw SchemaError("record header field '" + k + "' not in schema");
    for (const auto& it : r.items)
        for (const auto& [k, v] : it)
            if (std::find(rs.item_fields().begin(), rs.item_fields().end(), k) == rs.item_fields().end())
                throw SchemaError("record item field '" + k + "' not in schema");
    return r;
}

inline void write_record_tables(const std::vector<std::pair<std::string, Record>>& records, const RecordSchema& rs,
                                std::ostream& header_out, std::ostream& items_out) {
    auto cell = [](const Fields& f, const std::string& k) {
        auto it = f.find(k);
        return it == f.end() ? std::string() : detail::normalize_space(it->second);
    };
    header_out << "record_id";
    for (const auto& f : rs.header_fields()) header_out << '\t' << f;
    header_out << '\n';
    items_out << "record_id";
    for (const auto& f : rs.item_fields()) items_out << '\t' << f;
    items_out << '\n';
    for (const auto& [id, r] : records) {
        header_out << id;
        for (const auto& f : rs.header_fields()) header_out << '\t' << cell(r.header, f);
        header_out << '\n';
        for (const auto& it : r.items) {
            items_out << id;
            for (const auto& f : rs.item_fields()) items_out << '\t' << cell(it, f);
            items_out << '\n';
        }
    }
}

}  // namespace cpcfg
