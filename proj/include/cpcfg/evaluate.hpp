#pragma once

// Corpus-level scoring: per-field and overall counts in HED and SPADE
// modes, rendered as a fixed-width table (one row per mode, F1 in percent,
// item fields then header fields) followed by precision/recall detail.

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcfg/metrics.hpp"
#include "cpcfg/record.hpp"

namespace cpcfg {

struct EvalReport {
    std::size_t documents = 0;
    EditCounts hed_total, spade_total;
    std::map<std::string, EditCounts> hed_fields, spade_fields;

    void add(const Record& pred, const Record& truth) {
        ++documents;
        for (auto& [k, s] : field_breakdown(pred, truth, SedCompare{})) hed_fields[k] += s.counts;
        for (auto& [k, s] : field_breakdown(pred, truth, SpadeCompare{})) spade_fields[k] += s.counts;
        hed_total += hed_with(pred, truth, SedCompare{}).counts;
        spade_total += hed_with(pred, truth, SpadeCompare{}).counts;
    }
};

inline EvalReport evaluate(const std::vector<std::pair<Record, Record>>& pairs, const RecordSchema& rs) {
    EvalReport r;
    for (const auto& [pred, truth] : pairs) r.add(conform(pred, rs), conform(truth, rs));
    return r;
}

inline std::string format_report(const EvalReport& r, const RecordSchema& rs) {
    std::vector<std::string> cols = rs.item_fields();
    cols.insert(cols.end(), rs.header_fields().begin(), rs.header_fields().end());
    auto pct = [](double v) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
        return std::string(buf);
    };
    auto field = [](const std::map<std::string, EditCounts>& m, const std::string& k) {
        auto it = m.find(k);
        return it == m.end() ? EditCounts{} : it->second;
    };
    std::ostringstream out;
    auto cell = [&](const std::string& s, std::size_t w) {
        out << s;
        for (std::size_t i = s.size(); i < w; ++i) out << ' ';
    };
    out << "documents: " << r.documents << "\n\n";
    cell("F1 (%)", 8);
    cell("Overall", 10);
    for (const auto& c : cols) cell(c, std::max<std::size_t>(c.size() + 2, 8));
    out << '\n';
    for (int mode = 0; mode < 2; ++mode) {
        const auto& fields = mode == 0 ? r.hed_fields : r.spade_fields;
        const auto& total = mode == 0 ? r.hed_total : r.spade_total;
        cell(mode == 0 ? "HED" : "SPADE", 8);
        cell(pct(prf(total).f1), 10);
        for (const auto& c : cols) cell(pct(prf(field(fields, c)).f1), std::max<std::size_t>(c.size() + 2, 8));
        out << '\n';
    }
    out << "\nmode   field        matched  inserted  deleted  precision  recall  f1\n";
    for (int mode = 0; mode < 2; ++mode) {
        const auto& fields = mode == 0 ? r.hed_fields : r.spade_fields;
        auto row = [&](const std::string& name, const EditCounts& c) {
            auto p = prf(c);
            char buf[160];
            std::snprintf(buf, sizeof buf, "%-6s %-12s %7zu %9zu %8zu %10.4f %7.4f %6.4f\n", mode == 0 ? "HED" : "SPADE",
                          name.c_str(), c.matched, c.inserted, c.deleted, p.precision, p.recall, p.f1);
            out << buf;
        };
        row("Overall", mode == 0 ? r.hed_total : r.spade_total);
        for (const auto& c : cols) row(c, field(fields, c));
    }
    return out.str();
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    auto counts = [](const EditCounts& c) {
        auto p = prf(c);
        return nlohmann::json{{"matched", c.matched}, {"inserted", c.inserted}, {"deleted", c.deleted},
                              {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
    };
    nlohmann::json j{{"documents", r.documents}};
    for (int mode = 0; mode < 2; ++mode) {
        nlohmann::json m{{"overall", counts(mode == 0 ? r.hed_total : r.spade_total)}};
        for (const auto& [k, c] : mode == 0 ? r.hed_fields : r.spade_fields) m["fields"][k] = counts(c);
        j[mode == 0 ? "hed" : "spade"] = m;
    }
    return j;
}

}  // namespace cpcfg
