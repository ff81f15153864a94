#pragma once

// Edit distances over records: SED per field, LiED per line-item, LiSeqED
// over line-item sequences and HED over whole records, plus the exact-match
// (SPADE) specialisation and char-count precision/recall/F1.
//
// SED compares strings with whitespace removed, so joiners added when a
// field is assembled from several boxes never count as characters.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cpcfg/common.hpp"
#include "cpcfg/record_types.hpp"

namespace cpcfg {

struct EditCounts {
    std::size_t matched = 0;   // true-positive chars
    std::size_t inserted = 0;  // false-negative chars (in truth, missing from prediction)
    std::size_t deleted = 0;   // false-positive chars (in prediction, absent from truth)

    std::size_t distance() const { return inserted + deleted; }
    EditCounts& operator+=(const EditCounts& o) {
        matched += o.matched;
        inserted += o.inserted;
        deleted += o.deleted;
        return *this;
    }
    friend EditCounts operator+(EditCounts a, const EditCounts& b) { return a += b; }
    friend bool operator==(const EditCounts&, const EditCounts&) = default;
};

// A field comparison: the cost minimised by alignments and the counts it implies.
struct Scored {
    std::size_t cost = 0;
    EditCounts counts;

    Scored& operator+=(const Scored& o) {
        cost += o.cost;
        counts += o.counts;
        return *this;
    }
    friend Scored operator+(Scored a, const Scored& b) { return a += b; }
    friend bool operator==(const Scored&, const Scored&) = default;
};

namespace detail {

inline std::string strip_space(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (c != ' ' && c != '\t' && c != '\n' && c != '\r' && c != '\f' && c != '\v') out.push_back(c);
    return out;
}

inline std::size_t lcs(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1, 0);
    for (char ca : a) {
        std::size_t diag = 0;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t up = row[j];
            row[j] = ca == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
            diag = up;
        }
    }
    return row[b.size()];
}

}  // namespace detail

// Levenshtein distance without substitutions: |x| + |y| - 2 LCS(x, y).
inline EditCounts sed(std::string_view pred, std::string_view truth) {
    auto x = detail::strip_space(pred);
    auto y = detail::strip_space(truth);
    auto m = detail::lcs(x, y);
    return EditCounts{m, y.size() - m, x.size() - m};
}

// 0 iff the (whitespace-normalised) strings are equal.
inline int sed_spade(std::string_view pred, std::string_view truth) {
    return detail::normalize_space(pred) == detail::normalize_space(truth) ? 0 : 1;
}

struct SedCompare {
    Scored operator()(std::string_view pred, std::string_view truth) const {
        auto c = sed(pred, truth);
        return Scored{c.distance(), c};
    }
};

// Exact match per field; counts are in field units (a non-empty field is
// one unit).
struct SpadeCompare {
    Scored operator()(std::string_view pred, std::string_view truth) const {
        auto x = detail::normalize_space(pred);
        auto y = detail::normalize_space(truth);
        Scored s;
        if (x == y) {
            s.counts.matched = x.empty() ? 0 : 1;
            return s;
        }
        s.cost = 1;
        s.counts.deleted = x.empty() ? 0 : 1;
        s.counts.inserted = y.empty() ? 0 : 1;
        return s;
    }
};

namespace detail {

inline void require_same_keys(const Fields& a, const Fields& b, const char* what) {
    bool same = a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) {
                    return x.first == y.first;
                });
    if (!same) throw SchemaError(std::string("records do not share one schema (") + what + " fields differ)");
}

}  // namespace detail

// Sum of field comparisons over one line-item; a missing key stands for the
// empty line-item.
template <class Cmp>
Scored lied_with(const Fields& pred, const Fields& truth, const Cmp& cmp) {
    Scored total;
    for (const auto& [k, v] : pred) {
        auto it = truth.find(k);
        total += cmp(v, it == truth.end() ? std::string_view() : std::string_view(it->second));
    }
    for (const auto& [k, v] : truth)
        if (!pred.count(k)) total += cmp(std::string_view(), v);
    return total;
}

inline EditCounts lied(const Fields& pred, const Fields& truth) { return lied_with(pred, truth, SedCompare{}).counts; }

// Order-preserving alignment of line-item lists (match / skip a predicted
// item / skip a true item), as a quadratic DP. Ties prefer matching, then
// skipping the predicted item.
struct ItemAlignment {
    Scored total;
    std::vector<std::pair<long, long>> pairs;  // (pred index, truth index), -1 = unmatched
};

template <class Cmp>
ItemAlignment align_items(const std::vector<Fields>& xs, const std::vector<Fields>& ys, const Cmp& cmp) {
    const std::size_t n = xs.size(), m = ys.size();
    const Fields empty;
    std::vector<Scored> del(n), ins(m);
    for (std::size_t i = 0; i < n; ++i) del[i] = lied_with(xs[i], empty, cmp);
    for (std::size_t j = 0; j < m; ++j) ins[j] = lied_with(empty, ys[j], cmp);
    // D[i][j]: best alignment of xs[i..] with ys[j..]; move 0 match, 1 skip x, 2 skip y.
    std::vector<std::vector<Scored>> D(n + 1, std::vector<Scored>(m + 1));
    std::vector<std::vector<char>> move(n + 1, std::vector<char>(m + 1, 0));
    for (std::size_t i = n; i-- > 0;) D[i][m] = del[i] + D[i + 1][m], move[i][m] = 1;
    for (std::size_t j = m; j-- > 0;) D[n][j] = ins[j] + D[n][j + 1], move[n][j] = 2;
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = m; j-- > 0;) {
            Scored best = lied_with(xs[i], ys[j], cmp) + D[i + 1][j + 1];
            char mv = 0;
            Scored a = del[i] + D[i + 1][j];
            if (a.cost < best.cost) best = a, mv = 1;
            Scored b = ins[j] + D[i][j + 1];
            if (b.cost < best.cost) best = b, mv = 2;
            D[i][j] = best;
            move[i][j] = mv;
        }
    }
    ItemAlignment out;
    out.total = D[0][0];
    std::size_t i = 0, j = 0;
    while (i < n || j < m) {
        switch (move[i][j]) {
            case 0: out.pairs.emplace_back(static_cast<long>(i++), static_cast<long>(j++)); break;
            case 1: out.pairs.emplace_back(static_cast<long>(i++), -1); break;
            default: out.pairs.emplace_back(-1, static_cast<long>(j++)); break;
        }
    }
    return out;
}

template <class Cmp>
Scored liseqed_with(const std::vector<Fields>& xs, const std::vector<Fields>& ys, const Cmp& cmp) {
    return align_items(xs, ys, cmp).total;
}

inline EditCounts liseqed(const std::vector<Fields>& xs, const std::vector<Fields>& ys) {
    return liseqed_with(xs, ys, SedCompare{}).counts;
}

template <class Cmp>
Scored hed_with(const Record& pred, const Record& truth, const Cmp& cmp) {
    detail::require_same_keys(pred.header, truth.header, "header");
    for (const auto* list : {&pred.items, &truth.items})
        for (const auto& it : *list) {
            const auto& ref = !pred.items.empty() ? pred.items.front() : truth.items.front();
            detail::require_same_keys(it, ref, "line-item");
        }
    Scored total;
    for (const auto& [k, v] : pred.header) total += cmp(v, truth.header.at(k));
    return total + liseqed_with(pred.items, truth.items, cmp);
}

inline EditCounts hed(const Record& pred, const Record& truth) { return hed_with(pred, truth, SedCompare{}).counts; }

// SPADE-comparable variant: cost is the number of mismatched fields.
inline Scored hed_spade(const Record& pred, const Record& truth) { return hed_with(pred, truth, SpadeCompare{}); }

// Per-field breakdown of one comparison under the optimal item alignment.
// Header fields and line-item fields are keyed by name.
template <class Cmp>
std::map<std::string, Scored> field_breakdown(const Record& pred, const Record& truth, const Cmp& cmp) {
    hed_with(pred, truth, cmp);  // schema check
    std::map<std::string, Scored> out;
    for (const auto& [k, v] : pred.header) out[k] += cmp(v, truth.header.at(k));
    auto al = align_items(pred.items, truth.items, cmp);
    const Fields empty;
    for (auto [i, j] : al.pairs) {
        const Fields& x = i < 0 ? empty : pred.items[static_cast<std::size_t>(i)];
        const Fields& y = j < 0 ? empty : truth.items[static_cast<std::size_t>(j)];
        for (const auto& [k, v] : x) {
            auto it = y.find(k);
            out[k] += cmp(v, it == y.end() ? std::string_view() : std::string_view(it->second));
        }
        for (const auto& [k, v] : y)
            if (!x.count(k)) out[k] += cmp(std::string_view(), v);
    }
    return out;
}

struct PRF {
    double precision = 0, recall = 0, f1 = 0;
};

inline PRF prf(const EditCounts& c) {
    PRF out;
    auto ratio = [](std::size_t num, std::size_t den, bool other_empty) {
        if (den == 0) return other_empty ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    out.precision = ratio(c.matched, c.matched + c.deleted, c.inserted == 0);
    out.recall = ratio(c.matched, c.matched + c.inserted, c.deleted == 0);
    out.f1 = out.precision + out.recall > 0 ? 2 * out.precision * out.recall / (out.precision + out.recall) : 0.0;
    return out;
}

}  // namespace cpcfg
