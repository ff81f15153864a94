#pragma once

// Documents as sets of OCR boxes, center-order regions and their candidate
// splits.
//
// OCR text input (one document per file):
//
//     page_width<TAB>page_height
//     content<TAB>x1<TAB>y1<TAB>x2<TAB>y2      (pixels, one box per line)
//
// Blank lines are skipped, and so are lines starting with '#' that hold no
// tab (a box whose content is "#" is still a box). The JSON form is
//
//     {"page_id": "...", "page_width": W, "page_height": H,
//      "boxes": [{"content": "...", "x1": .., "y1": .., "x2": .., "y2": ..}, ...]}
//
// Coordinates are normalised by the page extent on load.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcfg/common.hpp"
#include "cpcfg/grammar.hpp"

namespace cpcfg {

struct BBox {
    BoxId id = 0;
    std::string content;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double xc() const { return 0.5 * (x1 + x2); }
    double yc() const { return 0.5 * (y1 + y2); }
};

// MONEY: currency sign before or after an amount; NUMBER: plain amount.
// Signs are matched as whole byte sequences (UTF-8 €, £, ¥).
inline Terminal map_terminal(std::string_view content) {
    static const std::regex money(
        R"(^[-+]?(?:(?:\$|€|£|¥)\s?[-+]?\d[\d,]*(?:\.\d+)?|\d[\d,]*(?:\.\d+)?\s?(?:\$|€|£|¥)|(?:USD|EUR|GBP)\s?\d[\d,]*(?:\.\d+)?)$)");
    static const std::regex number(R"(^[-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)%?$)");
    std::string s = detail::normalize_space(content);
    if (std::regex_match(s, money)) return Terminal::Money;
    if (std::regex_match(s, number)) return Terminal::Number;
    return Terminal::String;
}

class Document {
public:
    Document() = default;
    Document(std::string page_id, std::vector<BBox> boxes) : page_id_(std::move(page_id)), boxes_(std::move(boxes)) {
        if (boxes_.empty()) throw InputError("document '" + page_id_ + "' has no boxes");
        for (std::size_t i = 0; i < boxes_.size(); ++i) {
            auto& b = boxes_[i];
            if (b.id != i) throw InputError("box ids must be 0..n-1 in order");
            b.content = detail::normalize_space(b.content);
            if (b.content.empty()) throw InputError("box " + std::to_string(i) + " has empty content");
            if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) throw InputError("box " + std::to_string(i) + " is degenerate");
            terminals_.push_back(map_terminal(b.content));
        }
    }

    const std::string& page_id() const { return page_id_; }
    void set_page_id(std::string id) { page_id_ = std::move(id); }
    std::size_t size() const { return boxes_.size(); }
    const std::vector<BBox>& boxes() const { return boxes_; }
    const BBox& box(BoxId id) const { return boxes_.at(id); }
    Terminal terminal(BoxId id) const { return terminals_.at(id); }

private:
    std::string page_id_;
    std::vector<BBox> boxes_;
    std::vector<Terminal> terminals_;
};

namespace detail {

inline double parse_coord(const std::string& s, int line) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError("bad number '" + s + "'", line);
    }
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline BBox pixel_box(BoxId id, std::string content, double x1, double y1, double x2, double y2, double w, double h,
                      int line) {
    if (!(x1 < x2) || !(y1 < y2)) throw InputError("degenerate box (need x1 < x2 and y1 < y2)", line);
    if (detail::trim(content).empty()) throw InputError("empty box content", line);
    return BBox{id, std::move(content), x1 / w, y1 / h, x2 / w, y2 / h};
}

}  // namespace detail

inline Document parse_ocr_tsv(const std::string& text, std::string page_id = "doc") {
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    double w = 0, h = 0;
    bool have_header = false;
    std::vector<BBox> boxes;
    while (std::getline(in, raw)) {
        ++line;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        if (detail::trim(raw).empty() || (raw.front() == '#' && raw.find('\t') == std::string::npos)) continue;
        auto cols = detail::split_tabs(raw);
        if (!have_header) {
            if (cols.size() != 2) throw InputError("expected header 'page_width<TAB>page_height'", line);
            w = detail::parse_coord(cols[0], line);
            h = detail::parse_coord(cols[1], line);
            if (!(w > 0) || !(h > 0)) throw InputError("page extent must be positive", line);
            have_header = true;
            continue;
        }
        if (cols.size() != 5) throw InputError("expected 5 tab-separated fields, got " + std::to_string(cols.size()), line);
        boxes.push_back(detail::pixel_box(static_cast<BoxId>(boxes.size()), cols[0], detail::parse_coord(cols[1], line),
                                          detail::parse_coord(cols[2], line), detail::parse_coord(cols[3], line),
                                          detail::parse_coord(cols[4], line), w, h, line));
    }
    if (!have_header) throw InputError("missing page size header");
    if (boxes.empty()) throw InputError("document has no boxes");
    return Document(std::move(page_id), std::move(boxes));
}

inline Document parse_ocr_json(const std::string& text, std::string page_id = "doc") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad JSON document: ") + e.what());
    }
    try {
        if (j.contains("page_id")) page_id = j.at("page_id").get<std::string>();
        double w = j.at("page_width").get<double>();
        double h = j.at("page_height").get<double>();
        if (!(w > 0) || !(h > 0)) throw InputError("page extent must be positive");
        std::vector<BBox> boxes;
        int k = 0;
        for (const auto& b : j.at("boxes")) {
            ++k;
            try {
                boxes.push_back(detail::pixel_box(static_cast<BoxId>(boxes.size()), b.at("content").get<std::string>(),
                                                  b.at("x1").get<double>(), b.at("y1").get<double>(),
                                                  b.at("x2").get<double>(), b.at("y2").get<double>(), w, h, 0));
            } catch (const InputError& e) {
                throw InputError("box " + std::to_string(k) + ": " + e.what());
            }
        }
        if (boxes.empty()) throw InputError("document has no boxes");
        return Document(std::move(page_id), std::move(boxes));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad JSON document: ") + e.what());
    }
}

// Picks the format by extension: .json is the object form, anything else TSV.
// The page id is the file stem, without a trailing ".ocr" on JSON files.
inline Document ingest_ocr(const std::string& path) {
    auto text = detail::read_file(path);
    auto slash = path.find_last_of('/');
    auto stem = path.substr(slash == std::string::npos ? 0 : slash + 1);
    auto dot = stem.find_last_of('.');
    auto ext = dot == std::string::npos ? std::string() : stem.substr(dot);
    if (dot != std::string::npos) stem = stem.substr(0, dot);
    if (ext == ".json" && stem.size() > 4 && stem.ends_with(".ocr")) stem.resize(stem.size() - 4);
    return ext == ".json" ? parse_ocr_json(text, stem) : parse_ocr_tsv(text, stem);
}

// Writes the TSV form with a page of `w` x `h` pixels.
inline std::string format_ocr_tsv(const Document& doc, double w = 1000, double h = 1000) {
    std::ostringstream out;
    out << std::setprecision(17) << w << '\t' << h << '\n';
    for (const auto& b : doc.boxes())
        out << b.content << '\t' << b.x1 * w << '\t' << b.y1 * h << '\t' << b.x2 * w << '\t' << b.y2 * h << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Regions

enum class Direction : std::uint8_t { Vertical = 0, Horizontal = 1 };

inline std::string_view direction_name(Direction d) { return d == Direction::Vertical ? "V" : "H"; }

using RegionId = std::uint32_t;

struct Region {
    std::vector<std::uint64_t> bits;
    std::uint64_t key = 0;
    std::vector<BoxId> by_x;  // members ordered by (x-center, id)
    std::vector<BoxId> by_y;  // members ordered by (y-center, id)

    std::size_t size() const { return by_x.size(); }
    bool contains(BoxId b) const { return (bits[b >> 6] >> (b & 63)) & 1U; }
    std::vector<BoxId> ids() const {
        auto v = by_x;
        std::sort(v.begin(), v.end());
        return v;
    }
};

struct Split {
    Direction dir = Direction::Vertical;
    RegionId left = 0;   // left or top part
    RegionId right = 0;  // right or bottom part
    std::uint32_t index = 0;
};

struct SplitOptions {
    // Reject cuts that some box of the region straddles.
    bool strict_separation = false;
    // Emit a horizontal split only when no vertical split has the same bipartition.
    bool dedupe_directions = false;
};

// Order-independent key of a box-id set (the bitset words are canonical).
inline std::uint64_t region_key(const std::vector<std::uint64_t>& bits) {
    std::uint64_t h = 0x51ed270b27b5a4c3ULL;
    for (auto w : bits) h = detail::hash_combine(h, w);
    return h;
}

// Interns the regions reachable from a document by center-order cuts and
// caches their splits. Not thread-safe; one table per parse.
class RegionTable {
public:
    explicit RegionTable(const Document& doc, SplitOptions opts = {}) : doc_(&doc), opts_(opts) {
        words_ = (doc.size() + 63) / 64;
        std::vector<BoxId> all(doc.size());
        for (BoxId i = 0; i < doc.size(); ++i) all[i] = i;
        root_ = intern(all);
    }

    const Document& document() const { return *doc_; }
    RegionId root() const { return root_; }
    std::size_t size() const { return regions_.size(); }
    const Region& region(RegionId id) const { return regions_[id]; }

    // Interns the region with exactly these member boxes.
    RegionId intern(const std::vector<BoxId>& members) {
        std::vector<std::uint64_t> bits(words_, 0);
        for (auto b : members) {
            if (b >= doc_->size()) throw Error("box id out of range");
            bits[b >> 6] |= std::uint64_t{1} << (b & 63);
        }
        if (auto id = find(bits)) return *id;
        Region r;
        r.bits = std::move(bits);
        r.key = region_key(r.bits);
        for (BoxId b = 0; b < doc_->size(); ++b)
            if (r.contains(b)) r.by_x.push_back(b);
        r.by_y = r.by_x;
        sort_x(r.by_x);
        sort_y(r.by_y);
        return add(std::move(r));
    }

    std::optional<RegionId> find(const std::vector<std::uint64_t>& bits) const {
        auto [lo, hi] = index_.equal_range(region_key(bits));
        for (auto it = lo; it != hi; ++it)
            if (regions_[it->second].bits == bits) return it->second;
        return std::nullopt;
    }

    // Vertical cuts in x-center order, then horizontal cuts in y-center
    // order. No cut separates two boxes with equal centers.
    const std::vector<Split>& splits(RegionId id) {
        if (split_cache_.size() < regions_.size()) split_cache_.resize(regions_.size());
        auto& slot = split_cache_[id];
        if (slot) return *slot;
        std::vector<Split> out;
        std::uint32_t index = 0;
        std::vector<std::vector<std::uint64_t>> vertical_parts;
        for (Direction dir : {Direction::Vertical, Direction::Horizontal}) {
            const auto order = dir == Direction::Vertical ? regions_[id].by_x : regions_[id].by_y;
            const std::size_t n = order.size();
            if (n < 2) break;
            std::vector<double> lo_max(n), hi_min(n);  // extents for strict separation
            for (std::size_t i = 0; i < n; ++i) {
                const auto& b = doc_->box(order[i]);
                double hi = dir == Direction::Vertical ? b.x2 : b.y2;
                lo_max[i] = i ? std::max(lo_max[i - 1], hi) : hi;
            }
            for (std::size_t i = n; i-- > 0;) {
                const auto& b = doc_->box(order[i]);
                double lo = dir == Direction::Vertical ? b.x1 : b.y1;
                hi_min[i] = i + 1 < n ? std::min(hi_min[i + 1], lo) : lo;
            }
            std::vector<std::uint64_t> left_bits(words_, 0);
            for (std::size_t i = 0; i + 1 < n; ++i) {
                BoxId b = order[i];
                left_bits[b >> 6] |= std::uint64_t{1} << (b & 63);
                if (!(center(order[i], dir) < center(order[i + 1], dir))) continue;
                if (opts_.strict_separation && lo_max[i] > hi_min[i + 1]) continue;
                if (dir == Direction::Vertical) {
                    vertical_parts.push_back(left_bits);
                } else if (opts_.dedupe_directions) {
                    auto comp = complement(id, left_bits);
                    bool seen = std::any_of(vertical_parts.begin(), vertical_parts.end(), [&](const auto& v) {
                        return v == left_bits || v == comp;
                    });
                    if (seen) continue;
                }
                std::vector<BoxId> left_order(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                std::vector<BoxId> right_order(order.begin() + static_cast<std::ptrdiff_t>(i) + 1, order.end());
                RegionId l = child(id, left_bits, std::move(left_order), dir);
                RegionId r = child(id, complement(id, left_bits), std::move(right_order), dir);
                out.push_back(Split{dir, l, r, index++});
            }
        }
        slot = std::make_unique<std::vector<Split>>(std::move(out));
        return *slot;
    }

private:
    double center(BoxId b, Direction dir) const {
        return dir == Direction::Vertical ? doc_->box(b).xc() : doc_->box(b).yc();
    }
    void sort_x(std::vector<BoxId>& v) const {
        std::stable_sort(v.begin(), v.end(), [&](BoxId a, BoxId b) {
            return std::pair(doc_->box(a).xc(), a) < std::pair(doc_->box(b).xc(), b);
        });
    }
    void sort_y(std::vector<BoxId>& v) const {
        std::stable_sort(v.begin(), v.end(), [&](BoxId a, BoxId b) {
            return std::pair(doc_->box(a).yc(), a) < std::pair(doc_->box(b).yc(), b);
        });
    }
    std::vector<std::uint64_t> complement(RegionId id, const std::vector<std::uint64_t>& part) const {
        auto out = regions_[id].bits;
        for (std::size_t w = 0; w < words_; ++w) out[w] &= ~part[w];
        return out;
    }
    // `ordered` is the child's members in the cut direction's order; the
    // other order is filtered from the parent.
    RegionId child(RegionId parent, const std::vector<std::uint64_t>& bits, std::vector<BoxId> ordered, Direction dir) {
        if (auto id = find(bits)) return *id;
        Region r;
        r.bits = bits;
        r.key = region_key(bits);
        const auto& other = dir == Direction::Vertical ? regions_[parent].by_y : regions_[parent].by_x;
        std::vector<BoxId> filtered;
        filtered.reserve(ordered.size());
        for (auto b : other)
            if (r.contains(b)) filtered.push_back(b);
        if (dir == Direction::Vertical) {
            r.by_x = std::move(ordered);
            r.by_y = std::move(filtered);
        } else {
            r.by_y = std::move(ordered);
            r.by_x = std::move(filtered);
        }
        return add(std::move(r));
    }
    RegionId add(Region r) {
        auto id = static_cast<RegionId>(regions_.size());
        index_.emplace(r.key, id);
        regions_.push_back(std::move(r));
        return id;
    }

    const Document* doc_;
    SplitOptions opts_;
    std::size_t words_ = 1;
    RegionId root_ = 0;
    std::vector<Region> regions_;
    std::unordered_multimap<std::uint64_t, RegionId> index_;
    std::vector<std::unique_ptr<std::vector<Split>>> split_cache_;
};

}  // namespace cpcfg
