#pragma once

// Synthetic invoices, record first: sample the line-items and header
// values, then lay them out on a page. Every value occupies its own boxes
// (multi-word descriptions one box per word); labels, column headings and
// decoration are noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/record.hpp"

namespace cpcfg {

struct GenConfig {
    std::uint64_t seed = 0;
    std::size_t min_items = 1, max_items = 3;
    std::size_t min_desc_words = 1, max_desc_words = 2;
    std::vector<std::string> vocabulary = {
        "Apples",  "Chicken", "Wings",  "Coffee", "Beans",   "Paper",  "Towels", "Printer", "Toner",  "Cable",
        "Adapter", "Desk",    "Lamp",   "Green",  "Tea",     "Rice",   "Flour",  "Sugar",   "Olive",  "Oil",
        "Steel",   "Bolts",   "Copper", "Wire",   "Monitor", "Stand",  "Office", "Chair",   "Window", "Cleaner",
        "Orange",  "Juice",   "Butter", "Bread",  "Milk",    "Cheese", "Notebook", "Pens",  "Glue",   "Tape"};
    int min_qty = 1, max_qty = 20;
    int min_rate_cents = 100, max_rate_cents = 5000;
    // Each ordering lists the four line-item columns left to right.
    std::vector<std::array<std::string, 4>> column_orders = default_column_orders();
    std::vector<std::string> header_sides = {"left", "right"};
    double noise_prob = 0.3;  // chance of each optional decoration block
    double ocr_noise = 0.0;   // per-character substitution probability

    // Rate stays left of Amt: both are currency and nothing but position
    // tells them apart.
    static std::vector<std::array<std::string, 4>> default_column_orders() {
        std::array<std::string, 4> cols = {"Amt", "Desc", "Qty", "Rate"};
        std::vector<std::array<std::string, 4>> out;
        std::sort(cols.begin(), cols.end());
        do {
            auto rate = std::find(cols.begin(), cols.end(), "Rate");
            auto amt = std::find(cols.begin(), cols.end(), "Amt");
            if (rate < amt) out.push_back(cols);
        } while (std::next_permutation(cols.begin(), cols.end()));
        return out;
    }

    void validate() const {
        auto bad = [](const std::string& m) { throw Error("gen config: " + m); };
        if (min_items > max_items) bad("empty line-item count range");
        if (min_desc_words == 0 || min_desc_words > max_desc_words) bad("bad description word range");
        if (vocabulary.empty()) bad("empty vocabulary");
        for (const auto& w : vocabulary)
            if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) bad("vocabulary words must be single tokens");
        if (min_qty < 1 || min_qty > max_qty) bad("bad quantity range");
        if (min_rate_cents < 1 || min_rate_cents > max_rate_cents) bad("bad rate range");
        if (column_orders.empty()) bad("no column orderings");
        for (const auto& o : column_orders) {
            auto s = o;
            std::sort(s.begin(), s.end());
            if (s != std::array<std::string, 4>{"Amt", "Desc", "Qty", "Rate"})
                bad("column orderings must permute Desc, Qty, Rate, Amt");
        }
        if (header_sides.empty()) bad("no header sides");
        for (const auto& s : header_sides)
            if (s != "left" && s != "right") bad("header side must be 'left' or 'right'");
        if (!(noise_prob >= 0 && noise_prob <= 1)) bad("noise_prob must be in [0, 1]");
        if (!(ocr_noise >= 0 && ocr_noise <= 1)) bad("ocr_noise must be in [0, 1]");
    }
};

inline nlohmann::json gen_config_to_json(const GenConfig& c) {
    nlohmann::json orders = nlohmann::json::array();
    for (const auto& o : c.column_orders) orders.push_back(std::vector<std::string>(o.begin(), o.end()));
    return nlohmann::json{{"seed", c.seed},
                          {"min_items", c.min_items},
                          {"max_items", c.max_items},
                          {"min_desc_words", c.min_desc_words},
                          {"max_desc_words", c.max_desc_words},
                          {"vocabulary", c.vocabulary},
                          {"min_qty", c.min_qty},
                          {"max_qty", c.max_qty},
                          {"min_rate_cents", c.min_rate_cents},
                          {"max_rate_cents", c.max_rate_cents},
                          {"column_orders", orders},
                          {"header_sides", c.header_sides},
                          {"noise_prob", c.noise_prob},
                          {"ocr_noise", c.ocr_noise}};
}

inline GenConfig gen_config_from_json(const nlohmann::json& j, GenConfig c = {}) {
    if (!j.is_object()) throw InputError("gen config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        try {
            if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "min_items") c.min_items = v.get<std::size_t>();
            else if (k == "max_items") c.max_items = v.get<std::size_t>();
            else if (k == "min_desc_words") c.min_desc_words = v.get<std::size_t>();
            else if (k == "max_desc_words") c.max_desc_words = v.get<std::size_t>();
            else if (k == "vocabulary") c.vocabulary = v.get<std::vector<std::string>>();
            else if (k == "min_qty") c.min_qty = v.get<int>();
            else if (k == "max_qty") c.max_qty = v.get<int>();
            else if (k == "min_rate_cents") c.min_rate_cents = v.get<int>();
            else if (k == "max_rate_cents") c.max_rate_cents = v.get<int>();
            else if (k == "column_orders") {
                c.column_orders.clear();
                for (const auto& o : v) {
                    auto cols = o.get<std::vector<std::string>>();
                    if (cols.size() != 4) throw InputError("column orderings need four columns");
                    c.column_orders.push_back({cols[0], cols[1], cols[2], cols[3]});
                }
            } else if (k == "header_sides") c.header_sides = v.get<std::vector<std::string>>();
            else if (k == "noise_prob") c.noise_prob = v.get<double>();
            else if (k == "ocr_noise") c.ocr_noise = v.get<double>();
            else throw InputError("unknown gen config key '" + k + "'");
        } catch (const nlohmann::json::exception&) {
            throw InputError("gen config: bad value for '" + k + "'");
        }
    }
    c.validate();
    return c;
}

namespace detail {

// Small deterministic stream; libstdc++ distributions are avoided so the
// output does not depend on the standard library.
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : s_(seed) {}
    std::uint64_t next() { return s_ = splitmix64(s_); }
    int uniform(int lo, int hi) {  // inclusive
        auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next() % span);
    }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    bool chance(double p) { return unit() < p; }
    template <class T>
    const T& pick(const std::vector<T>& v) { return v[index(v.size())]; }

private:
    std::uint64_t s_;
};

inline std::string money(long cents) {
    std::string s = "$" + std::to_string(cents / 100);
    if (cents % 100) {
        auto c = std::to_string(cents % 100);
        s += "." + std::string(2 - c.size(), '0') + c;
    }
    return s;
}

inline std::string ocr_corrupt(const std::string& s, double p, SynthRng& rng) {
    if (p <= 0) return s;
    std::string out = s;
    for (auto& c : out) {
        if (!rng.chance(p)) continue;
        if (c >= '0' && c <= '9') c = static_cast<char>('0' + rng.uniform(0, 9));
        else if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + rng.uniform(0, 25));
        else if (c >= 'A' && c <= 'Z') c = static_cast<char>('A' + rng.uniform(0, 25));
    }
    return out;
}

struct Layout {
    static constexpr double kPageW = 600, kPageH = 800, kCharW = 7, kRowH = 16, kGap = 6;
    std::vector<BBox> boxes;
    double place(const std::string& text, double x, double y) {
        double w = kCharW * static_cast<double>(text.size()) + 2;
        boxes.push_back(BBox{static_cast<BoxId>(boxes.size()), text, x / kPageW, y / kPageH, (x + w) / kPageW,
                             (y + kRowH) / kPageH});
        return x + w + kGap;
    }
    double place_words(const std::vector<std::string>& words, double x, double y) {
        for (const auto& w : words) x = place(w, x, y);
        return x;
    }
};

}  // namespace detail

struct SyntheticPair {
    Document doc;
    Record record;
};

inline std::uint64_t synth_doc_seed(std::uint64_t seed, std::size_t index) {
    return detail::hash_combine(detail::splitmix64(seed), static_cast<std::uint64_t>(index));
}

inline std::string synth_doc_id(std::size_t index) {
    std::string n = std::to_string(index);
    return "inv-" + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

inline SyntheticPair gen_invoice(const GenConfig& cfg, std::size_t index) {
    cfg.validate();
    detail::SynthRng rng(synth_doc_seed(cfg.seed, index));

    // Record.
    Record rec;
    std::size_t n_items = static_cast<std::size_t>(rng.uniform(static_cast<int>(cfg.min_items), static_cast<int>(cfg.max_items)));
    long total = 0;
    std::vector<std::vector<std::string>> desc_words;
    for (std::size_t i = 0; i < n_items; ++i) {
        std::size_t nw = static_cast<std::size_t>(rng.uniform(static_cast<int>(cfg.min_desc_words), static_cast<int>(cfg.max_desc_words)));
        std::vector<std::string> words;
        for (std::size_t w = 0; w < nw; ++w) words.push_back(rng.pick(cfg.vocabulary));
        int qty = rng.uniform(cfg.min_qty, cfg.max_qty);
        int rate = rng.uniform(cfg.min_rate_cents, cfg.max_rate_cents);
        if (rng.chance(0.5)) rate -= rate % 100;  // whole dollars half the time
        if (rate <= 0) rate = 100;
        long amt = static_cast<long>(qty) * rate;
        total += amt;
        Fields f;
        std::string d;
        for (const auto& w : words) d += (d.empty() ? "" : " ") + w;
        f["Desc"] = d;
        f["Qty"] = std::to_string(qty);
        f["Rate"] = detail::money(rate);
        f["Amt"] = detail::money(amt);
        rec.items.push_back(f);
        desc_words.push_back(std::move(words));
    }
    std::string id = rng.chance(0.5) ? std::to_string(rng.uniform(10000, 99999))
                                     : "INV-" + std::to_string(rng.uniform(1000, 9999));
    char date[16];
    std::snprintf(date, sizeof date, "%02d/%02d/%04d", rng.uniform(1, 12), rng.uniform(1, 28), rng.uniform(2015, 2024));
    rec.header["InvoiceID"] = id;
    rec.header["Date"] = date;
    rec.header["TotalAmt"] = detail::money(total);

    // Template.
    const auto& order = cfg.column_orders[rng.index(cfg.column_orders.size())];
    bool right = rng.pick(cfg.header_sides) == "right";
    bool id_first = rng.chance(0.5);
    static const std::vector<std::vector<std::string>> id_labels = {{"Invoice", "No:"}, {"Invoice", "#"}, {"Inv.", "No."}};
    static const std::vector<std::vector<std::string>> date_labels = {{"Date:"}, {"Invoice", "Date:"}, {"Dated"}};
    static const std::vector<std::vector<std::string>> total_labels = {{"Total:"}, {"Total", "Due:"}, {"Amount", "Due"}};
    static const std::map<std::string, std::vector<std::string>> headings = {
        {"Desc", {"Description", "Item"}}, {"Qty", {"Qty", "Quantity"}}, {"Rate", {"Rate", "Price"}},
        {"Amt", {"Amt", "Amount"}}};
    const auto& id_label = rng.pick(id_labels);
    const auto& date_label = rng.pick(date_labels);
    const auto& total_label = rng.pick(total_labels);
    std::map<std::string, std::string> heading;
    for (const auto& [k, v] : headings) heading[k] = rng.pick(v);

    detail::Layout L;
    double y = 40;
    if (rng.chance(cfg.noise_prob)) {  // letterhead
        L.place_words({"ACME", "Supplies"}, 40, y);
        y += 30;
    }
    const double hx = right ? 340 : 40;
    auto header_row = [&](const std::vector<std::string>& label, const std::string& value) {
        double x = L.place_words(label, hx, y);
        L.place(value, x, y);
        y += 30;
    };
    if (id_first) {
        header_row(id_label, id);
        header_row(date_label, date);
    } else {
        header_row(date_label, date);
        header_row(id_label, id);
    }
    y += 20;
    std::map<std::string, double> col_x;
    double x = 40;
    for (const auto& c : order) {
        col_x[c] = x;
        x += c == "Desc" ? 200 : 80;
    }
    for (const auto& c : order) L.place(heading[c], col_x[c], y);
    y += 30;
    for (std::size_t i = 0; i < n_items; ++i) {
        for (const auto& c : order) {
            if (c == "Desc") L.place_words(desc_words[i], col_x[c], y);
            else L.place(rec.items[i].at(c), col_x[c], y);
        }
        y += 30;
    }
    y += 10;
    {
        std::vector<std::string> label = total_label;
        double lx = col_x["Amt"] - 100;
        if (lx < 40) lx = 40;
        double after = L.place_words(label, lx, y);
        L.place(rec.header["TotalAmt"], std::max(after, col_x["Amt"]), y);
        y += 30;
    }
    if (rng.chance(cfg.noise_prob)) L.place_words({"Thank", "you!"}, 40, y + 20);

    for (auto& b : L.boxes) b.content = detail::ocr_corrupt(b.content, cfg.ocr_noise, rng);
    return SyntheticPair{Document(synth_doc_id(index), std::move(L.boxes)), std::move(rec)};
}

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(std::size_t n, const std::array<double, 3>& ratios) {
    double sum = 0;
    for (double r : ratios) {
        if (!(r >= 0)) throw Error("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
    SplitCounts c;
    c.train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[0]));
    c.val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
    if (c.train + c.val > n) c.val = n - c.train;
    c.test = n - c.train - c.val;
    return c;
}

// Writes <out>/{train,val,test}/<id>.tsv and <id>.json plus <out>/dataset.json.
inline nlohmann::json gen_dataset(const GenConfig& cfg, std::size_t n, const std::array<double, 3>& ratios,
                                  const std::filesystem::path& out) {
    cfg.validate();
    auto counts = split_counts(n, ratios);
    nlohmann::json docs = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const char* split = i < counts.train ? "train" : i < counts.train + counts.val ? "val" : "test";
        auto pair = gen_invoice(cfg, i);
        auto dir = out / split;
        std::filesystem::create_directories(dir);
        std::ofstream(dir / (pair.doc.page_id() + ".tsv"), std::ios::binary)
            << format_ocr_tsv(pair.doc, detail::Layout::kPageW, detail::Layout::kPageH);
        std::ofstream(dir / (pair.doc.page_id() + ".json"), std::ios::binary) << format_record(pair.record);
        docs.push_back({{"id", pair.doc.page_id()},
                        {"index", i},
                        {"split", split},
                        {"seed", detail::hex64(synth_doc_seed(cfg.seed, i))}});
    }
    nlohmann::json manifest{{"generator", "cpcfg-synth"},
                            {"version", 1},
                            {"n", n},
                            {"ratios", ratios},
                            {"counts", {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}},
                            {"config", gen_config_to_json(cfg)},
                            {"documents", docs}};
    std::filesystem::create_directories(out);
    std::ofstream(out / "dataset.json", std::ios::binary) << manifest.dump(2) << '\n';
    return manifest;
}

}  // namespace cpcfg
