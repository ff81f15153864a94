#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace cpcfg;

namespace {

const std::string kData = CPCFG_DATA_DIR;

Fields item(const std::string& d, const std::string& q, const std::string& r, const std::string& a) {
    return {{"Desc", d}, {"Qty", q}, {"Rate", r}, {"Amt", a}};
}

std::string random_string(std::mt19937_64& rng) {
    std::string s;
    for (int n = std::uniform_int_distribution<int>(0, 8)(rng); n > 0; --n)
        s += "abc $1"[std::uniform_int_distribution<int>(0, 5)(rng)];
    return s;
}

}  // namespace

TEST(Sed, Examples) {
    EXPECT_EQ(sed("abc", "abc"), (EditCounts{3, 0, 0}));
    EXPECT_EQ(sed("", "ab"), (EditCounts{0, 2, 0}));
    EXPECT_EQ(sed("Apples", "Aples").distance(), 1u);
    EXPECT_EQ(sed("$25", "$26").distance(), 2u);  // no substitution
    EXPECT_EQ(sed("Chicken  Wings", "ChickenWings").distance(), 0u);
}

TEST(Sed, MatchesReferenceTable) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 2000; ++k) {
        auto a = random_string(rng), b = random_string(rng);
        auto c = sed(a, b);
        auto ref = ref::ref_indel_distance(a, b);
        ASSERT_EQ(c.distance(), ref) << a << "|" << b;
        EXPECT_EQ(c.matched + c.deleted, ref::no_space(a).size());
        EXPECT_EQ(c.matched + c.inserted, ref::no_space(b).size());
        EXPECT_EQ(sed(b, a).distance(), ref);
    }
}

TEST(Lied, Examples) {
    EXPECT_EQ(lied(item("Apples", "5", "$1", "$5"), item("Apples", "5", "$1", "$5")).distance(), 0u);
    EXPECT_EQ(lied(item("Apples", "5", "$1", "$5"), item("Apples", "6", "$1", "$5")).distance(), 2u);
    EXPECT_EQ(lied(item("Apples", "5", "$1", "$5"), Fields{}).distance(), 11u);
    EXPECT_EQ(lied(Fields{}, item("Apples", "5", "$1", "$5")), (EditCounts{0, 11, 0}));
}

TEST(Liseqed, Examples) {
    auto truth = read_record(kData + "/sample_invoice.json");
    EXPECT_EQ(liseqed({}, {}).distance(), 0u);
    std::vector<Fields> minus{truth.items[1]};
    EXPECT_EQ(liseqed(truth.items, minus).distance(), 11u);
    EXPECT_EQ(liseqed(minus, truth.items), (EditCounts{19, 11, 0}));
    // order matters: swapping two items costs
    std::vector<Fields> swapped{truth.items[1], truth.items[0]};
    EXPECT_GT(liseqed(swapped, truth.items).distance(), 0u);
}

TEST(Hed, Examples) {
    auto truth = read_record(kData + "/sample_invoice.json");
    EXPECT_EQ(hed(truth, truth).distance(), 0u);
    auto changed = truth;
    changed.header["TotalAmt"] = "$26";
    EXPECT_EQ(hed(changed, truth).distance(), 2u);
    auto spaced = truth;
    spaced.items[1]["Desc"] = "Chicken   Wings";
    EXPECT_EQ(hed(spaced, truth).distance(), 0u);
    Record other;
    other.header["Colour"] = "";
    EXPECT_THROW(hed(other, truth), SchemaError);
}

TEST(Spade, ExactMatchFields) {
    EXPECT_EQ(sed_spade("$25", "$25"), 0);
    EXPECT_EQ(sed_spade("$25", "$26"), 1);
    auto truth = read_record(kData + "/sample_invoice.json");
    auto pred = truth;
    pred.header["TotalAmt"] = "$26";
    pred.items[1]["Desc"] = "Chicken";
    pred.items[0]["Qty"] = "";
    auto s = hed_spade(pred, truth);
    EXPECT_EQ(s.cost, 3u);
    // 10 non-empty truth fields match apart from three; the blanked Qty is
    // a pure miss
    EXPECT_EQ(s.counts.matched, 8u);
    EXPECT_EQ(s.counts.inserted, 3u);
    EXPECT_EQ(s.counts.deleted, 2u);
}

TEST(Prf, Conventions) {
    auto a = prf({3, 0, 0});
    EXPECT_DOUBLE_EQ(a.precision, 1.0);
    EXPECT_DOUBLE_EQ(a.f1, 1.0);
    auto b = prf({0, 2, 0});
    EXPECT_DOUBLE_EQ(b.precision, 0.0);
    EXPECT_DOUBLE_EQ(b.recall, 0.0);
    EXPECT_DOUBLE_EQ(b.f1, 0.0);
    auto c = prf({9, 2, 1});
    EXPECT_DOUBLE_EQ(c.precision, 0.9);
    EXPECT_NEAR(c.recall, 9.0 / 11.0, 1e-15);
    EXPECT_NEAR(c.f1, 2 * 0.9 * (9.0 / 11.0) / (0.9 + 9.0 / 11.0), 1e-15);
    EXPECT_NEAR(c.f1, 0.857142857, 1e-9);
    auto e = prf({0, 0, 0});
    EXPECT_DOUBLE_EQ(e.f1, 1.0);
}

TEST(Hed, RandomRecordsAgainstReference) {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    std::mt19937_64 rng(5);
    auto rec = [&] {
        Record r = rs.empty_record();
        for (auto& [k, v] : r.header) v = random_string(rng);
        for (int i = std::uniform_int_distribution<int>(0, 3)(rng); i > 0; --i) {
            Fields f = rs.empty_item();
            for (auto& [k, v] : f) v = random_string(rng);
            r.items.push_back(f);
        }
        return r;
    };
    for (int k = 0; k < 300; ++k) {
        auto x = rec(), y = rec();
        auto c = hed(x, y);
        ASSERT_EQ(c.distance(), ref::ref_hed_distance(x, y));
        EXPECT_EQ(c.matched + c.deleted, ref::record_chars(x));
        EXPECT_EQ(c.matched + c.inserted, ref::record_chars(y));
        EXPECT_EQ(hed(y, x).distance(), c.distance());
        EXPECT_EQ(hed(x, x).distance(), 0u);
    }
}

TEST(Breakdown, SumsToTotal) {
    auto truth = read_record(kData + "/sample_invoice.json");
    auto pred = truth;
    pred.items.erase(pred.items.begin());
    pred.header["Date"] = "12/13";
    auto total = hed_with(pred, truth, SedCompare{});
    Scored sum;
    for (const auto& [k, v] : field_breakdown(pred, truth, SedCompare{})) sum += v;
    EXPECT_EQ(sum, total);
}
