#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace cpcfg;

namespace {
const std::string kData = CPCFG_DATA_DIR;
}

TEST(Evaluate, IdenticalRecordsScorePerfect) {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    auto truth = read_record(kData + "/sample_invoice.json");
    auto rep = evaluate({{truth, truth}, {truth, truth}}, rs);
    EXPECT_EQ(rep.documents, 2u);
    EXPECT_DOUBLE_EQ(prf(rep.hed_total).f1, 1.0);
    EXPECT_DOUBLE_EQ(prf(rep.spade_total).f1, 1.0);
    auto j = report_to_json(rep);
    EXPECT_EQ(j["hed"]["overall"]["f1"], 1.0);
    EXPECT_EQ(j["spade"]["fields"]["Desc"]["matched"], 4);
    auto text = format_report(rep, rs);
    EXPECT_NE(text.find("HED     100.0"), std::string::npos) << text;
    EXPECT_NE(text.find("SPADE   100.0"), std::string::npos) << text;
}

TEST(Evaluate, FieldCountsSumToOverall) {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    auto truth = read_record(kData + "/sample_invoice.json");
    auto pred = truth;
    pred.items.pop_back();
    pred.header["Date"] = "";
    auto rep = evaluate({{pred, truth}}, rs);
    EditCounts sum;
    for (const auto& [k, c] : rep.hed_fields) sum += c;
    EXPECT_EQ(sum, rep.hed_total);
    EXPECT_EQ(rep.hed_total.deleted, 0u);
    EXPECT_EQ(rep.hed_total.inserted, 10u + 19u);  // the date plus the second item
    EXPECT_DOUBLE_EQ(prf(rep.hed_total).precision, 1.0);
}
