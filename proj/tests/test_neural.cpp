#include <gtest/gtest.h>

#include <filesystem>

#include "support/oracles.hpp"

using namespace cpcfg;

namespace {

const std::string kData = CPCFG_DATA_DIR;

ModelConfig small(std::uint64_t seed = 3) {
    ModelConfig mc;
    mc.hidden = 4;
    mc.embed_dim = 4;
    mc.table_size = 32;
    mc.seed = seed;
    return mc;
}

RuleId lexical_for(const Grammar& g, const std::string& head, Terminal t = Terminal::String) {
    for (RuleId r : g.lexical_rules())
        if (g.name(g.rule(r).head) == head && g.rule(r).terminal == t) return r;
    throw Error("no lexical rule for " + head);
}

RuleId binary_for(const Grammar& g, const std::string& h, const std::string& l, const std::string& r) {
    for (RuleId id : g.binary_rules()) {
        const auto& rule = g.rule(id);
        if (g.name(rule.head) == h && g.name(rule.left) == l && g.name(rule.right) == r) return id;
    }
    throw Error("no binary rule");
}

// Desc -> Desc Desc over two side-by-side boxes.
ParseTree desc_pair(const Grammar& g, Direction dir = Direction::Vertical) {
    ParseTree t;
    auto d = *g.find("Desc");
    RuleId lex = lexical_for(g, "Desc");
    TreeNode root{d, binary_for(g, "Desc", "Desc", "Desc"), {0, 1}};
    root.left = t.add(TreeNode{d, lex, {0}});
    root.right = t.add(TreeNode{d, lex, {1}});
    root.dir = dir;
    t.root = t.add(root);
    return t;
}

const Document& pair_doc() {
    static const Document doc = parse_ocr_tsv("100\t100\nChicken\t10\t10\t30\t20\nWings\t35\t10\t50\t20\n");
    return doc;
}

double tree_loss(const Model& m, const Document& doc, const ParseTree& t, const Grammar& g) {
    DocScorer sc(m, doc);
    return Tape(sc, t, g).score();
}

}  // namespace

TEST(Gelu, Values) {
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(-1.0), -0.15865525393145707, 1e-15);
    EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
    for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
        double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        EXPECT_NEAR(gelu_grad(x), fd, 1e-8) << x;
    }
}

TEST(Model, ZeroParametersScoreZero) {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, small());
    std::fill(m.params().begin(), m.params().end(), 0.0);
    DocScorer sc(m, pair_doc());
    std::vector<double> h(4, 1.0), h2(4, 1.0);
    EXPECT_EQ(sc.unary(pair_doc(), 0, lexical_for(g, "Desc"), h.data()), 0.0);
    for (double v : h) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(sc.binary(binary_for(g, "Desc", "Desc", "Desc"), Direction::Vertical, h.data(), h.data(), h2.data()), 0.0);
    for (double v : h2) EXPECT_EQ(v, 0.0);
}

TEST(Model, SeedDeterminesParameters) {
    auto g = compile_schema(kInvoiceSchema);
    Model a(g, small(7)), b(g, small(7)), c(g, small(8));
    EXPECT_EQ(a.params(), b.params());
    EXPECT_NE(a.params(), c.params());
    DocScorer sa(a, pair_doc()), sb(b, pair_doc());
    std::vector<double> ha(4), hb(4);
    auto r = lexical_for(g, "Desc");
    EXPECT_EQ(sa.unary(pair_doc(), 1, r, ha.data()), sb.unary(pair_doc(), 1, r, hb.data()));
    EXPECT_EQ(ha, hb);
}

TEST(Model, BinaryIsOrderAndDirectionSensitive) {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, small());
    auto t = desc_pair(g);
    auto swapped = t;
    std::swap(swapped.nodes[0].boxes, swapped.nodes[1].boxes);
    auto horizontal = desc_pair(g, Direction::Horizontal);
    double s = tree_loss(m, pair_doc(), t, g);
    EXPECT_NE(s, tree_loss(m, pair_doc(), swapped, g));
    EXPECT_NE(s, tree_loss(m, pair_doc(), horizontal, g));
}

TEST(Gradients, UnaryBinaryAndTreeMatchFiniteDifferences) {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, small(11));
    ParseTree leaf;
    leaf.root = leaf.add(TreeNode{*g.find("Desc"), lexical_for(g, "Desc"), {1}});
    for (const ParseTree* t : {&leaf}) {
        std::vector<double> grad(m.size(), 0.0);
        DocScorer sc(m, pair_doc());
        Tape(sc, *t, g).backward(1.0, grad);
        auto r = ref::check_gradient(m, [&] { return tree_loss(m, pair_doc(), *t, g); }, grad);
        EXPECT_LE(r.worst, 1e-4);
        EXPECT_GT(r.checked, 20u);
    }
    auto pair = desc_pair(g);
    std::vector<double> grad(m.size(), 0.0);
    {
        DocScorer sc(m, pair_doc());
        Tape(sc, pair, g).backward(1.0, grad);
    }
    auto r = ref::check_gradient(m, [&] { return tree_loss(m, pair_doc(), pair, g); }, grad);
    EXPECT_LE(r.worst, 1e-4);
    // direction embedding and hashed token rows both receive gradient
    bool dir = false, table = false;
    for (std::size_t i = 0; i < m.dir_offset(); ++i) table |= grad[i] != 0.0;
    for (std::size_t i = m.dir_offset(); i < m.dir_offset() + 4; ++i) dir |= grad[i] != 0.0;
    EXPECT_TRUE(dir);
    EXPECT_TRUE(table);
}

TEST(Gradients, FullInvoiceTree) {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    auto doc = ingest_ocr(kData + "/sample_invoice.tsv");
    auto oracle = compatible_parse(doc, g, rs, read_record(kData + "/sample_invoice.json"));
    ASSERT_TRUE(oracle);
    Model m(g, small(2));
    std::vector<double> grad(m.size(), 0.0);
    {
        DocScorer sc(m, doc);
        Tape(sc, oracle->tree, g).backward(1.0, grad);
    }
    auto r = ref::check_gradient(m, [&] { return tree_loss(m, doc, oracle->tree, g); }, grad);
    EXPECT_LE(r.worst, 1e-4) << r.worst_index;
}

TEST(Gradients, ZeroSeedGivesZeroGradient) {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, small());
    DocScorer sc(m, pair_doc());
    auto t = desc_pair(g);
    std::vector<double> grad(m.size(), 0.0);
    Tape(sc, t, g).backward(0.0, grad);
    EXPECT_TRUE(std::all_of(grad.begin(), grad.end(), [](double v) { return v == 0.0; }));
}

TEST(Gradients, SharedRuleAccumulates) {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, small(4));
    // silence the binary rule so the tree score is the two leaf scores
    auto b = binary_for(g, "Desc", "Desc", "Desc");
    std::fill_n(m.params().begin() + static_cast<std::ptrdiff_t>(m.rule_offset(b)), m.binary_block(), 0.0);
    auto t = desc_pair(g);
    DocScorer sc(m, pair_doc());
    std::vector<double> whole(m.size(), 0.0), parts(m.size(), 0.0);
    Tape(sc, t, g).backward(1.0, whole);
    for (int i : {t.node(t.root).left, t.node(t.root).right}) {
        auto leaf = t.subtree(i);
        Tape(sc, leaf, g).backward(1.0, parts);
    }
    // the silenced block still gets gradient in the whole tree; skip it
    const auto lo = m.rule_offset(b), hi = lo + m.binary_block();
    for (std::size_t i = 0; i < m.size(); ++i)
        if (i < lo || i >= hi) {
            EXPECT_NEAR(whole[i], parts[i], 1e-14) << i;
        }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, small(5));
    auto dir = std::filesystem::temp_directory_path() / "cpcfg_ckpt_test";
    std::filesystem::create_directories(dir);
    m.save(dir / "a.ckpt");
    Model back = Model::load(dir / "a.ckpt", g);
    back.save(dir / "b.ckpt");
    EXPECT_EQ(detail::read_file(dir / "a.ckpt"), detail::read_file(dir / "b.ckpt"));
    EXPECT_EQ(back.params(), m.params());
    auto other = compile_schema("S := STRING\n");
    EXPECT_THROW(Model::load(dir / "a.ckpt", other), CheckpointError);
    auto bytes = m.serialize();
    EXPECT_THROW(Model::deserialize(bytes.substr(0, bytes.size() - 3), g), CheckpointError);
    EXPECT_THROW(Model::deserialize("XXXXXXXX" + bytes.substr(8), g), CheckpointError);
    EXPECT_THROW(Model::load(dir / "missing.ckpt", g), CheckpointError);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, SizeLinearInRuleCount) {
    auto lexical_grammar = [](std::size_t n) {
        // S -> Ai Ai and Ai -> STRING for each i, so every rule is reachable
        std::vector<SeqRule> rules{SeqRule{"S", {}, Terminal::String, false}};
        for (std::size_t i = 1; i < n; ++i) {
            auto a = "A" + std::to_string(i);
            rules.push_back(SeqRule{a, {}, Terminal::String, false});
            rules.push_back(SeqRule{"S", {a, a}, std::nullopt, false});
        }
        return Grammar::from_cnf(rules, {}, "S");
    };
    std::vector<std::size_t> sizes;
    for (std::size_t n : {3, 6, 12}) sizes.push_back(Model(lexical_grammar(n), small()).serialize().size());
    EXPECT_EQ(sizes[1] - sizes[0], (sizes[2] - sizes[1]) / 2);
    EXPECT_GT(sizes[1], sizes[0]);
}

TEST(ExternalVectors, ParseAndCheckShape) {
    auto v = parse_external_vectors("dim\t3\n0\t0.1 0.2 0.3\n1\t1 2 3\n");
    EXPECT_EQ(v.dim, 3u);
    ASSERT_EQ(v.rows.size(), 2u);
    EXPECT_DOUBLE_EQ(v.rows[1][2], 3.0);
    auto g = compile_schema(kInvoiceSchema);
    ModelConfig mc = small();
    mc.embed = EmbedMode::External;
    mc.embed_dim = 3;
    Model m(g, mc);
    DocScorer sc(m, pair_doc(), &v);
    EXPECT_EQ(sc.input(1)[0], 1.0);
    EXPECT_THROW(DocScorer(m, pair_doc()), Error);
    mc.embed_dim = 4;
    Model wrong(g, mc);
    EXPECT_THROW(DocScorer(wrong, pair_doc(), &v), Error);
}
