// Acceptance run: one line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion ids...]

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "support/oracles.hpp"

using namespace cpcfg;
namespace t = cpcfg::ref;

namespace {

const std::string kData = CPCFG_DATA_DIR;

// Pinned limits.
constexpr int kParserInstances = 200;
constexpr double kParserSeconds = 120;
constexpr int kOracleInstances = 200;
constexpr double kOracleSeconds = 300;
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradConfigs = 50;
constexpr int kMetricPairs = 1000;
constexpr double kGrowthPerDoubling = 10.0;
constexpr std::size_t kMemorizeEpochs = 50;
constexpr double kMemorizeSeconds = 600;
constexpr std::size_t kBenchEpochs = 3;
constexpr double kCleanF1 = 0.95;
constexpr double kNoisyF1 = 0.90;
constexpr double kNoisyRate = 0.01;
constexpr int kSpliceTrees = 1000;

struct Outcome {
    bool pass;
    std::string detail;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// 1 ------------------------------------------------------------------------
Outcome parser_exactness() {
    auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    int parsed = 0, tried = 0, score_bad = 0, tree_bad = 0, parseable_bad = 0, skipped = 0;
    while (parsed < kParserInstances && tried < 50 * kParserInstances) {
        ++tried;
        auto g = t::random_grammar(rng, 12);
        auto doc = t::random_document(rng, 1 + static_cast<std::size_t>(rng() % 6));
        t::TableScorer sc{rng()};
        auto res = parse_best(doc, g, sc);
        t::BruteParser bp(doc, g, sc);
        const std::vector<t::Derivation>* all = nullptr;
        try {
            all = &bp.all_root(g.start());
        } catch (const std::length_error&) {
            ++skipped;
            continue;
        }
        if (res.has_value() != !all->empty()) ++parseable_bad;
        if (!res || all->empty()) continue;
        ++parsed;
        double m = -1e300;
        for (const auto& d : *all) m = std::max(m, d.score);
        if (res->score != m) ++score_bad;
        auto c = t::canonical(res->tree, g);
        if (!std::any_of(all->begin(), all->end(), [&](const auto& d) { return d.score == m && d.tree == c; }))
            ++tree_bad;
    }
    double secs = since(t0);
    bool ok = parsed == kParserInstances && score_bad == 0 && tree_bad == 0 && parseable_bad == 0 && secs < kParserSeconds;
    std::ostringstream o;
    o << parsed << " parsed of " << tried << " drawn (" << skipped << " over enumeration limit), score mismatches "
      << score_bad << ", tree not in argmax set " << tree_bad << ", parseability disagreements " << parseable_bad << ", "
      << fmt("%.1f s", secs);
    return {ok, o.str()};
}

// 2 ------------------------------------------------------------------------
Outcome oracle_exactness() {
    auto t0 = Clock::now();
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    std::mt19937_64 rng(2002);
    int compared = 0, tried = 0, bad = 0, parseable_bad = 0, cost_vs_tree = 0;
    while (compared < kOracleInstances && tried < 20 * kOracleInstances) {
        ++tried;
        auto doc = t::random_document(rng, 1 + static_cast<std::size_t>(rng() % 6));
        auto target = t::random_target(rng, doc, rs);
        auto r = compatible_parse(doc, g, rs, target);
        auto best = t::BruteOracle(doc, g, rs).min_hed(target);
        if (r.has_value() != best.has_value()) ++parseable_bad;
        if (!r || !best) continue;
        ++compared;
        if (static_cast<std::size_t>(r->cost) != *best) ++bad;
        if (static_cast<std::size_t>(r->cost) != hed(tree_to_record(r->tree, g, doc, rs), conform(target, rs)).distance())
            ++cost_vs_tree;
    }
    double secs = since(t0);
    bool ok = compared == kOracleInstances && bad == 0 && parseable_bad == 0 && cost_vs_tree == 0 && secs < kOracleSeconds;
    std::ostringstream o;
    o << compared << " pairs of " << tried << " drawn, cost != brute min HED " << bad << ", cost != HED(own tree) "
      << cost_vs_tree << ", parseability disagreements " << parseable_bad << ", " << fmt("%.1f s", secs);
    return {ok, o.str()};
}

// 3 ------------------------------------------------------------------------
ModelConfig tiny(std::uint64_t seed) {
    ModelConfig mc;
    mc.hidden = 4;
    mc.embed_dim = 4;
    mc.table_size = 32;
    mc.seed = seed;
    return mc;
}

Document word_row(std::mt19937_64& rng, std::size_t n) {
    static const std::vector<std::string> words = {"Apples", "Chicken", "Wings", "Total", "Tea", "No.", "Invoice"};
    std::string tsv = "100\t100\n";
    for (std::size_t i = 0; i < n; ++i) {
        int x = 5 + static_cast<int>(i) * 20;
        tsv += words[rng() % words.size()] + "\t" + std::to_string(x) + "\t10\t" + std::to_string(x + 15) + "\t20\n";
    }
    return parse_ocr_tsv(tsv);
}

Outcome gradient_correctness() {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    std::mt19937_64 rng(3003);
    double worst = 0;
    std::size_t configs = 0, failed = 0, unary = 0, binary = 0, full = 0, structured = 0;
    auto record = [&](const t::GradCheck& c) {
        ++configs;
        worst = std::max(worst, c.worst);
        if (c.worst > kGradTolerance || c.checked == 0) ++failed;
    };
    auto tree_check = [&](Model& m, const Document& doc, const ParseTree& tree) {
        std::vector<double> grad(m.size(), 0.0);
        {
            DocScorer sc(m, doc);
            Tape(sc, tree, g).backward(1.0, grad);
        }
        record(t::check_gradient(m, [&] {
            DocScorer sc(m, doc);
            return Tape(sc, tree, g).score();
        }, grad));
    };

    // String lexical rules, and binary rules whose children both have one.
    std::vector<RuleId> lex;
    std::set<SymbolId> string_heads;
    for (RuleId r : g.lexical_rules())
        if (g.rule(r).terminal == Terminal::String) lex.push_back(r), string_heads.insert(g.rule(r).head);
    std::vector<RuleId> bins;
    for (RuleId r : g.binary_rules())
        if (string_heads.count(g.rule(r).left) && string_heads.count(g.rule(r).right)) bins.push_back(r);
    auto lex_of = [&](SymbolId s) {
        for (RuleId r : lex)
            if (g.rule(r).head == s) return r;
        return kNoRule;
    };

    for (int k = 0; k < 20; ++k, ++unary) {
        Model m(g, tiny(rng()));
        auto doc = word_row(rng, 1);
        ParseTree tr;
        RuleId r = lex[rng() % lex.size()];
        tr.root = tr.add(TreeNode{g.rule(r).head, r, {0}});
        tree_check(m, doc, tr);
    }
    for (int k = 0; k < 20; ++k, ++binary) {
        Model m(g, tiny(rng()));
        auto doc = word_row(rng, 2);
        RuleId r = bins[rng() % bins.size()];
        const auto& rule = g.rule(r);
        ParseTree tr;
        TreeNode root{rule.head, r, {0, 1}};
        root.left = tr.add(TreeNode{rule.left, lex_of(rule.left), {0}});
        root.right = tr.add(TreeNode{rule.right, lex_of(rule.right), {1}});
        root.dir = rng() % 2 ? Direction::Vertical : Direction::Horizontal;
        tr.root = tr.add(root);
        tree_check(m, doc, tr);
    }
    // whole parse trees of random pages
    while (full < 10) {
        auto inst = t::random_invoice_tree(rng, g, 3 + rng() % 6);
        if (!inst) continue;
        Model m(g, tiny(rng()));
        tree_check(m, inst->first, inst->second);
        ++full;
    }
    // structured loss s(t_hat) - s(t_bar) with both trees held fixed
    GenConfig gc;
    gc.max_items = 2;
    TrainConfig tc;
    tc.search_updates = false;
    for (std::size_t i = 0; structured < 10 && i < 200; ++i) {
        auto p = gen_invoice(gc, i);
        Example ex{p.doc, p.record, nullptr};
        auto bar = oracle_tree(ex, g, rs, FieldSplit::Token);
        tc.model = tiny(1000 + i);
        Model m(g, tc.model);
        std::vector<double> grad(m.size(), 0.0);
        LossResult r;
        {
            DocScorer sc(m, ex.doc);
            r = structured_loss(sc, g, bar.tree, tc, &grad);
        }
        if (r.loss <= 0) continue;
        auto hat = r.predicted;
        record(t::check_gradient(m, [&] {
            DocScorer sc(m, ex.doc);
            return Tape(sc, hat, g).score() - Tape(sc, bar.tree, g).score();
        }, grad));
        ++structured;
    }
    std::ostringstream o;
    o << configs << " configurations (" << unary << " unary, " << binary << " binary, " << full << " full trees, "
      << structured << " structured losses), worst relative error " << fmt("%.2e", worst) << ", over tolerance "
      << failed;
    return {configs >= kGradConfigs && failed == 0 && structured == 10, o.str()};
}

// 4 ------------------------------------------------------------------------
std::string random_string(std::mt19937_64& rng) {
    static const std::string alphabet = "ab1$. /";
    std::string s(rng() % 9, ' ');
    for (auto& c : s) c = alphabet[rng() % alphabet.size()];
    return s;
}

Record random_record(std::mt19937_64& rng, const RecordSchema& rs) {
    Record r = rs.empty_record();
    for (auto& [k, v] : r.header) v = random_string(rng);
    for (auto n = rng() % 4; n > 0; --n) {
        Fields f = rs.empty_item();
        for (auto& [k, v] : f) v = random_string(rng);
        r.items.push_back(f);
    }
    return r;
}

Outcome metric_oracles() {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    std::mt19937_64 rng(4004);
    int sed_bad = 0, lied_bad = 0, liseq_bad = 0, hed_bad = 0, ident_bad = 0, self_bad = 0, sym_bad = 0;
    auto identities = [&](const EditCounts& c, std::size_t pred_chars, std::size_t truth_chars, std::size_t dist) {
        if (c.matched + c.deleted != pred_chars || c.matched + c.inserted != truth_chars || c.distance() != dist) ++ident_bad;
    };
    for (int k = 0; k < kMetricPairs; ++k) {
        auto a = random_string(rng), b = random_string(rng);
        auto s = sed(a, b);
        auto ref = t::ref_indel_distance(a, b);
        if (s.distance() != ref) ++sed_bad;
        identities(s, t::no_space(a).size(), t::no_space(b).size(), ref);
        if (sed(b, a).distance() != s.distance()) ++sym_bad;

        auto x = random_record(rng, rs), y = random_record(rng, rs);
        Fields fx = rs.empty_item(), fy = rs.empty_item();
        for (auto& [f, v] : fx) v = random_string(rng);
        for (auto& [f, v] : fy) v = random_string(rng);
        auto l = lied(fx, fy);
        if (l.distance() != t::ref_lied_distance(fx, fy)) ++lied_bad;
        identities(l, t::chars(fx), t::chars(fy), t::ref_lied_distance(fx, fy));

        auto ls = liseqed(x.items, y.items);
        if (ls.distance() != t::ref_liseqed_distance(x.items, y.items)) ++liseq_bad;
        std::size_t cx = 0, cy = 0;
        for (const auto& f : x.items) cx += t::chars(f);
        for (const auto& f : y.items) cy += t::chars(f);
        identities(ls, cx, cy, t::ref_liseqed_distance(x.items, y.items));

        auto h = hed(x, y);
        auto href = t::ref_hed_distance(x, y);
        if (h.distance() != href) ++hed_bad;
        identities(h, t::record_chars(x), t::record_chars(y), href);
        if (hed(y, x).distance() != h.distance()) ++sym_bad;
        if (liseqed(y.items, x.items).distance() != ls.distance()) ++sym_bad;
        auto self = hed(x, x);
        if (self.distance() != 0 || self.matched != t::record_chars(x)) ++self_bad;
    }
    std::ostringstream o;
    o << kMetricPairs << " pairs; mismatches sed " << sed_bad << ", lied " << lied_bad << ", liseqed " << liseq_bad
      << ", hed " << hed_bad << "; identity failures " << ident_bad << ", hed(x,x) != 0 " << self_bad
      << ", asymmetric " << sym_bad;
    return {sed_bad + lied_bad + liseq_bad + hed_bad + ident_bad + self_bad + sym_bad == 0, o.str()};
}

// 5 ------------------------------------------------------------------------
Outcome grammar_combinatorics() {
    auto count_head = [](const std::vector<SeqRule>& rules, const std::string& h) {
        std::set<std::vector<std::string>> bodies;
        for (const auto& r : rules)
            if (r.head == h) bodies.insert(r.body);
        return bodies.size();
    };
    auto abc = expand_permutations(validate_schema(parse_schema("S := (A B C)!\nA := STRING\nB := STRING\nC := STRING\n")).rules);
    auto inv = expand_permutations(validate_schema(parse_schema(kInvoiceSchema)).rules);
    auto n3 = count_head(abc, "S"), n4 = count_head(inv, "LineItem");
    auto noisy = compile_schema(read_schema(kData + "/invoice_noise.cfg"));
    auto problems = check_cnf(noisy);
    auto builtin = compile_schema(kInvoiceSchema);
    bool same = builtin.canonical_text() == noisy.canonical_text();
    std::ostringstream o;
    o << "(A B C)! -> " << n3 << " rules, (Desc Qty Rate Amt)! -> " << n4 << " rules, CNF problems on invoice_noise.cfg "
      << problems.size() << " (" << noisy.rules().size() << " rules), matches built-in grammar " << (same ? "yes" : "no");
    return {n3 == 6 && n4 == 24 && problems.empty() && same, o.str()};
}

// 6 ------------------------------------------------------------------------
Outcome complexity_guard() {
    auto g = compile_schema(kInvoiceSchema);
    Model m(g, ModelConfig{});
    TrainConfig defaults;
    std::vector<std::pair<std::size_t, std::size_t>> shapes = {{4, 4}, {4, 8}, {8, 8}};
    std::vector<double> times;
    for (auto [r, c] : shapes) {
        auto doc = t::grid_document(r, c);
        std::vector<double> runs;
        for (int rep = 0; rep < 3; ++rep) {
            auto t0 = Clock::now();
            DocScorer sc(m, doc);
            ParseOptions po;
            po.beam = defaults.beam;
            auto res = parse_best(doc, g, sc, po);
            runs.push_back(since(t0));
        }
        std::sort(runs.begin(), runs.end());
        times.push_back(runs[1]);
    }
    bool ok = true;
    std::ostringstream o;
    o << "beam " << defaults.beam << ", median of 3:";
    for (std::size_t i = 0; i < times.size(); ++i) {
        o << " n=" << shapes[i].first * shapes[i].second << " " << fmt("%.3f s", times[i]);
        if (i > 0) {
            double ratio = times[i] / times[i - 1];
            o << " (x" << fmt("%.2f", ratio) << ")";
            ok = ok && ratio <= kGrowthPerDoubling;
        }
    }
    return {ok, o.str()};
}

// 7 ------------------------------------------------------------------------
std::vector<Example> examples(const GenConfig& gc, std::size_t from, std::size_t n) {
    std::vector<Example> xs;
    for (std::size_t i = from; i < from + n; ++i) {
        auto p = gen_invoice(gc, i);
        xs.push_back(Example{std::move(p.doc), std::move(p.record), nullptr});
    }
    return xs;
}

Outcome memorization() {
    auto t0 = Clock::now();
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    GenConfig gc;
    gc.noise_prob = 0;
    auto xs = examples(gc, 0, 10);
    TrainConfig cfg;
    cfg.epochs = kMemorizeEpochs;
    TrainHooks hooks;
    hooks.stop = [](const EpochStats& s) { return s.zero_loss == 1.0; };
    auto res = train(xs, {}, g, rs, cfg, hooks);
    double secs = since(t0);
    const auto& last = res.epochs.back();
    std::ostringstream o;
    o << "loss-0 fraction " << fmt("%.2f", last.zero_loss) << " at epoch " << last.epoch << " (t_hat == t_bar "
      << fmt("%.2f", last.match) << "), " << fmt("%.1f s", secs);
    return {last.zero_loss == 1.0 && last.epoch <= kMemorizeEpochs && secs < kMemorizeSeconds, o.str()};
}

// 8 ------------------------------------------------------------------------
struct BenchResult {
    double hed_f1, spade_f1, oracle_zero;
    std::size_t epochs;
};

BenchResult bench(const GenConfig& gc) {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    auto counts = split_counts(700, {500.0 / 700, 100.0 / 700, 100.0 / 700});
    auto train_set = examples(gc, 0, counts.train);
    auto test_set = examples(gc, counts.train + counts.val, counts.test);
    TrainConfig cfg;
    cfg.epochs = kBenchEpochs;
    auto res = train(train_set, {}, g, rs, cfg);
    double zero = 0;
    for (const auto& o : res.oracles) zero += o.cost == 0 ? 1 : 0;
    std::vector<std::pair<Record, Record>> pairs;
    for (const auto& ex : test_set) pairs.emplace_back(predict_record(res.model, ex, g, rs, cfg.beam), ex.target);
    auto rep = evaluate(pairs, rs);
    return {prf(rep.hed_total).f1, prf(rep.spade_total).f1, zero / static_cast<double>(res.oracles.size()),
            res.epochs.size() - 1};
}

Outcome synthetic_benchmark() {
    auto t0 = Clock::now();
    GenConfig clean;
    clean.noise_prob = 0;
    auto a = bench(clean);
    GenConfig noisy = clean;
    noisy.ocr_noise = kNoisyRate;
    auto b = bench(noisy);
    std::ostringstream o;
    o << "clean: HED F1 " << fmt("%.4f", a.hed_f1) << ", SPADE F1 " << fmt("%.4f", a.spade_f1) << ", oracle cost 0 on "
      << fmt("%.1f%%", 100 * a.oracle_zero) << " of train; 1% char noise: HED F1 " << fmt("%.4f", b.hed_f1)
      << ", SPADE F1 " << fmt("%.4f", b.spade_f1) << ", oracle cost 0 on " << fmt("%.1f%%", 100 * b.oracle_zero)
      << "; " << a.epochs << " epochs each, " << fmt("%.0f s", since(t0));
    return {a.hed_f1 >= kCleanF1 && a.spade_f1 >= kCleanF1 && b.hed_f1 >= kNoisyF1, o.str()};
}

// 9 ------------------------------------------------------------------------
Outcome splice_and_coverage() {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    std::mt19937_64 rng(9009);
    int trees = 0, drawn = 0, naive_bad = 0, splice_bad = 0, cover_bad = 0;
    while (trees < kSpliceTrees && drawn < 10 * kSpliceTrees) {
        ++drawn;
        auto inst = t::random_invoice_tree(rng, g, 2 + rng() % 9);
        if (!inst) continue;
        ++trees;
        auto& [d, tr] = *inst;
        auto rec = tree_to_record(tr, g, d, rs);
        if (rec != t::naive_record(tr, g, d, rs)) ++naive_bad;
        auto [d2, t2] = t::splice_noise(rng, d, tr, g, 1 + static_cast<int>(rng() % 3));
        try {
            check_tree(t2, g, d2);
            if (tree_to_record(t2, g, d2, rs) != rec) ++splice_bad;
        } catch (const Error&) {
            ++splice_bad;
        }
        auto labels = leaf_labels(t2, g);
        bool covered = labels.size() == d2.size();
        for (std::size_t i = 0; covered && i < labels.size(); ++i) {
            covered = labels[i].box == i;
            if (covered && i >= d.size()) covered = labels[i].field == "N";
        }
        if (!covered) ++cover_bad;
    }
    std::ostringstream o;
    o << trees << " trees; record != naive reading " << naive_bad << ", changed by noise splice " << splice_bad
      << ", leaf coverage failures " << cover_bad;
    return {trees == kSpliceTrees && naive_bad + splice_bad + cover_bad == 0, o.str()};
}

// 10 -----------------------------------------------------------------------
struct RunOutput {
    std::string checkpoint, stats, report;
};

RunOutput small_run() {
    auto g = compile_schema(kInvoiceSchema);
    auto rs = RecordSchema::from_grammar(g);
    GenConfig gc;
    gc.seed = 42;
    auto xs = examples(gc, 0, 6);
    auto test = examples(gc, 6, 4);
    TrainConfig cfg;
    cfg.seed = 7;
    cfg.epochs = 2;
    cfg.model.hidden = 16;
    cfg.model.embed_dim = 16;
    cfg.model.table_size = 512;
    RunOutput out;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochStats& s) { out.stats += stats_to_json(s).dump() + "\n"; };
    auto res = train(xs, test, g, rs, cfg, hooks);
    out.checkpoint = res.model.serialize();
    std::vector<std::pair<Record, Record>> pairs;
    for (const auto& ex : test) pairs.emplace_back(predict_record(res.model, ex, g, rs, cfg.beam), ex.target);
    auto rep = evaluate(pairs, rs);
    out.report = format_report(rep, rs) + report_to_json(rep).dump();
    return out;
}

Outcome determinism() {
    auto a = small_run(), b = small_run();
    bool ck = a.checkpoint == b.checkpoint, st = a.stats == b.stats, rp = a.report == b.report;
    std::ostringstream o;
    o << "checkpoint " << a.checkpoint.size() << " bytes " << (ck ? "identical" : "DIFFERENT") << ", epoch stats "
      << (st ? "identical" : "DIFFERENT") << ", evaluation report " << (rp ? "identical" : "DIFFERENT");
    return {ck && st && rp, o.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Outcome()>> criteria = {parser_exactness,      oracle_exactness,   gradient_correctness,
                                                            metric_oracles,        grammar_combinatorics, complexity_guard,
                                                            memorization,          synthetic_benchmark, splice_and_coverage,
                                                            determinism};
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome r;
        try {
            r = criteria[i]();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        if (!r.pass) ++failures;
        std::cout << "criterion " << id << ": " << (r.pass ? "PASS" : "FAIL") << ": " << r.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
