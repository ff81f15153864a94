// cpcfg: gen / train / parse / eval / oracle over directories of documents.
//
// A dataset directory holds one document per <id>.tsv (or <id>.ocr.json)
// and, where needed, its record as <id>.json. Every command writes into
// <out>/<command>-<id>/ where <id> hashes the command, its configuration
// and its inputs, and leaves a manifest.json there.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cpcfg/cpcfg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cpcfg;

namespace {

struct Common {
    std::string schema;
    std::string config;
    std::string checkpoint;
    std::string out;
    std::size_t beam = 16;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
};

std::string now_utc() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + p.string() + "'");
}

json read_json(const std::string& path) {
    try {
        return json::parse(detail::read_file(path));
    } catch (const json::parse_error& e) {
        throw InputError("'" + path + "': " + e.what());
    }
}

// A run manifest may stand in for a config file: its snapshot is used.
json read_config(const std::string& path) {
    if (path.empty()) return json::object();
    auto j = read_json(path);
    if (j.is_object() && j.contains("command") && j.contains("config")) return j.at("config");
    return j;
}

struct LoadedGrammar {
    Grammar g;
    RecordSchema rs;
    std::string source;
};

LoadedGrammar load_grammar(const std::string& path) {
    auto text = path.empty() ? std::string(kInvoiceSchema) : detail::read_file(path);
    auto g = compile_schema(text);
    auto rs = RecordSchema::from_grammar(g);
    return {std::move(g), std::move(rs), path.empty() ? "builtin:invoice" : path};
}

fs::path out_root(const Common& c) {
    if (!c.out.empty()) return c.out;
    if (const char* env = std::getenv("CPCFG_OUT_ROOT"); env && *env) return env;
    return "runs";
}

class Run {
public:
    Run(std::string command, json config, json inputs, const Common& c)
        : command_(std::move(command)), config_(std::move(config)), inputs_(std::move(inputs)) {
        auto key = command_ + "\n" + config_.dump() + "\n" + inputs_.dump();
        id_ = detail::hex64(detail::fnv1a(key)).substr(0, 12);
        dir_ = out_root(c) / (command_ + "-" + id_);
        started_ = now_utc();
    }

    // Deferred so that validation failures leave nothing behind.
    const fs::path& open() {
        fs::create_directories(dir_);
        return dir_;
    }
    const fs::path& dir() const { return dir_; }

    void finish(const LoadedGrammar& lg, json extra = json::object()) {
        json m{{"id", id_},
               {"command", command_},
               {"config", config_},
               {"inputs", inputs_},
               {"schema", lg.source},
               {"grammar_hash", detail::hex64(lg.g.hash())},
               {"started", started_},
               {"finished", now_utc()}};
        for (auto& [k, v] : extra.items()) m[k] = v;
        write_text(dir_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    std::string command_;
    json config_, inputs_;
    std::string id_, started_;
    fs::path dir_;
};

bool is_document(const fs::path& p) {
    auto name = p.filename().string();
    return p.extension() == ".tsv" || name.ends_with(".ocr.json");
}

std::string doc_stem(const fs::path& p) {
    auto name = p.filename().string();
    if (name.ends_with(".ocr.json")) return name.substr(0, name.size() - 9);
    return p.stem().string();
}

std::vector<fs::path> list_documents(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError("not a directory: '" + dir.string() + "'");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_document(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw InputError("no documents (*.tsv, *.ocr.json) in '" + dir.string() + "'");
    return out;
}

struct Dataset {
    std::vector<Example> examples;
    std::vector<std::unique_ptr<ExternalVectors>> vectors;
};

Dataset load_dataset(const fs::path& dir, const std::string& vectors_dir) {
    Dataset d;
    for (const auto& p : list_documents(dir)) {
        auto rec = dir / (doc_stem(p) + ".json");
        if (!fs::exists(rec)) throw InputError("missing record '" + rec.string() + "'");
        Example ex{ingest_ocr(p.string()), read_record(rec.string()), nullptr};
        if (!vectors_dir.empty()) {
            d.vectors.push_back(std::make_unique<ExternalVectors>(
                read_external_vectors(fs::path(vectors_dir) / (ex.doc.page_id() + ".vec"))));
            ex.vectors = d.vectors.back().get();
        }
        d.examples.push_back(std::move(ex));
    }
    return d;
}

// Runs f(i) for i in [0, n) on `workers` threads; the first error is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F f) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    std::vector<std::exception_ptr> errors(workers);
    auto body = [&](std::size_t w) {
        try {
            for (std::size_t i = w; i < n; i += workers) f(i);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        body(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string counts = "500,100,100";
    double ocr_noise = -1;
};

int cmd_gen(const Common& c, const GenArgs& a, bool seed_set) {
    auto lg = load_grammar(c.schema);
    GenConfig gc = gen_config_from_json(read_config(c.config));
    if (seed_set) gc.seed = c.seed;
    if (a.ocr_noise >= 0) gc.ocr_noise = a.ocr_noise;
    gc.validate();
    std::array<std::size_t, 3> k{};
    {
        std::istringstream in(a.counts);
        std::string tok;
        std::size_t i = 0;
        while (std::getline(in, tok, ',')) {
            if (i == 3) throw InputError("--counts takes train,val,test");
            k[i++] = std::stoul(tok);
        }
        if (i != 3) throw InputError("--counts takes train,val,test");
    }
    const std::size_t n = k[0] + k[1] + k[2];
    if (n == 0) throw InputError("--counts: nothing to generate");
    std::array<double, 3> ratios{};
    for (int i = 0; i < 3; ++i) ratios[i] = static_cast<double>(k[i]) / static_cast<double>(n);
    json cfg = gen_config_to_json(gc);
    Run run("gen", cfg, json{{"counts", k}}, c);
    auto manifest = gen_dataset(gc, n, ratios, run.open());
    run.finish(lg, {{"seed", gc.seed}, {"counts", manifest.at("counts")}});
    std::cout << run.dir().string() << '\n';
    return 0;
}

struct TrainArgs {
    std::string data, train_dir, val_dir, vectors, oracle_cache;
    std::optional<std::size_t> epochs, hidden, batch;
    std::optional<double> lr;
};

int cmd_train(const Common& c, const TrainArgs& a, const CLI::App& sub) {
    auto lg = load_grammar(c.schema);
    TrainConfig cfg = config_from_json(read_config(c.config));
    if (sub.count("--beam")) cfg.beam = c.beam;
    if (sub.count("--workers")) cfg.workers = c.workers;
    if (sub.count("--seed")) cfg.seed = c.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.hidden) cfg.model.hidden = *a.hidden;
    if (a.batch) cfg.batch_size = *a.batch;
    if (a.lr) cfg.lr = *a.lr;
    if (!a.vectors.empty()) cfg.model.embed = EmbedMode::External;
    cfg.model.seed = cfg.seed;
    cfg.validate();

    fs::path train_dir = a.train_dir, val_dir = a.val_dir;
    if (!a.data.empty()) {
        if (train_dir.empty()) train_dir = fs::path(a.data) / "train";
        if (val_dir.empty() && fs::is_directory(fs::path(a.data) / "val")) val_dir = fs::path(a.data) / "val";
    }
    if (train_dir.empty()) throw InputError("train: give --data or --train");
    auto train_set = load_dataset(train_dir, a.vectors);
    Dataset val_set;
    if (!val_dir.empty()) val_set = load_dataset(val_dir, a.vectors);
    if (cfg.model.embed == EmbedMode::External) {
        cfg.model.embed_dim = train_set.examples.front().vectors->dim;
        for (const auto* ds : {&train_set, &val_set})
            for (const auto& ex : ds->examples)
                if (ex.vectors->dim != cfg.model.embed_dim || ex.vectors->rows.size() != ex.doc.size())
                    throw InputError("vectors for '" + ex.doc.page_id() + "' do not match the documents");
    }

    json inputs{{"train", fs::absolute(train_dir).string()},
                {"val", val_dir.empty() ? "" : fs::absolute(val_dir).string()},
                {"vectors", a.vectors}};
    auto cfg_json = config_to_json(cfg);
    cfg_json.erase("workers");  // does not change results
    Run run("train", cfg_json, inputs, c);
    const auto& dir = run.open();
    fs::create_directories(dir / "checkpoints");

    TrainHooks hooks;
    hooks.oracle_cache = a.oracle_cache.empty() ? out_root(c) / "oracle-cache" : fs::path(a.oracle_cache);
    std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
    hooks.on_epoch = [&](const EpochStats& s) {
        log << stats_to_json(s).dump() << '\n';
        log.flush();
        std::cerr << "epoch " << s.epoch << ": loss " << s.mean_loss << ", loss-0 " << 100 * s.zero_loss << "%";
        if (s.val_hed_f1) std::cerr << ", val HED-F1 " << *s.val_hed_f1;
        std::cerr << '\n';
    };
    hooks.on_checkpoint = [&](std::size_t epoch, const Model& m) {
        m.save(dir / "checkpoints" / ("epoch-" + std::to_string(epoch) + ".ckpt"));
    };
    auto res = train(train_set.examples, val_set.examples, lg.g, lg.rs, cfg, hooks);
    res.model.save(dir / "model.ckpt");
    run.finish(lg, {{"seed", cfg.seed}, {"checkpoint", (dir / "model.ckpt").string()}, {"workers", cfg.workers}});
    std::cout << (dir / "model.ckpt").string() << '\n';
    return 0;
}

struct ParseArgs {
    std::string input, vectors;
};

int cmd_parse(const Common& c, const ParseArgs& a) {
    auto lg = load_grammar(c.schema);
    if (c.checkpoint.empty()) throw InputError("parse: --checkpoint is required");
    auto model = Model::load(c.checkpoint, lg.g);  // throws before any output exists
    if (model.config().embed == EmbedMode::External && a.vectors.empty())
        throw InputError("checkpoint uses external embeddings: give --vectors");
    auto docs = list_documents(a.input);
    std::vector<Document> parsed;
    for (const auto& p : docs) parsed.push_back(ingest_ocr(p.string()));
    std::vector<std::unique_ptr<ExternalVectors>> vecs(parsed.size());
    if (!a.vectors.empty())
        for (std::size_t i = 0; i < parsed.size(); ++i)
            vecs[i] = std::make_unique<ExternalVectors>(
                read_external_vectors(fs::path(a.vectors) / (parsed[i].page_id() + ".vec")));

    json inputs{{"documents", fs::absolute(a.input).string()},
                {"checkpoint_hash", detail::hex64(detail::fnv1a(model.serialize()))},
                {"vectors", a.vectors}};
    Run run("parse", json{{"beam", c.beam}}, inputs, c);
    std::vector<Record> records(parsed.size());
    parallel_for(parsed.size(), c.workers, [&](std::size_t i) {
        DocScorer sc(model, parsed[i], vecs[i].get());
        auto p = predict_tree(sc, lg.g, c.beam, true);
        records[i] = tree_to_record(p.tree, lg.g, parsed[i], lg.rs);
    });
    const auto& dir = run.open();
    fs::create_directories(dir / "records");
    std::vector<std::pair<std::string, Record>> rows;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        write_record(records[i], (dir / "records" / (parsed[i].page_id() + ".json")).string());
        rows.emplace_back(parsed[i].page_id(), records[i]);
    }
    std::ofstream header(dir / "header.tsv", std::ios::binary), items(dir / "line_items.tsv", std::ios::binary);
    write_record_tables(rows, lg.rs, header, items);
    run.finish(lg, {{"checkpoint", fs::absolute(c.checkpoint).string()}, {"documents", parsed.size()}});
    std::cout << (dir / "records").string() << '\n';
    return 0;
}

struct EvalArgs {
    std::string pred, truth;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
    auto lg = load_grammar(c.schema);
    if (!fs::is_directory(a.truth)) throw InputError("not a directory: '" + a.truth + "'");
    if (!fs::is_directory(a.pred)) throw InputError("not a directory: '" + a.pred + "'");
    std::vector<fs::path> truths;
    for (const auto& e : fs::directory_iterator(a.truth)) {
        auto name = e.path().filename().string();
        if (e.is_regular_file() && e.path().extension() == ".json" && !name.ends_with(".ocr.json") &&
            name != "dataset.json" && name != "manifest.json")
            truths.push_back(e.path());
    }
    std::sort(truths.begin(), truths.end());
    if (truths.empty()) throw InputError("no records in '" + a.truth + "'");
    std::vector<std::pair<Record, Record>> pairs;
    for (const auto& t : truths) {
        auto p = fs::path(a.pred) / t.filename();
        if (!fs::exists(p)) throw InputError("missing prediction '" + p.string() + "'");
        pairs.emplace_back(read_record(p.string()), read_record(t.string()));
    }
    auto report = evaluate(pairs, lg.rs);
    json inputs{{"pred", fs::absolute(a.pred).string()}, {"truth", fs::absolute(a.truth).string()}};
    Run run("eval", json::object(), inputs, c);
    const auto& dir = run.open();
    auto text = format_report(report, lg.rs);
    write_text(dir / "report.txt", text);
    write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
    run.finish(lg, {{"documents", report.documents}});
    std::cout << text;
    return 0;
}

struct OracleArgs {
    std::string input, split = "char";
};

int cmd_oracle(const Common& c, const OracleArgs& a) {
    auto lg = load_grammar(c.schema);
    if (a.split != "char" && a.split != "token") throw InputError("--split must be 'char' or 'token'");
    auto split = a.split == "char" ? FieldSplit::Char : FieldSplit::Token;
    auto data = load_dataset(a.input, "");
    json inputs{{"documents", fs::absolute(a.input).string()}};
    Run run("oracle", json{{"split", a.split}}, inputs, c);
    std::vector<OracleTree> trees(data.examples.size());
    parallel_for(trees.size(), c.workers,
                 [&](std::size_t i) { trees[i] = oracle_tree(data.examples[i], lg.g, lg.rs, split); });
    const auto& dir = run.open();
    fs::create_directories(dir / "trees");
    std::ostringstream costs;
    costs << "doc_id\thed_cost\n";
    std::int64_t total = 0;
    for (std::size_t i = 0; i < trees.size(); ++i) {
        const auto& id = data.examples[i].doc.page_id();
        json j{{"doc_id", id}, {"cost", trees[i].cost}, {"tree", tree_to_json(trees[i].tree, lg.g)}};
        write_text(dir / "trees" / (id + ".json"), j.dump(1) + "\n");
        costs << id << '\t' << trees[i].cost << '\n';
        total += trees[i].cost;
    }
    write_text(dir / "costs.tsv", costs.str());
    write_text(dir / "leaf_labels.tsv", export_leaf_labels(data.examples, trees, lg.g));
    run.finish(lg, {{"documents", trees.size()}, {"total_cost", total}});
    std::cout << "documents " << trees.size() << ", total HED cost " << total << "\n" << dir.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grammar-based extraction of relational records from OCR'd documents"};
    app.require_subcommand(1);
    Common c;
    auto common = [&](CLI::App* s) {
        s->add_option("--schema", c.schema, "schema file (default: built-in invoice schema)");
        s->add_option("--config", c.config, "JSON config file or a previous run's manifest.json");
        s->add_option("--out", c.out, "output root (default: $CPCFG_OUT_ROOT, else ./runs)");
        s->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
        s->add_option("--seed", c.seed, "random seed");
    };

    auto* gen = app.add_subcommand("gen", "generate a synthetic invoice dataset");
    common(gen);
    GenArgs ga;
    gen->add_option("--counts", ga.counts, "train,val,test document counts")->capture_default_str();
    gen->add_option("--ocr-noise", ga.ocr_noise, "per-character substitution probability");

    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    common(tr);
    TrainArgs ta;
    tr->add_option("--beam", c.beam, "beam width for the training parse, 0 = exact");
    tr->add_option("--data", ta.data, "dataset root with train/ and val/");
    tr->add_option("--train", ta.train_dir, "training directory");
    tr->add_option("--val", ta.val_dir, "validation directory");
    tr->add_option("--epochs", ta.epochs);
    tr->add_option("--hidden", ta.hidden, "hidden dimension");
    tr->add_option("--batch", ta.batch, "documents per step");
    tr->add_option("--lr", ta.lr);
    tr->add_option("--vectors", ta.vectors, "directory of <id>.vec external embeddings");
    tr->add_option("--oracle-cache", ta.oracle_cache, "compatible-tree cache (default: <out>/oracle-cache)");

    auto* pa = app.add_subcommand("parse", "extract records from documents");
    common(pa);
    ParseArgs pargs;
    pa->add_option("input", pargs.input, "directory of documents")->required();
    pa->add_option("--checkpoint", c.checkpoint, "model checkpoint")->required();
    pa->add_option("--beam", c.beam, "beam width, 0 = exact")->capture_default_str();
    pa->add_option("--vectors", pargs.vectors, "directory of <id>.vec external embeddings");

    auto* ev = app.add_subcommand("eval", "score predicted records against the truth");
    common(ev);
    EvalArgs eargs;
    ev->add_option("--pred", eargs.pred, "directory of predicted records")->required();
    ev->add_option("--truth", eargs.truth, "directory of true records")->required();

    auto* orc = app.add_subcommand("oracle", "compatible trees and leaf labels for a labelled dataset");
    common(orc);
    OracleArgs oargs;
    orc->add_option("input", oargs.input, "directory of documents with records")->required();
    orc->add_option("--split", oargs.split, "field split points: char (exact) or token")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_gen(c, ga, gen->count("--seed") > 0);
        if (*tr) return cmd_train(c, ta, *tr);
        if (*pa) return cmd_parse(c, pargs);
        if (*ev) return cmd_eval(c, eargs);
        if (*orc) return cmd_oracle(c, oargs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
