#pragma once

// Structured-prediction training: loss s(t_hat) - s(t_bar) where t_hat is
// the parser's best tree and t_bar the best-HED (compatible) tree, which
// never changes and is computed once per example.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpcfg/chart_parser.hpp"
#include "cpcfg/common.hpp"
#include "cpcfg/evaluate.hpp"
#include "cpcfg/neural.hpp"
#include "cpcfg/oracle.hpp"
#include "cpcfg/record.hpp"
#include "cpcfg/tree.hpp"

namespace cpcfg {

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    double lr = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t epochs = 10;
    std::size_t batch_size = 1;
    std::size_t beam = 16;         // inference; 0 = exact
    std::size_t oracle_beam = 0;   // only exact oracle search is implemented
    bool exact_fallback = true;    // retry a beam parse that loses the root without a beam
    bool search_updates = true;    // hinge at the lowest node where the chart misses t_bar
    FieldSplit oracle_split = FieldSplit::Token;
    double margin = 0.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // epochs; 0 = final only
    std::size_t workers = 1;
    ModelConfig model;

    void validate() const {
        auto bad = [](const std::string& m) { throw Error("train config: " + m); };
        if (!(lr > 0) || !std::isfinite(lr)) bad("lr must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("betas must be in [0, 1)");
        if (!(eps > 0)) bad("eps must be positive");
        if (batch_size == 0) bad("batch_size must be positive");
        if (workers == 0) bad("workers must be positive");
        if (!(margin >= 0) || !std::isfinite(margin)) bad("margin must be >= 0");
        if (oracle_beam != 0) bad("oracle_beam must be 0 (the oracle search is exact)");
        if (model.hidden == 0 || model.embed_dim == 0) bad("model dimensions must be positive");
        if (model.embed == EmbedMode::Hash && model.table_size == 0) bad("table_size must be positive");
    }
};

inline nlohmann::json config_to_json(const TrainConfig& c) {
    return nlohmann::json{
        {"lr", c.lr},
        {"optimizer", c.optimizer == Optimizer::Adam ? "adam" : "sgd"},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"eps", c.eps},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"beam", c.beam},
        {"oracle_beam", c.oracle_beam},
        {"exact_fallback", c.exact_fallback},
        {"search_updates", c.search_updates},
        {"oracle_split", c.oracle_split == FieldSplit::Char ? "char" : "token"},
        {"margin", c.margin},
        {"seed", c.seed},
        {"checkpoint_every", c.checkpoint_every},
        {"workers", c.workers},
        {"hidden", c.model.hidden},
        {"embedding", c.model.embed == EmbedMode::Hash ? "hash" : "external"},
        {"embed_dim", c.model.embed_dim},
        {"table_size", c.model.table_size},
    };
}

inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    if (!j.is_object()) throw InputError("train config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        try {
            if (k == "lr") c.lr = v.get<double>();
            else if (k == "optimizer") {
                auto s = v.get<std::string>();
                if (s != "adam" && s != "sgd") throw InputError("optimizer must be 'adam' or 'sgd'");
                c.optimizer = s == "adam" ? Optimizer::Adam : Optimizer::Sgd;
            } else if (k == "beta1") c.beta1 = v.get<double>();
            else if (k == "beta2") c.beta2 = v.get<double>();
            else if (k == "eps") c.eps = v.get<double>();
            else if (k == "epochs") c.epochs = v.get<std::size_t>();
            else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (k == "beam") c.beam = v.get<std::size_t>();
            else if (k == "oracle_beam") c.oracle_beam = v.get<std::size_t>();
            else if (k == "exact_fallback") c.exact_fallback = v.get<bool>();
            else if (k == "search_updates") c.search_updates = v.get<bool>();
            else if (k == "oracle_split") {
                auto s = v.get<std::string>();
                if (s != "char" && s != "token") throw InputError("oracle_split must be 'char' or 'token'");
                c.oracle_split = s == "char" ? FieldSplit::Char : FieldSplit::Token;
            } else if (k == "margin") c.margin = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
            else if (k == "workers") c.workers = v.get<std::size_t>();
            else if (k == "hidden") c.model.hidden = v.get<std::size_t>();
            else if (k == "embedding") {
                auto s = v.get<std::string>();
                if (s != "hash" && s != "external") throw InputError("embedding must be 'hash' or 'external'");
                c.model.embed = s == "hash" ? EmbedMode::Hash : EmbedMode::External;
            } else if (k == "embed_dim") c.model.embed_dim = v.get<std::size_t>();
            else if (k == "table_size") c.model.table_size = v.get<std::size_t>();
            else throw InputError("unknown train config key '" + k + "'");
        } catch (const nlohmann::json::exception&) {
            throw InputError("train config: bad value for '" + k + "'");
        }
    }
    c.model.seed = c.seed;
    c.validate();
    return c;
}

struct Example {
    Document doc;
    Record target;
    const ExternalVectors* vectors = nullptr;
};

struct OracleTree {
    ParseTree tree;
    std::int64_t cost = 0;
};

inline std::string oracle_cache_key(const Example& ex, const Grammar& g, FieldSplit split) {
    auto h = detail::fnv1a(format_ocr_tsv(ex.doc));
    h = detail::fnv1a(format_record(ex.target), h);
    h = detail::hash_combine(h, g.hash());
    h = detail::hash_combine(h, static_cast<std::uint64_t>(split));
    return detail::hex64(h);
}

// Compatible tree, read from / written to `cache_dir` when one is given.
inline OracleTree oracle_tree(const Example& ex, const Grammar& g, const RecordSchema& rs, FieldSplit split,
                              const std::optional<std::filesystem::path>& cache_dir = std::nullopt) {
    std::filesystem::path file;
    if (cache_dir) {
        file = *cache_dir / (oracle_cache_key(ex, g, split) + ".json");
        if (std::filesystem::exists(file)) {
            try {
                auto j = nlohmann::json::parse(detail::read_file(file.string()));
                if (j.at("version").get<int>() == kTreeFormatVersion) {
                    OracleTree out{tree_from_json(j.at("tree"), g), j.at("cost").get<std::int64_t>()};
                    check_tree(out.tree, g, ex.doc);
                    return out;
                }
            } catch (const std::exception&) {
                // unreadable entry: recompute and overwrite
            }
        }
    }
    OracleOptions opts;
    opts.field_split = split;
    auto r = compatible_parse(ex.doc, g, rs, ex.target, opts);
    if (!r) throw Error("document '" + ex.doc.page_id() + "' cannot be parsed by the grammar");
    OracleTree out{std::move(r->tree), r->cost};
    if (cache_dir) {
        std::filesystem::create_directories(*cache_dir);
        nlohmann::json j{{"version", kTreeFormatVersion}, {"cost", out.cost}, {"tree", tree_to_json(out.tree, g)}};
        auto tmp = file;
        tmp += ".tmp";
        std::ofstream(tmp) << j.dump() << '\n';
        std::filesystem::rename(tmp, file);
    }
    return out;
}

struct Prediction {
    ParseTree tree;
    double score = 0;
    bool fell_back = false;
};

inline Prediction predict_tree(const DocScorer& sc, const Grammar& g, std::size_t beam, bool exact_fallback) {
    ParseOptions po;
    po.beam = beam;
    auto r = parse_best(sc.document(), g, sc, po);
    bool fell_back = false;
    if (!r && beam > 0 && exact_fallback) {
        po.beam = 0;
        r = parse_best(sc.document(), g, sc, po);
        fell_back = true;
    }
    if (!r) throw Error("document '" + sc.document().page_id() + "' cannot be parsed by the grammar");
    return Prediction{std::move(r->tree), r->score, fell_back};
}

struct LossResult {
    double loss = 0;       // clamped at 0
    double raw = 0;        // hinge argument of the update that was taken
    bool same = false;     // t_hat == t_bar
    bool local = false;    // update taken at a subtree, see structured_loss
    bool fell_back = false;
    ParseTree predicted;
};

namespace detail {

// Lowest node of t_bar whose (region, symbol) chart entry is not t_bar's own
// subtree. Everything below it matches the chart, so the chart scored
// t_bar's candidate there exactly and kept something else: either pruned
// by the beam or outscored. Returns (node, competitor).
template <class C>
std::optional<std::pair<int, ParseTree>> first_search_error(C& chart, const ParseTree& bar) {
    std::vector<int> order;
    bar.visit([&](int i) { order.push_back(i); });
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& n = bar.node(*it);
        RegionId region = chart.regions().intern(n.boxes);
        auto sub = bar.subtree(*it);
        if (auto mine = chart.backtrace(region, n.symbol)) {
            if (same_tree(*mine, sub)) continue;
            return std::make_pair(*it, std::move(*mine));
        }
        // pruned: compete with the weakest entry that survived
        const auto& kept = chart.entries(region);
        if (kept.empty()) return std::nullopt;
        auto weakest = std::min_element(kept.begin(), kept.end(),
                                        [](const ChartEntry& x, const ChartEntry& y) { return x.score < y.score; });
        return std::make_pair(*it, std::move(*chart.backtrace(region, weakest->symbol)));
    }
    return std::nullopt;
}

}  // namespace detail

// Hinge max(0, s(t_hat) - s(t_bar) + margin [t_hat != t_bar]), gradient
// added as weight * d(loss)/d(theta) into grad when grad is non-null.
//
// The chart keeps one hidden vector per (region, symbol), so the parse is
// not a true argmax and can return t_hat != t_bar with s(t_hat) < s(t_bar);
// the beam adds pruning errors of the same kind. The whole-tree hinge is
// then 0 although the parser still misses t_bar. With search_updates the
// hinge is instead applied at the lowest disagreeing node of t_bar (see
// detail::first_search_error), so loss 0 means the parser returns t_bar.
inline LossResult structured_loss(const DocScorer& sc, const Grammar& g, const ParseTree& oracle,
                                  const TrainConfig& cfg, std::vector<double>* grad = nullptr, double weight = 1.0) {
    LossResult out;
    ParseOptions po;
    po.beam = cfg.beam;
    std::optional<Chart<DocScorer>> chart(std::in_place, sc.document(), g, sc, po);
    auto hat = chart->backtrace(chart->regions().root(), g.start());
    if (!hat && cfg.beam > 0 && cfg.exact_fallback) {
        po.beam = 0;
        chart.emplace(sc.document(), g, sc, po);
        hat = chart->backtrace(chart->regions().root(), g.start());
        out.fell_back = true;
    }
    if (!hat) throw Error("document '" + sc.document().page_id() + "' cannot be parsed by the grammar");
    out.same = same_tree(*hat, oracle);
    if (out.same) {
        out.predicted = std::move(*hat);
        return out;
    }
    auto apply = [&](const ParseTree& worse_should_be, const ParseTree& better_should_be) {
        Tape up(sc, worse_should_be, g);
        Tape down(sc, better_should_be, g);
        out.raw = up.score() - down.score() + cfg.margin;
        out.loss = std::max(0.0, out.raw);
        if (grad && out.loss > 0) {
            up.backward(weight, *grad);
            down.backward(-weight, *grad);
        }
    };
    apply(*hat, oracle);
    if (out.raw <= 0 && cfg.search_updates) {
        if (auto err = detail::first_search_error(*chart, oracle)) {
            out.local = true;
            apply(err->second, oracle.subtree(err->first));
        }
    }
    out.predicted = std::move(*hat);
    return out;
}

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0;
    double zero_loss = 0;  // fraction of documents with loss 0
    double match = 0;      // fraction with t_hat == t_bar
    std::size_t fallbacks = 0;
    std::optional<double> val_hed_f1;
};

inline nlohmann::json stats_to_json(const EpochStats& s) {
    nlohmann::json j{{"epoch", s.epoch},
                     {"mean_loss", s.mean_loss},
                     {"zero_loss", s.zero_loss},
                     {"match", s.match},
                     {"fallbacks", s.fallbacks}};
    j["val_hed_f1"] = s.val_hed_f1 ? nlohmann::json(*s.val_hed_f1) : nlohmann::json(nullptr);
    return j;
}

struct TrainHooks {
    std::function<void(const EpochStats&)> on_epoch;
    std::function<void(std::size_t epoch, const Model&)> on_checkpoint;
    std::function<bool(const EpochStats&)> stop;  // true ends training after this epoch
    std::optional<std::filesystem::path> oracle_cache;
};

struct TrainResult {
    Model model;
    std::vector<EpochStats> epochs;
    std::vector<OracleTree> oracles;
};

inline Record predict_record(const Model& m, const Example& ex, const Grammar& g, const RecordSchema& rs,
                             std::size_t beam, bool exact_fallback = true) {
    DocScorer sc(m, ex.doc, ex.vectors);
    auto p = predict_tree(sc, g, beam, exact_fallback);
    return tree_to_record(p.tree, g, ex.doc, rs);
}

inline double hed_f1(const Model& m, const std::vector<Example>& xs, const Grammar& g, const RecordSchema& rs,
                     std::size_t beam, bool exact_fallback) {
    EditCounts total;
    for (const auto& ex : xs) total += hed(predict_record(m, ex, g, rs, beam, exact_fallback), conform(ex.target, rs));
    return prf(total).f1;
}

namespace detail {

class Stepper {
public:
    Stepper(const TrainConfig& c, std::size_t n) : c_(c) {
        if (c.optimizer == Optimizer::Adam) m_.assign(n, 0.0), v_.assign(n, 0.0);
    }
    void step(std::vector<double>& theta, const std::vector<double>& g) {
        ++t_;
        if (c_.optimizer == Optimizer::Sgd) {
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= c_.lr * g[i];
            return;
        }
        const double c1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m_[i] = c_.beta1 * m_[i] + (1 - c_.beta1) * g[i];
            v_[i] = c_.beta2 * v_[i] + (1 - c_.beta2) * g[i] * g[i];
            theta[i] -= c_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + c_.eps);
        }
    }

private:
    const TrainConfig& c_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace detail

// Epoch 0 is a pass without updates (the untrained model).
inline TrainResult train(const std::vector<Example>& data, const std::vector<Example>& val, const Grammar& g,
                         const RecordSchema& rs, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (data.empty()) throw Error("train: empty dataset");
    ModelConfig mc = cfg.model;
    mc.seed = cfg.seed;
    TrainResult res{Model(g, mc), {}, {}};
    for (const auto& ex : data) res.oracles.push_back(oracle_tree(ex, g, rs, cfg.oracle_split, hooks.oracle_cache));

    Model& model = res.model;
    detail::Stepper stepper(cfg, model.size());
    const std::size_t workers = std::min(cfg.workers, cfg.batch_size);
    // one buffer per batch slot, summed in slot order, so the worker count
    // cannot change the floating-point result
    std::vector<std::vector<double>> grads(cfg.batch_size, std::vector<double>(model.size(), 0.0));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch <= cfg.epochs; ++epoch) {
        const bool update = epoch > 0;
        if (update) {
            std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ (0x5eedULL + epoch)));
            std::shuffle(order.begin(), order.end(), rng);
        }
        EpochStats st;
        st.epoch = epoch;
        std::vector<LossResult> results(data.size());
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            auto run = [&](std::size_t w) {
                for (std::size_t i = start + w; i < end; i += workers) {
                    std::size_t d = order[i];
                    DocScorer sc(model, data[d].doc, data[d].vectors);
                    results[d] = structured_loss(sc, g, res.oracles[d].tree, cfg, update ? &grads[i - start] : nullptr);
                }
            };
            if (workers == 1) {
                run(0);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
                for (auto& t : pool) t.join();
            }
            for (std::size_t i = start; i < end; ++i) {
                const auto& r = results[order[i]];
                if (!std::isfinite(r.raw))
                    throw Error("training diverged: non-finite loss on document '" + data[order[i]].doc.page_id() +
                                "' in epoch " + std::to_string(epoch));
            }
            if (!update) continue;
            for (std::size_t j = 1; j < end - start; ++j)
                for (std::size_t k = 0; k < grads[0].size(); ++k) grads[0][k] += grads[j][k];
            stepper.step(model.params(), grads[0]);
            for (std::size_t j = 0; j < end - start; ++j) std::fill(grads[j].begin(), grads[j].end(), 0.0);
            for (double v : model.params())
                if (!std::isfinite(v))
                    throw Error("training diverged: non-finite parameter after a step in epoch " +
                                std::to_string(epoch));
        }
        for (const auto& r : results) {
            st.mean_loss += r.loss;
            st.zero_loss += r.loss == 0.0 ? 1 : 0;
            st.match += r.same ? 1 : 0;
            st.fallbacks += r.fell_back ? 1 : 0;
        }
        const auto n = static_cast<double>(data.size());
        st.mean_loss /= n;
        st.zero_loss /= n;
        st.match /= n;
        if (!val.empty()) st.val_hed_f1 = hed_f1(model, val, g, rs, cfg.beam, cfg.exact_fallback);
        res.epochs.push_back(st);
        if (hooks.on_epoch) hooks.on_epoch(st);
        if (hooks.on_checkpoint && epoch > 0 && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
            hooks.on_checkpoint(epoch, model);
        if (hooks.stop && hooks.stop(st)) break;
    }
    return res;
}

// One line per box: doc_id, box_id, content, field ("N" for noise), from
// the compatible tree's leaves.
inline std::string export_leaf_labels(const std::vector<Example>& data, const std::vector<OracleTree>& trees,
                                      const Grammar& g) {
    if (data.size() != trees.size()) throw Error("export_leaf_labels: one tree per document expected");
    std::ostringstream out;
    for (std::size_t d = 0; d < data.size(); ++d) {
        auto labels = leaf_labels(trees[d].tree, g);
        std::sort(labels.begin(), labels.end(), [](const LabeledLeaf& a, const LabeledLeaf& b) { return a.box < b.box; });
        if (labels.size() != data[d].doc.size())
            throw Error("export_leaf_labels: tree for '" + data[d].doc.page_id() + "' does not cover every box");
        for (const auto& l : labels)
            out << data[d].doc.page_id() << '\t' << l.box << '\t' << data[d].doc.box(l.box).content << '\t' << l.field
                << '\n';
    }
    return out.str();
}

}  // namespace cpcfg
