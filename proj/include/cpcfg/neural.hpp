#pragma once

// Per-rule scoring networks. Lexical rule X -> x:
//   h = GELU(W0 h0 + b0),  s = w1.h + b1
// with h0 = [box embedding; 4 page-relative coordinates].
// Binary rule X -> Y Z over a split in direction d:
//   h = GELU(W1 h1 + W2 h2 + Wd hd + b0),  s = w3.h + b3
// Gradients are hand-written reverse mode over a recorded tree.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "cpcfg/chart_parser.hpp"
#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/grammar.hpp"
#include "cpcfg/tree.hpp"

namespace cpcfg {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return cdf + x * pdf;
}

enum class EmbedMode : std::uint32_t { Hash = 0, External = 1 };

struct ModelConfig {
    std::size_t hidden = 64;
    EmbedMode embed = EmbedMode::Hash;
    std::size_t embed_dim = 32;     // external mode: dimension of the supplied vectors
    std::size_t table_size = 4096;  // hash buckets (hash mode only)
    std::uint64_t seed = 0;
};

// Hashed features of one box: character 2/3-grams plus token-class flags.
inline std::vector<std::uint64_t> box_features(const std::string& content, Terminal term) {
    std::string s = "^";
    for (char c : content) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    s.push_back('$');
    std::vector<std::uint64_t> out;
    for (std::size_t n = 2; n <= 3; ++n)
        for (std::size_t i = 0; i + n <= s.size(); ++i) out.push_back(detail::fnv1a(s.substr(i, n), detail::fnv1a("g")));
    static const std::regex date_like(R"(\d{1,4}[/.\-]\d{1,2}[/.\-]\d{1,4})");
    auto flag = [&](const char* name) { out.push_back(detail::fnv1a(name, detail::fnv1a("f"))); };
    if (term == Terminal::Number || term == Terminal::Money) flag("numeric");
    if (term == Terminal::Money) flag("currency");
    if (std::regex_search(content, date_like)) flag("date");
    bool alpha = !content.empty();
    for (char c : content) alpha = alpha && std::isalpha(static_cast<unsigned char>(c));
    if (alpha) flag("alpha");
    if (!content.empty() && content.back() == ':') flag("colon");
    return out;
}

// Per-document box vectors for external mode, indexed by box id.
struct ExternalVectors {
    std::size_t dim = 0;
    std::vector<std::vector<double>> rows;
};

// Format: first line "dim<TAB>E", then "box_id<TAB>v1 v2 ... vE" per box.
inline ExternalVectors parse_external_vectors(const std::string& text) {
    ExternalVectors out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::map<long, std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto cols = detail::split_tabs(std::string(t));
        if (out.dim == 0) {
            if (cols.size() != 2 || cols[0] != "dim") throw InputError("expected 'dim<TAB>E' header", lineno);
            long d = std::strtol(cols[1].c_str(), nullptr, 10);
            if (d <= 0) throw InputError("bad dimension", lineno);
            out.dim = static_cast<std::size_t>(d);
            continue;
        }
        if (cols.size() != 2) throw InputError("expected box_id<TAB>vector", lineno);
        char* end = nullptr;
        long id = std::strtol(cols[0].c_str(), &end, 10);
        if (*end || id < 0) throw InputError("bad box id '" + cols[0] + "'", lineno);
        std::istringstream vs(cols[1]);
        std::vector<double> v;
        double x;
        while (vs >> x) v.push_back(x);
        if (!vs.eof()) throw InputError("bad number in vector", lineno);
        if (v.size() != out.dim) throw InputError("vector has " + std::to_string(v.size()) + " values, expected " +
                                                      std::to_string(out.dim), lineno);
        if (!rows.emplace(id, std::move(v)).second) throw InputError("duplicate box id", lineno);
    }
    if (out.dim == 0) throw InputError("empty vector file");
    for (auto& [id, v] : rows) {
        if (static_cast<std::size_t>(id) != out.rows.size()) throw InputError("box ids must be 0..n-1");
        out.rows.push_back(std::move(v));
    }
    return out;
}

inline ExternalVectors read_external_vectors(const std::filesystem::path& p) {
    return parse_external_vectors(detail::read_file(p));
}

class Model {
public:
    static constexpr std::uint32_t kVersion = 1;

    Model(const Grammar& g, const ModelConfig& cfg) : cfg_(cfg), grammar_hash_(g.hash()) {
        if (cfg.hidden == 0) throw Error("model: hidden dimension must be positive");
        if (cfg.embed_dim == 0) throw Error("model: embedding dimension must be positive");
        if (cfg.embed == EmbedMode::Hash && cfg.table_size == 0) throw Error("model: empty hash table");
        layout(g);
        init(cfg.seed);
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t hidden() const { return cfg_.hidden; }
    std::size_t input_dim() const { return cfg_.embed_dim + 4; }
    std::uint64_t grammar_hash() const { return grammar_hash_; }
    std::size_t size() const { return theta_.size(); }
    std::vector<double>& params() { return theta_; }
    const std::vector<double>& params() const { return theta_; }
    std::size_t rule_count() const { return offset_.size(); }

    std::size_t table_offset() const { return 0; }
    std::size_t dir_offset() const { return dir_offset_; }
    std::size_t rule_offset(RuleId r) const { return offset_.at(r); }
    bool is_lexical(RuleId r) const { return lexical_.at(r) != 0; }

    std::size_t lexical_block() const { const auto H = cfg_.hidden; return H * input_dim() + H + H + 1; }
    std::size_t binary_block() const { const auto H = cfg_.hidden; return 3 * H * H + H + H + 1; }

    void save(const std::filesystem::path& p) const {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + p.string());
        out << serialize();
        if (!out) throw CheckpointError("write failed: " + p.string());
    }

    std::string serialize() const {
        std::string s = "CPCFGCKP";
        put_u32(s, kVersion);
        put_u64(s, grammar_hash_);
        put_u32(s, static_cast<std::uint32_t>(cfg_.hidden));
        put_u32(s, static_cast<std::uint32_t>(cfg_.embed));
        put_u32(s, static_cast<std::uint32_t>(cfg_.embed_dim));
        put_u32(s, static_cast<std::uint32_t>(cfg_.table_size));
        put_u64(s, cfg_.seed);
        put_u32(s, static_cast<std::uint32_t>(offset_.size()));
        put_u64(s, theta_.size());
        for (double v : theta_) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_u64(s, bits);
        }
        return s;
    }

    static Model deserialize(const std::string& s, const Grammar& g) {
        std::size_t pos = 0;
        auto need = [&](std::size_t n) {
            if (pos + n > s.size()) throw CheckpointError("checkpoint truncated");
        };
        need(8);
        if (s.compare(0, 8, "CPCFGCKP") != 0) throw CheckpointError("not a checkpoint (bad magic)");
        pos = 8;
        auto u32 = [&] { need(4); std::uint32_t v = 0; for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s[pos++])) << (8 * i); return v; };
        auto u64 = [&] { need(8); std::uint64_t v = 0; for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[pos++])) << (8 * i); return v; };
        if (auto v = u32(); v != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
        auto hash = u64();
        if (hash != g.hash())
            throw CheckpointError("checkpoint grammar hash " + detail::hex64(hash) + " does not match grammar " +
                                  detail::hex64(g.hash()));
        ModelConfig cfg;
        cfg.hidden = u32();
        auto mode = u32();
        if (mode > 1) throw CheckpointError("bad embedding mode");
        cfg.embed = static_cast<EmbedMode>(mode);
        cfg.embed_dim = u32();
        cfg.table_size = u32();
        cfg.seed = u64();
        auto rules = u32();
        auto count = u64();
        if (rules != g.rules().size()) throw CheckpointError("checkpoint rule count does not match grammar");
        Model m(g, cfg);
        if (count != m.theta_.size()) throw CheckpointError("checkpoint parameter count does not match its header");
        for (auto& v : m.theta_) {
            auto bits = u64();
            std::memcpy(&v, &bits, sizeof v);
            if (!std::isfinite(v)) throw CheckpointError("non-finite parameter in checkpoint");
        }
        if (pos != s.size()) throw CheckpointError("trailing bytes in checkpoint");
        return m;
    }

    static Model load(const std::filesystem::path& p, const Grammar& g) {
        if (!std::filesystem::exists(p)) throw CheckpointError("no such checkpoint: " + p.string());
        return deserialize(detail::read_file(p), g);
    }

private:
    static void put_u32(std::string& s, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    static void put_u64(std::string& s, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void layout(const Grammar& g) {
        std::size_t pos = cfg_.embed == EmbedMode::Hash ? cfg_.table_size * cfg_.embed_dim : 0;
        dir_offset_ = pos;
        pos += 2 * cfg_.hidden;
        for (const auto& r : g.rules()) {
            offset_.push_back(pos);
            lexical_.push_back(r.is_lexical ? 1 : 0);
            pos += r.is_lexical ? lexical_block() : binary_block();
        }
        theta_.assign(pos, 0.0);
    }

    void init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        auto fill = [&](std::size_t at, std::size_t n, std::size_t fan_in) {
            double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-a, a);
            for (std::size_t i = 0; i < n; ++i) theta_[at + i] = u(rng);
        };
        const auto H = cfg_.hidden, in = input_dim();
        if (cfg_.embed == EmbedMode::Hash) fill(0, cfg_.table_size * cfg_.embed_dim, 1);
        fill(dir_offset_, 2 * H, 1);
        for (std::size_t r = 0; r < offset_.size(); ++r) {
            std::size_t o = offset_[r];
            if (lexical_[r]) {
                fill(o, H * in + H, in);   // W0, b0
                fill(o + H * in + H, H + 1, H);  // w1, b1
            } else {
                fill(o, 2 * H * H, 2 * H + H);         // W1, W2
                fill(o + 2 * H * H, H * H + H, 3 * H);  // Wd, b0
                fill(o + 3 * H * H + H, H + 1, H);      // w3, b3
            }
        }
    }

    ModelConfig cfg_;
    std::uint64_t grammar_hash_;
    std::size_t dir_offset_ = 0;
    std::vector<std::size_t> offset_;
    std::vector<char> lexical_;
    std::vector<double> theta_;
};

namespace detail {
using MatC = Eigen::Map<const Eigen::MatrixXd>;
using VecC = Eigen::Map<const Eigen::VectorXd>;
using Mat = Eigen::Map<Eigen::MatrixXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;
}  // namespace detail

// A model bound to one document: box inputs and per-(box, rule) unary
// results are computed once. Rebind after every parameter update.
class DocScorer {
public:
    DocScorer(const Model& m, const Document& doc, const ExternalVectors* ext = nullptr)
        : m_(m), doc_(doc), H_(m.hidden()), in_(m.input_dim()) {
        const auto E = m.config().embed_dim;
        const auto& th = m.params();
        h0_.assign(doc.size() * in_, 0.0);
        feats_.resize(doc.size());
        if (m.config().embed == EmbedMode::External) {
            if (!ext) throw Error("external embedding mode needs vectors for document '" + doc.page_id() + "'");
            if (ext->dim != E) throw Error("external vectors have dimension " + std::to_string(ext->dim) +
                                           ", model expects " + std::to_string(E));
            if (ext->rows.size() != doc.size())
                throw Error("external vectors cover " + std::to_string(ext->rows.size()) + " boxes, document '" +
                            doc.page_id() + "' has " + std::to_string(doc.size()));
        }
        for (const auto& b : doc.boxes()) {
            double* h0 = &h0_[b.id * in_];
            if (m.config().embed == EmbedMode::Hash) {
                for (auto f : box_features(b.content, doc.terminal(b.id)))
                    feats_[b.id].push_back(static_cast<std::uint32_t>(f % m.config().table_size));
                double inv = feats_[b.id].empty() ? 0.0 : 1.0 / static_cast<double>(feats_[b.id].size());
                for (auto row : feats_[b.id])
                    for (std::size_t k = 0; k < E; ++k) h0[k] += inv * th[row * E + k];
            } else {
                std::copy(ext->rows[b.id].begin(), ext->rows[b.id].end(), h0);
            }
            h0[E] = b.x1;  // already page-relative
            h0[E + 1] = b.y1;
            h0[E + 2] = b.x2;
            h0[E + 3] = b.y2;
        }
        // Wd hd + b0 per (binary rule, direction).
        dir_bias_.assign(m.rule_count() * 2 * H_, 0.0);
        for (RuleId r = 0; r < m.rule_count(); ++r) {
            if (m.is_lexical(r)) continue;
            const double* p = th.data() + m.rule_offset(r);
            detail::MatC Wd(p + 2 * H_ * H_, static_cast<Eigen::Index>(H_), static_cast<Eigen::Index>(H_));
            detail::VecC b0(p + 3 * H_ * H_, static_cast<Eigen::Index>(H_));
            for (int d = 0; d < 2; ++d) {
                detail::VecC hd(th.data() + m.dir_offset() + static_cast<std::size_t>(d) * H_, static_cast<Eigen::Index>(H_));
                detail::Vec out(&dir_bias_[(r * 2 + static_cast<std::size_t>(d)) * H_], static_cast<Eigen::Index>(H_));
                out = Wd * hd + b0;
            }
        }
    }

    std::size_t hidden_dim() const { return H_; }
    const Model& model() const { return m_; }
    const Document& document() const { return doc_; }
    const double* input(BoxId b) const { return &h0_[b * in_]; }
    const std::vector<std::uint32_t>& features(BoxId b) const { return feats_[b]; }

    // Fills z (pre-activation) too when asked; used by the tape.
    double unary(const Document&, BoxId b, RuleId r, double* h, double* z = nullptr) const {
        const double* p = m_.params().data() + m_.rule_offset(r);
        const auto H = static_cast<Eigen::Index>(H_), in = static_cast<Eigen::Index>(in_);
        detail::MatC W0(p, H, in);
        detail::VecC b0(p + H_ * in_, H), w1(p + H_ * in_ + H_, H);
        double b1 = p[H_ * in_ + 2 * H_];
        Eigen::VectorXd pre = W0 * detail::VecC(input(b), in) + b0;
        detail::Vec hv(h, H);
        for (Eigen::Index i = 0; i < H; ++i) hv[i] = gelu(pre[i]);
        if (z) std::copy(pre.data(), pre.data() + H, z);
        return w1.dot(hv) + b1;
    }

    double binary(const BinaryInput& in, double* h) const { return binary(in.rule, in.dir, in.h1, in.h2, h); }

    double binary(RuleId r, Direction dir, const double* h1, const double* h2, double* h, double* z = nullptr) const {
        const double* p = m_.params().data() + m_.rule_offset(r);
        const auto H = static_cast<Eigen::Index>(H_);
        detail::MatC W1(p, H, H), W2(p + H_ * H_, H, H);
        detail::VecC w3(p + 3 * H_ * H_ + H_, H);
        double b3 = p[3 * H_ * H_ + 2 * H_];
        Eigen::VectorXd pre = detail::VecC(&dir_bias_[(r * 2 + static_cast<std::size_t>(dir)) * H_], H);
        pre.noalias() += W1 * detail::VecC(h1, H);
        pre.noalias() += W2 * detail::VecC(h2, H);
        detail::Vec hv(h, H);
        for (Eigen::Index i = 0; i < H; ++i) hv[i] = gelu(pre[i]);
        if (z) std::copy(pre.data(), pre.data() + H, z);
        return w3.dot(hv) + b3;
    }

private:
    const Model& m_;
    const Document& doc_;
    std::size_t H_, in_;
    std::vector<double> h0_;
    std::vector<std::vector<std::uint32_t>> feats_;
    std::vector<double> dir_bias_;
};

static_assert(ProductionScorer<DocScorer>);

// Forward record of one tree's score; backward() adds seed * d(score)/d(theta).
class Tape {
public:
    Tape(const DocScorer& sc, const ParseTree& t, const Grammar& g) : sc_(sc), t_(t), g_(g), H_(sc.hidden_dim()) {
        if (t.empty()) throw Error("tape: empty tree");
        h_.assign(t.nodes.size() * H_, 0.0);
        z_.assign(t.nodes.size() * H_, 0.0);
        std::vector<int> order;
        t.visit([&](int i) { order.push_back(i); });
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            int i = *it;
            const auto& n = t.node(i);
            double* h = &h_[static_cast<std::size_t>(i) * H_];
            double* z = &z_[static_cast<std::size_t>(i) * H_];
            if (n.is_unit()) {
                std::copy_n(&h_[static_cast<std::size_t>(n.left) * H_], H_, h);
            } else if (n.is_leaf()) {
                score_ += sc.unary(sc.document(), n.boxes.at(0), n.rule, h, z);
            } else {
                score_ += sc.binary(n.rule, n.dir, &h_[static_cast<std::size_t>(n.left) * H_],
                                    &h_[static_cast<std::size_t>(n.right) * H_], h, z);
            }
        }
        (void)g_;
        order_ = std::move(order);
    }

    double score() const { return score_; }

    void backward(double seed, std::vector<double>& grad) const {
        const auto& m = sc_.model();
        if (grad.size() != m.size()) throw Error("tape: gradient buffer has wrong size");
        if (seed == 0.0) return;
        const auto H = static_cast<Eigen::Index>(H_);
        const auto in = static_cast<Eigen::Index>(m.input_dim());
        const auto& th = m.params();
        std::vector<double> gh(t_.nodes.size() * H_, 0.0);
        Eigen::VectorXd dz(H);
        for (int i : order_) {  // parents before children
            const auto& n = t_.node(i);
            double* g = &gh[static_cast<std::size_t>(i) * H_];
            if (n.is_unit()) {
                double* gc = &gh[static_cast<std::size_t>(n.left) * H_];
                for (std::size_t k = 0; k < H_; ++k) gc[k] += g[k];
                continue;
            }
            const std::size_t o = m.rule_offset(n.rule);
            const double* p = th.data() + o;
            double* q = grad.data() + o;
            const double* h = &h_[static_cast<std::size_t>(i) * H_];
            const double* z = &z_[static_cast<std::size_t>(i) * H_];
            if (n.is_leaf()) {
                const std::size_t so = H_ * m.input_dim() + H_;  // w1
                for (std::size_t k = 0; k < H_; ++k) {
                    q[so + k] += seed * h[k];
                    dz[static_cast<Eigen::Index>(k)] = (seed * p[so + k] + g[k]) * gelu_grad(z[k]);
                }
                q[so + H_] += seed;
                BoxId b = n.boxes.at(0);
                detail::VecC h0(sc_.input(b), in);
                detail::Mat(q, H, in).noalias() += dz * h0.transpose();
                detail::Vec(q + H_ * m.input_dim(), H) += dz;
                if (m.config().embed == EmbedMode::Hash) {
                    Eigen::VectorXd dh0 = detail::MatC(p, H, in).transpose() * dz;
                    const auto& f = sc_.features(b);
                    const std::size_t E = m.config().embed_dim;
                    double inv = f.empty() ? 0.0 : 1.0 / static_cast<double>(f.size());
                    for (auto row : f)
                        for (std::size_t k = 0; k < E; ++k) grad[row * E + k] += inv * dh0[static_cast<Eigen::Index>(k)];
                }
            } else {
                const std::size_t so = 3 * H_ * H_ + H_;  // w3
                for (std::size_t k = 0; k < H_; ++k) {
                    q[so + k] += seed * h[k];
                    dz[static_cast<Eigen::Index>(k)] = (seed * p[so + k] + g[k]) * gelu_grad(z[k]);
                }
                q[so + H_] += seed;
                const double* h1 = &h_[static_cast<std::size_t>(n.left) * H_];
                const double* h2 = &h_[static_cast<std::size_t>(n.right) * H_];
                const double* hd = th.data() + m.dir_offset() + static_cast<std::size_t>(n.dir) * H_;
                detail::Mat(q, H, H).noalias() += dz * detail::VecC(h1, H).transpose();
                detail::Mat(q + H_ * H_, H, H).noalias() += dz * detail::VecC(h2, H).transpose();
                detail::Mat(q + 2 * H_ * H_, H, H).noalias() += dz * detail::VecC(hd, H).transpose();
                detail::Vec(q + 3 * H_ * H_, H) += dz;
                detail::Vec(grad.data() + m.dir_offset() + static_cast<std::size_t>(n.dir) * H_, H).noalias() +=
                    detail::MatC(p + 2 * H_ * H_, H, H).transpose() * dz;
                detail::Vec(&gh[static_cast<std::size_t>(n.left) * H_], H).noalias() +=
                    detail::MatC(p, H, H).transpose() * dz;
                detail::Vec(&gh[static_cast<std::size_t>(n.right) * H_], H).noalias() +=
                    detail::MatC(p + H_ * H_, H, H).transpose() * dz;
            }
        }
    }

private:
    const DocScorer& sc_;
    const ParseTree& t_;
    const Grammar& g_;
    std::size_t H_;
    std::vector<double> h_, z_;
    std::vector<int> order_;
    double score_ = 0.0;
};

}  // namespace cpcfg
