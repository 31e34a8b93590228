#include "chaintok/ar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nn_util.hpp"

namespace chaintok::ar {

using nn::attention;
using nn::linear;

StopRule StopRule::fixed(int n) {
    StopRule r;
    r.kind = Kind::Fixed;
    r.fixed_n = n;
    return r;
}

StopRule StopRule::finite(double h_cutoff) {
    StopRule r;
    r.kind = Kind::Finite;
    r.h_cutoff = h_cutoff;
    return r;
}

StopRule StopRule::spline(double rescale) {
    StopRule r;
    r.kind = Kind::Spline;
    r.spline_rescale = rescale;
    return r;
}

SampleRule SampleRule::nucleus(double p, double temperature) {
    SampleRule r;
    r.kind = Kind::Nucleus;
    r.p = p;
    r.temperature = temperature;
    return r;
}

SampleRule SampleRule::minp(double r_thr, double temperature) {
    SampleRule r;
    r.kind = Kind::MinP;
    r.r = r_thr;
    r.temperature = temperature;
    return r;
}

double entropy_nats(const std::vector<float>& probs) {
    double h = 0.0;
    for (float p : probs) {
        if (p > 0.0f) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
    }
    return h;
}

SampleResult sample_step(const std::vector<float>& logits, const SampleRule& rule, Rng& rng) {
    const size_t v = logits.size();
    SampleResult out;
    out.probs.assign(v, 0.0f);
    if (rule.temperature <= 0.0) {
        // argmax limit
        size_t best = 0;
        for (size_t i = 1; i < v; ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        out.token = static_cast<int>(best);
        out.probs[best] = 1.0f;
        return out;
    }
    double mx = -1e300;
    for (float l : logits) mx = std::max(mx, static_cast<double>(l) / rule.temperature);
    std::vector<double> p(v);
    double sum = 0.0;
    for (size_t i = 0; i < v; ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) / rule.temperature - mx);
        sum += p[i];
    }
    for (size_t i = 0; i < v; ++i) {
        p[i] /= sum;
        out.probs[i] = static_cast<float>(p[i]);
    }

    std::vector<size_t> kept;
    if (rule.kind == SampleRule::Kind::Nucleus) {
        std::vector<size_t> order(v);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return p[a] > p[b]; });
        double acc = 0.0;
        for (size_t i : order) {
            kept.push_back(i);
            acc += p[i];
            if (acc >= rule.p) break;
        }
    } else {
        double pmax = 0.0;
        for (double pi : p) pmax = std::max(pmax, pi);
        const double thr = rule.r * pmax;
        for (size_t i = 0; i < v; ++i) {
            if (p[i] >= thr) kept.push_back(i);
        }
    }
    double kept_mass = 0.0;
    for (size_t i : kept) kept_mass += p[i];
    double u = rng.uniform() * kept_mass;
    double acc = 0.0;
    out.token = static_cast<int>(kept.back());
    for (size_t i : kept) {
        acc += p[i];
        if (u < acc) {
            out.token = static_cast<int>(i);
            break;
        }
    }
    return out;
}

int stop_finite(const std::vector<double>& entropies, double h_cutoff, int k_max) {
    for (size_t i = 0; i < entropies.size(); ++i) {
        if (entropies[i] < h_cutoff) return static_cast<int>(i) + 1;
    }
    return k_max;
}

namespace {

/// Natural cubic spline second derivatives over unit-spaced knots.
std::vector<double> spline_m(const std::vector<double>& y) {
    const int n = static_cast<int>(y.size());
    std::vector<double> m(n, 0.0);
    if (n < 3) return m;
    const int k = n - 2;  // interior unknowns
    std::vector<double> diag(k, 4.0), rhs(k);
    for (int i = 0; i < k; ++i) rhs[i] = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
    for (int i = 1; i < k; ++i) {
        const double w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    for (int i = k - 1; i >= 0; --i) {
        m[i + 1] = (rhs[i] - (i + 1 < k ? m[i + 2] : 0.0)) / diag[i];
    }
    return m;
}

}  // namespace

int stop_spline(const std::vector<double>& entropies, int k_max, double rescale) {
    const int n = static_cast<int>(entropies.size());
    if (n < 4) return k_max;

    // 3-tap moving average (edges use the available neighbors)
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
        double acc = entropies[i];
        int cnt = 1;
        if (i > 0) {
            acc += entropies[i - 1];
            ++cnt;
        }
        if (i + 1 < n) {
            acc += entropies[i + 1];
            ++cnt;
        }
        y[i] = acc / cnt;
    }

    std::vector<double> m = spline_m(y);
    double t_star = -1.0;
    for (int i = 0; i + 1 < n && t_star < 0.0; ++i) {
        // segment [i, i+1): H(s) = y + b s + c s^2 + d s^3
        const double b = (y[i + 1] - y[i]) - (2.0 * m[i] + m[i + 1]) / 6.0;
        const double c = m[i] / 2.0;
        const double d = (m[i + 1] - m[i]) / 6.0;
        // H'(s) = b + 2c s + 3d s^2 = 0, minimum where H'' = 2c + 6d s > 0
        std::vector<double> roots;
        if (std::abs(d) > 1e-14) {
            const double disc = 4.0 * c * c - 12.0 * d * b;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                roots = {(-2.0 * c - sq) / (6.0 * d), (-2.0 * c + sq) / (6.0 * d)};
                std::sort(roots.begin(), roots.end());
            }
        } else if (std::abs(c) > 1e-14) {
            roots = {-b / (2.0 * c)};
        }
        for (double s : roots) {
            if (s < -1e-9 || s >= 1.0 - 1e-12) continue;
            if (2.0 * c + 6.0 * d * s > 1e-12) {
                t_star = (i + 1) + std::max(s, 0.0);  // token indices are 1-based
                break;
            }
        }
    }

    int k;
    if (t_star < 0.0) {
        k = (y.front() <= y.back()) ? 1 : k_max;  // edge minimum convention
    } else {
        k = static_cast<int>(std::ceil(t_star - 1e-6));
    }
    k = static_cast<int>(std::lround(k * rescale));
    return std::min(std::max(k, 1), k_max);
}

SizeStats size_stats(const std::vector<int>& token_counts) {
    if (token_counts.size() < 2) {
        throw std::invalid_argument("size_stats: need at least 2 runs");
    }
    SizeStats s;
    for (int k : token_counts) s.mean += k;
    s.mean /= static_cast<double>(token_counts.size());
    double acc = 0.0;
    for (int k : token_counts) acc += (k - s.mean) * (k - s.mean);
    s.stddev = std::sqrt(acc / (static_cast<double>(token_counts.size()) - 1.0));
    return s;
}

// ---- model --------------------------------------------------------------------

ArModel::ArModel(ArConfig cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg_.channels % cfg_.heads != 0) {
        throw std::invalid_argument("ArModel: channels must divide heads");
    }
    Rng rng(seed);
    const int c = cfg_.channels;
    tok_emb_ = nn::param_randn(params_, "ar.tok_emb", {cfg_.vocab(), c}, rng);
    blocks_.resize(cfg_.layers);
    for (int i = 0; i < cfg_.layers; ++i) {
        auto& b = blocks_[i];
        const std::string p = "ar.block" + std::to_string(i) + ".";
        b.ln1_g = nn::param_ones(params_, p + "ln1.g", {c});
        b.ln1_b = nn::param_zeros(params_, p + "ln1.b", {c});
        b.qkv_w = nn::param_randn(params_, p + "qkv.w", {c, 3 * c}, rng);
        b.qkv_b = nn::param_zeros(params_, p + "qkv.b", {3 * c});
        b.out_w = nn::param_randn(params_, p + "out.w", {c, c}, rng);
        b.out_b = nn::param_zeros(params_, p + "out.b", {c});
        b.ln2_g = nn::param_ones(params_, p + "ln2.g", {c});
        b.ln2_b = nn::param_zeros(params_, p + "ln2.b", {c});
        b.mlp1_w = nn::param_randn(params_, p + "mlp1.w", {c, 4 * c}, rng);
        b.mlp1_b = nn::param_zeros(params_, p + "mlp1.b", {4 * c});
        b.mlp2_w = nn::param_randn(params_, p + "mlp2.w", {4 * c, c}, rng);
        b.mlp2_b = nn::param_zeros(params_, p + "mlp2.b", {c});
    }
    lnf_g_ = nn::param_ones(params_, "ar.lnf.g", {c});
    lnf_b_ = nn::param_zeros(params_, "ar.lnf.b", {c});
    head_w_ = nn::param_randn(params_, "ar.head.w", {c, cfg_.vocab()}, rng);
    head_b_ = nn::param_zeros(params_, "ar.head.b", {cfg_.vocab()});
}

std::vector<ArModel::Row> ArModel::build_rows(const std::vector<std::vector<int>>& docs,
                                              bool packed) const {
    for (const auto& d : docs) {
        if (static_cast<int>(d.size()) > cfg_.k_max) {
            throw std::invalid_argument("ar: document of " + std::to_string(d.size()) +
                                        " tokens exceeds k_max " + std::to_string(cfg_.k_max));
        }
        for (int t : d) {
            if (t < 0 || t >= cfg_.codebook_size) {
                throw std::invalid_argument("ar: code " + std::to_string(t) +
                                            " outside the codebook");
            }
        }
    }
    const int capacity = cfg_.k_max + 2;
    std::vector<Row> rows;
    auto append_doc = [&](Row& row, const std::vector<int>& d, int doc_id) {
        int pos = 0;
        row.ids.push_back(cfg_.bos());
        row.positions.push_back(pos++);
        row.doc.push_back(doc_id);
        for (int t : d) {
            row.ids.push_back(t);
            row.positions.push_back(pos++);
            row.doc.push_back(doc_id);
        }
        row.ids.push_back(cfg_.eos());
        row.positions.push_back(pos);
        row.doc.push_back(doc_id);
    };
    Row cur;
    int doc_id = 0;
    for (const auto& d : docs) {
        const int need = static_cast<int>(d.size()) + 2;
        if (!packed || static_cast<int>(cur.ids.size()) + need > capacity) {
            if (!cur.ids.empty()) rows.push_back(std::move(cur));
            cur = Row{};
        }
        append_doc(cur, d, doc_id++);
    }
    if (!cur.ids.empty()) rows.push_back(std::move(cur));
    for (Row& row : rows) {
        const int n = static_cast<int>(row.ids.size());
        row.targets.assign(n, -1);
        for (int i = 0; i + 1 < n; ++i) {
            if (row.doc[i] == row.doc[i + 1]) row.targets[i] = row.ids[i + 1];
        }
    }
    return rows;
}

Tensor ArModel::row_logits(const Row& row) const {
    const int n = static_cast<int>(row.ids.size());
    // causal within a document, no cross-document attention
    std::vector<float> mask(static_cast<size_t>(n) * n, -1e9f);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            if (row.doc[i] == row.doc[j]) mask[static_cast<size_t>(i) * n + j] = 0.0f;
        }
    }
    Tensor mask_t = Tensor::from({n, n}, std::move(mask));
    Tensor h = embedding(tok_emb_, row.ids);
    for (const auto& b : blocks_) {
        Tensor a = attention(layer_norm(h, b.ln1_g, b.ln1_b), b.qkv_w, b.qkv_b, b.out_w,
                             b.out_b, cfg_.heads, row.positions, mask_t);
        h = add(h, a);
        Tensor mlp = linear(gelu(linear(layer_norm(h, b.ln2_g, b.ln2_b), b.mlp1_w, b.mlp1_b)),
                            b.mlp2_w, b.mlp2_b);
        h = add(h, mlp);
    }
    h = layer_norm(h, lnf_g_, lnf_b_);
    return linear(h, head_w_, head_b_);
}

Tensor ArModel::batch_loss(const std::vector<std::vector<int>>& docs, bool packed) const {
    std::vector<Row> rows = build_rows(docs, packed);
    std::vector<Tensor> logits;
    std::vector<int> targets;
    for (const Row& r : rows) {
        logits.push_back(row_logits(r));
        targets.insert(targets.end(), r.targets.begin(), r.targets.end());
    }
    Tensor all = logits.size() == 1 ? logits[0] : concat(logits, 0);
    return cross_entropy(all, targets, -1);
}

double ArModel::train_step(const std::vector<std::vector<int>>& docs, Adam& opt, bool packed) {
    GradTape tape;
    Tensor loss = batch_loss(docs, packed);
    tape.backward(loss);
    opt.step(params_);
    return loss.item();
}

double ArModel::eval_loss(const std::vector<std::vector<int>>& docs, bool packed) const {
    return batch_loss(docs, packed).item();
}

double ArModel::top1_accuracy(const std::vector<int>& doc) const {
    std::vector<Row> rows = build_rows({doc}, false);
    Tensor logits = row_logits(rows[0]);
    const Row& r = rows[0];
    int correct = 0, total = 0;
    const float* lv = logits.data();
    const int v = cfg_.vocab();
    for (size_t i = 0; i < r.targets.size(); ++i) {
        if (r.targets[i] < 0) continue;
        int best = 0;
        for (int j = 1; j < v; ++j) {
            if (lv[i * v + j] > lv[i * v + best]) best = j;
        }
        correct += (best == r.targets[i]) ? 1 : 0;
        ++total;
    }
    return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

std::vector<std::vector<float>> ArModel::full_logits(const std::vector<int>& codes) const {
    Row row;
    row.ids.push_back(cfg_.bos());
    for (int c : codes) row.ids.push_back(c);
    const int n = static_cast<int>(row.ids.size());
    row.positions.resize(n);
    std::iota(row.positions.begin(), row.positions.end(), 0);
    row.doc.assign(n, 0);
    Tensor logits = row_logits(row);
    std::vector<std::vector<float>> out(n);
    const float* lv = logits.data();
    for (int i = 0; i < n; ++i) {
        out[i].assign(lv + static_cast<size_t>(i) * cfg_.vocab(),
                      lv + static_cast<size_t>(i + 1) * cfg_.vocab());
    }
    return out;
}

ArModel::KvCache ArModel::make_cache() const {
    KvCache c;
    c.k.resize(cfg_.layers);
    c.v.resize(cfg_.layers);
    return c;
}

std::vector<float> ArModel::step_logits(KvCache& cache, int token) const {
    const int c = cfg_.channels;
    const int h = cfg_.heads;
    const int d = c / h;
    const std::vector<int> pos{cache.len};
    Tensor x = embedding(tok_emb_, {token});  // [1, C]
    for (int li = 0; li < cfg_.layers; ++li) {
        const auto& b = blocks_[li];
        Tensor hn = layer_norm(x, b.ln1_g, b.ln1_b);
        Tensor qkv = linear(hn, b.qkv_w, b.qkv_b);
        Tensor q = transpose(reshape(narrow(qkv, 1, 0, c), {1, h, d}), 0, 1);
        Tensor k = transpose(reshape(narrow(qkv, 1, c, c), {1, h, d}), 0, 1);
        Tensor v = transpose(reshape(narrow(qkv, 1, 2 * c, c), {1, h, d}), 0, 1);
        q = rope(q, pos);
        k = rope(k, pos);
        cache.k[li] = cache.len == 0 ? k : concat({cache.k[li], k}, 1);
        cache.v[li] = cache.len == 0 ? v : concat({cache.v[li], v}, 1);
        Tensor scores = scale(matmul(q, transpose(cache.k[li], 1, 2)),
                              1.0f / std::sqrt(static_cast<float>(d)));
        Tensor att = matmul(softmax(scores), cache.v[li]);  // [H, 1, D]
        att = reshape(transpose(att, 0, 1), {1, c});
        x = add(x, linear(att, b.out_w, b.out_b));
        Tensor mlp = linear(gelu(linear(layer_norm(x, b.ln2_g, b.ln2_b), b.mlp1_w, b.mlp1_b)),
                            b.mlp2_w, b.mlp2_b);
        x = add(x, mlp);
    }
    x = layer_norm(x, lnf_g_, lnf_b_);
    Tensor logits = linear(x, head_w_, head_b_);
    ++cache.len;
    return logits.values();
}

ArModel::GenResult ArModel::generate(const StopRule& stop, const SampleRule& rule,
                                     uint64_t seed, const std::vector<int>& prefix) const {
    GenResult out;
    Rng rng = Rng(seed).derive("ar.generate");
    KvCache cache = make_cache();
    std::vector<float> logits = step_logits(cache, cfg_.bos());
    for (int t : prefix) {
        out.tokens.push_back(t);
        logits = step_logits(cache, t);
    }
    const int start = static_cast<int>(prefix.size());
    for (int m = start + 1; m <= cfg_.k_max; ++m) {
        logits[cfg_.bos()] = -1e30f;  // BOS never reappears
        if (!rule.allow_eos) logits[cfg_.eos()] = -1e30f;
        SampleResult s = sample_step(logits, rule, rng);
        out.trace.probs.push_back(s.probs);
        out.trace.entropies.push_back(entropy_nats(s.probs));
        if (s.token == cfg_.eos()) {
            out.stopped_by_eos = true;  // EOS wins over every stopping rule
            break;
        }
        out.tokens.push_back(s.token);
        if (stop.kind == StopRule::Kind::Fixed &&
            static_cast<int>(out.tokens.size()) >= stop.fixed_n) {
            break;
        }
        if (stop.kind == StopRule::Kind::Finite &&
            out.trace.entropies.back() < stop.h_cutoff) {
            break;
        }
        if (static_cast<int>(out.tokens.size()) >= cfg_.k_max) break;
        logits = step_logits(cache, s.token);
    }
    if (stop.kind == StopRule::Kind::Finite && !out.stopped_by_eos) {
        bool fired = false;
        for (double h : out.trace.entropies) fired = fired || h < stop.h_cutoff;
        out.truncated = !fired;
    }
    if (stop.kind == StopRule::Kind::Spline && !out.tokens.empty()) {
        const int k = stop_spline(out.trace.entropies, cfg_.k_max, stop.spline_rescale);
        if (k < static_cast<int>(out.tokens.size())) out.tokens.resize(k);
    }
    if (stop.kind == StopRule::Kind::Fixed) {
        out.truncated =
            !out.stopped_by_eos && static_cast<int>(out.tokens.size()) < stop.fixed_n;
    }
    out.k = static_cast<int>(out.tokens.size());
    return out;
}

nlohmann::json ar_config_to_json(const ArConfig& cfg) {
    return {{"layers", cfg.layers},
            {"channels", cfg.channels},
            {"heads", cfg.heads},
            {"k_max", cfg.k_max},
            {"codebook_size", cfg.codebook_size}};
}

ArConfig ar_config_from_json(const nlohmann::json& j) {
    ArConfig cfg;
    cfg.layers = j["layers"];
    cfg.channels = j["channels"];
    cfg.heads = j["heads"];
    cfg.k_max = j["k_max"];
    cfg.codebook_size = j["codebook_size"];
    return cfg;
}

void ArModel::save(const std::string& path, const Adam* opt) const {
    Checkpoint ckpt;
    for (const auto& [name, t] : params_) ckpt.put(name, t);
    ckpt.meta["kind"] = "ar";
    ckpt.meta["config"] = ar_config_to_json(cfg_);
    if (opt) {
        ckpt.meta["optimizer"] = {{"step_count", opt->step_count()}};
        for (const auto& [name, slot] : const_cast<Adam*>(opt)->slots()) {
            Shape s{static_cast<int>(slot.m.size())};
            ckpt.put("opt.m." + name, Tensor::from(s, slot.m));
            ckpt.put("opt.v." + name, Tensor::from(s, slot.v));
        }
    }
    save_checkpoint(ckpt, path);
}

ArModel ArModel::load(const std::string& path, Adam* opt) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.meta.value("kind", "") != "ar") {
        throw std::runtime_error("load: " + path + " is not an ar checkpoint");
    }
    ArModel m(ar_config_from_json(ckpt.meta["config"]), 0);
    for (auto& [name, t] : m.params_) {
        const Tensor& src = ckpt.get(name);
        if (src.shape() != t.shape()) {
            throw std::runtime_error("load: shape mismatch for " + name);
        }
        std::copy(src.values().begin(), src.values().end(), t.data());
    }
    if (opt) {
        opt->set_step_count(ckpt.meta["optimizer"]["step_count"].get<int64_t>());
        for (auto& [name, t] : m.params_) {
            AdamSlot& slot = opt->slots()[name];
            slot.m = ckpt.get("opt.m." + name).values();
            slot.v = ckpt.get("opt.v." + name).values();
        }
    }
    return m;
}

}  // namespace chaintok::ar
