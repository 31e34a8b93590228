#include "chaintok/search.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nn_util.hpp"

namespace chaintok::search {

namespace {

struct Beam {
    std::vector<int> prefix;
    ar::ArModel::KvCache cache;       // state after BOS + prefix
    std::vector<float> next_logits;
    double cum_logp = 0.0;
    double last_logp = 0.0;
    double reward = 0.0;
    double score = 0.0;
    bool completed = false;
};

std::vector<double> log_softmax_d(const std::vector<float>& logits) {
    double mx = -1e300;
    for (float l : logits) mx = std::max(mx, static_cast<double>(l));
    double sum = 0.0;
    for (float l : logits) sum += std::exp(static_cast<double>(l) - mx);
    const double lse = std::log(sum) + mx;
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
    return out;
}

}  // namespace

BeamResult beam_search(const ar::ArModel& model, const RewardFn& reward,
                       const BeamConfig& cfg, const std::vector<int>& frozen_prefix) {
    if (cfg.width < 1) throw std::invalid_argument("beam_search: width must be >= 1");
    if (cfg.fanout < 1) throw std::invalid_argument("beam_search: fanout must be >= 1");
    const ar::ArConfig& ac = model.config();
    if (cfg.max_len > ac.k_max) {
        throw std::invalid_argument("beam_search: max_len exceeds k_max");
    }

    BeamResult result;
    Beam root;
    root.cache = model.make_cache();
    root.next_logits = model.step_logits(root.cache, ac.bos());
    for (int t : frozen_prefix) {
        root.prefix.push_back(t);
        root.next_logits = model.step_logits(root.cache, t);
    }
    if (static_cast<int>(frozen_prefix.size()) >= cfg.max_len) {
        result.tokens = frozen_prefix;
        result.reward = reward ? reward(result.tokens) : 0.0;
        result.objective = cfg.lambda * result.reward;
        return result;
    }

    std::vector<Beam> active{std::move(root)};
    std::vector<Beam> completed;

    struct Candidate {
        int parent;
        int token;  // eos() marks completion without appending
        double logp;
        double reward;
        double score;
    };

    while (!active.empty()) {
        std::vector<Candidate> cands;
        for (size_t bi = 0; bi < active.size(); ++bi) {
            Beam& b = active[bi];
            std::vector<float> masked = b.next_logits;
            masked[ac.bos()] = -1e30f;
            if (!cfg.allow_eos) masked[ac.eos()] = -1e30f;
            std::vector<double> logp = log_softmax_d(masked);
            std::vector<int> order(logp.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            const int fan = std::min<int>(cfg.fanout, static_cast<int>(order.size()));
            std::partial_sort(order.begin(), order.begin() + fan, order.end(),
                              [&](int x, int y) { return logp[x] > logp[y]; });
            for (int e = 0; e < fan; ++e) {
                const int tok = order[e];
                if (logp[tok] < -1e20) continue;
                Candidate c;
                c.parent = static_cast<int>(bi);
                c.token = tok;
                c.logp = logp[tok];
                if (tok == ac.eos()) {
                    c.reward = b.reward;  // completion keeps the prefix reward
                } else {
                    std::vector<int> ext = b.prefix;
                    ext.push_back(tok);
                    c.reward = reward ? reward(ext) : 0.0;
                }
                c.score = c.logp + cfg.lambda * c.reward;
                cands.push_back(c);
            }
        }
        if (cands.empty()) break;
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        const int keep = std::min<int>(cfg.width, static_cast<int>(cands.size()));

        std::vector<Beam> next;
        std::vector<BeamEntry> trace_row;
        for (int i = 0; i < keep; ++i) {
            const Candidate& c = cands[i];
            const Beam& parent = active[c.parent];
            Beam nb;
            nb.prefix = parent.prefix;
            nb.cum_logp = parent.cum_logp + c.logp;
            nb.last_logp = c.logp;
            nb.reward = c.reward;
            nb.score = c.score;
            if (c.token == ac.eos()) {
                nb.completed = true;
            } else {
                nb.prefix.push_back(c.token);
                nb.cache = parent.cache;  // caches share history tensors; append copies
                if (static_cast<int>(nb.prefix.size()) >= cfg.max_len) {
                    nb.completed = true;
                } else {
                    nb.next_logits = model.step_logits(nb.cache, c.token);
                }
            }
            BeamEntry te{nb.prefix, nb.last_logp, nb.cum_logp, nb.reward, nb.score};
            trace_row.push_back(std::move(te));
            if (nb.completed) {
                completed.push_back(std::move(nb));
            } else {
                next.push_back(std::move(nb));
            }
        }
        result.trace.push_back(std::move(trace_row));
        active = std::move(next);
    }

    if (completed.empty()) throw std::runtime_error("beam_search: no completed sequences");
    const Beam* best = nullptr;
    double best_obj = -1e300;
    for (const Beam& b : completed) {
        const double obj = b.cum_logp + cfg.lambda * b.reward;
        if (obj > best_obj) {
            best_obj = obj;
            best = &b;
        }
    }
    result.tokens = best->prefix;
    result.objective = best_obj;
    result.reward = best->reward;
    return result;
}

double reward_beta(const model::TokenizerModel& tok, const std::vector<int>& prefix_codes,
                   int steps, uint64_t seed, bool* failed) {
    if (failed) *failed = false;
    if (prefix_codes.empty()) return 0.0;
    try {
        fsq::TokenSequence tokens = fsq::tokens_from_codes(prefix_codes, tok.config().quant);
        sampler::SamplerConfig scfg;
        scfg.steps = steps;
        scfg.mode = sampler::Mode::Ode;
        // stable per-prefix stream: same prefix, same rollout
        Rng h(seed);
        uint64_t tag = 0x9e3779b97f4a7c15ull;
        for (int c : prefix_codes) tag = tag * 1000003ull + static_cast<uint64_t>(c) + 1;
        scfg.seed = h.derive(tag).next_u64();
        geometry::CoordSet coords = sampler::decode_structure(
            tok, tokens, sampler::SizeSource::Predicted, 0, scfg);
        auto labels = geometry::assign_sse(coords);
        return geometry::sse_fraction(labels, geometry::Sse::Sheet);
    } catch (const std::exception&) {
        if (failed) *failed = true;
        return 0.0;
    }
}

// ---- prefix classifier ---------------------------------------------------------

PrefixClassifier::PrefixClassifier(fsq::FsqConfig quant, int classes, int hidden,
                                   uint64_t seed)
    : quant_(std::move(quant)), classes_(classes) {
    Rng rng(seed);
    w1_ = nn::param_randn(params_, "probe.l1.w", {input_dim(), hidden}, rng, 0.05f);
    b1_ = nn::param_zeros(params_, "probe.l1.b", {hidden});
    w2_ = nn::param_randn(params_, "probe.l2.w", {hidden, classes_}, rng, 0.05f);
    b2_ = nn::param_zeros(params_, "probe.l2.b", {classes_});
}

std::vector<float> PrefixClassifier::features(const fsq::TokenSequence& prefix) const {
    const int m = quant_.channels();
    std::vector<float> v(static_cast<size_t>(input_dim()), 0.0f);
    const int k = std::min(prefix.size(), quant_.k_max);
    for (int i = 0; i < k; ++i) {
        for (int ch = 0; ch < m; ++ch) {
            const int idx = prefix.level_indices[i][ch];
            const float denom = static_cast<float>(quant_.levels[ch] - 1);
            v[static_cast<size_t>(i) * m + ch] = 2.0f * idx / denom - 1.0f;
        }
    }
    return v;
}

Tensor PrefixClassifier::logits_from_features(const std::vector<float>& feat) const {
    Tensor x = Tensor::from({1, input_dim()}, feat);
    Tensor h = silu(nn::linear(x, w1_, b1_));
    return nn::linear(h, w2_, b2_);
}

std::vector<float> PrefixClassifier::probabilities(const fsq::TokenSequence& prefix) const {
    return softmax(logits_from_features(features(prefix))).values();
}

int PrefixClassifier::classify(const fsq::TokenSequence& prefix) const {
    return argmax(probabilities(prefix));
}

double PrefixClassifier::train_step(
    const std::vector<std::pair<fsq::TokenSequence, int>>& batch, Adam& opt, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    GradTape tape;
    std::vector<Tensor> rows;
    std::vector<int> targets;
    for (const auto& [tokens, label] : batch) {
        const int m = static_cast<int>(rng.uniform_int(1, quant_.k_max));
        fsq::TokenSequence masked = fsq::nested_dropout(tokens, std::min(m, tokens.size()));
        rows.push_back(Tensor::from({1, input_dim()}, features(masked)));
        targets.push_back(label);
    }
    Tensor x = rows.size() == 1 ? rows[0] : concat(rows, 0);
    Tensor h = silu(nn::linear(x, w1_, b1_));
    Tensor logits = nn::linear(h, w2_, b2_);
    Tensor loss = cross_entropy(logits, targets);
    tape.backward(loss);
    opt.step(params_);
    return loss.item();
}

double reward_class(const PrefixClassifier& clf, const std::vector<int>& prefix_codes,
                    int target_class) {
    if (target_class < 0 || target_class >= clf.classes()) {
        throw std::invalid_argument("reward_class: target class " +
                                    std::to_string(target_class) + " out of range");
    }
    fsq::TokenSequence tokens = fsq::tokens_from_codes(prefix_codes, clf.quant_config());
    return clf.probabilities(tokens)[target_class];
}

BeamResult prefill_maturation(const ar::ArModel& model, const model::TokenizerModel& tok,
                              const geometry::CoordSet& seed_structure, int keep_prefix,
                              const RewardFn& reward, BeamConfig cfg) {
    fsq::TokenSequence encoded = tok.encode(geometry::center(seed_structure));
    if (keep_prefix > encoded.size()) {
        throw std::invalid_argument("prefill_maturation: keep_prefix " +
                                    std::to_string(keep_prefix) + " exceeds encoded length " +
                                    std::to_string(encoded.size()));
    }
    if (cfg.max_len <= 0) cfg.max_len = encoded.size();
    std::vector<int> frozen(encoded.codes.begin(), encoded.codes.begin() + keep_prefix);
    return beam_search(model, reward, cfg, frozen);
}

}  // namespace chaintok::search
