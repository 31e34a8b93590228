/**
 * Decoder-only autoregressive prior over token codes.
 *
 * Causal transformer with rotary positions, trained with sequence packing
 * (document-boundary masking, positions restarting per document). Generation
 * runs on a per-rollout KV cache with nucleus or min-p sampling and three
 * stopping rules: fixed token count, finite entropy threshold, and the first
 * local minimum of a spline fit to the entropy curve.
 *
 * Vocabulary = codebook size + BOS + EOS. BOS opens every sequence and is
 * structurally masked out of the sampling distribution; a sampled EOS ends
 * generation before any stopping rule fires (EOS wins). Entropies are in
 * nats over the temperature-adjusted, pre-truncation distribution.
 */
#pragma once

#include <string>
#include <vector>

#include "chaintok/checkpoint.hpp"
#include "chaintok/optim.hpp"
#include "chaintok/rng.hpp"
#include "chaintok/tensor.hpp"

namespace chaintok::ar {

struct ArConfig {
    int layers = 6;
    int channels = 256;
    int heads = 8;
    int k_max = 128;           // max generated tokens per rollout
    int codebook_size = 1000;

    int vocab() const { return codebook_size + 2; }
    int bos() const { return codebook_size; }
    int eos() const { return codebook_size + 1; }
};

struct EntropyTrace {
    std::vector<std::vector<float>> probs;  // full pre-truncation distribution per step
    std::vector<double> entropies;          // nats
};

struct StopRule {
    enum class Kind { Fixed, Finite, Spline };
    Kind kind = Kind::Fixed;
    int fixed_n = 16;
    double h_cutoff = 2.0;
    /// Multiplicative rescale of the spline cutoff (1 = as fitted).
    double spline_rescale = 1.0;

    static StopRule fixed(int n);
    static StopRule finite(double h_cutoff);
    static StopRule spline(double rescale = 1.0);
};

struct SampleRule {
    enum class Kind { Nucleus, MinP };
    Kind kind = Kind::Nucleus;
    double p = 0.9;  // nucleus cumulative mass
    double r = 0.1;  // min-p ratio of the max probability
    double temperature = 1.0;
    /// When false, EOS is masked out like BOS (fixed-count rollouts and
    /// enumeration oracles that need the rule, not EOS, to stop).
    bool allow_eos = true;

    static SampleRule nucleus(double p, double temperature = 1.0);
    static SampleRule minp(double r, double temperature = 1.0);
};

/// Entropy in nats, -sum p log p.
double entropy_nats(const std::vector<float>& probs);

struct SampleResult {
    int token = 0;
    std::vector<float> probs;  // full pre-truncation distribution (post temperature)
};

/// Temperature softmax, then nucleus (smallest set with cumulative mass >= p)
/// or min-p (keep tokens with prob >= r * max) truncation, renormalize,
/// sample. temperature == 0 is the argmax limit. The returned probability
/// vector is the untruncated distribution the entropy rules consume.
SampleResult sample_step(const std::vector<float>& logits, const SampleRule& rule, Rng& rng);

/// First 1-based index whose entropy falls below the cutoff; k_max if none.
int stop_finite(const std::vector<double>& entropies, double h_cutoff, int k_max);

/// Natural cubic spline through the 3-tap-smoothed entropy curve; K is the
/// ceiling of the first interior stationary minimum. Traces shorter than 4
/// fall back to k_max; with no interior minimum, K=1 when the curve is
/// minimized at the left edge and k_max otherwise.
int stop_spline(const std::vector<double>& entropies, int k_max, double rescale = 1.0);

struct SizeStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};
/// Mean and sample std of emitted token counts; needs >= 2 runs.
SizeStats size_stats(const std::vector<int>& token_counts);

class ArModel {
public:
    ArModel(ArConfig cfg, uint64_t seed);

    const ArConfig& config() const { return cfg_; }

    /// Mean next-token cross-entropy over the batch of documents (token
    /// codes without specials). packed=true bin-packs documents into rows of
    /// capacity k_max+2 with document-boundary masking; packed=false gives
    /// each document its own row. Both paths produce identical losses for
    /// identical documents. Documents longer than k_max throw.
    double train_step(const std::vector<std::vector<int>>& docs, Adam& opt, bool packed);
    double eval_loss(const std::vector<std::vector<int>>& docs, bool packed) const;

    /// Per-position top-1 accuracy of next-token prediction on one document.
    double top1_accuracy(const std::vector<int>& doc) const;

    /// Full-recompute logits for a prompt row (BOS + codes), one row per
    /// position; reference path for the KV-cache exactness contract.
    std::vector<std::vector<float>> full_logits(const std::vector<int>& codes) const;

    struct KvCache {
        std::vector<Tensor> k, v;  // per layer [H, len, D]
        int len = 0;
    };
    KvCache make_cache() const;
    /// Append one token (special or code) and return logits for the next
    /// position. Matches full_logits row-for-row within float noise.
    std::vector<float> step_logits(KvCache& cache, int token) const;

    struct GenResult {
        std::vector<int> tokens;  // emitted codes (specials stripped)
        EntropyTrace trace;
        int k = 0;                // emitted count after the stopping rule
        bool stopped_by_eos = false;
        bool truncated = false;   // hit k_max without the rule firing
    };
    /// KV-cached rollout from BOS (optionally continuing a frozen prefix)
    /// with the stopping rule applied. Deterministic given seed.
    GenResult generate(const StopRule& stop, const SampleRule& rule, uint64_t seed,
                       const std::vector<int>& prefix = {}) const;

    NamedParams& params() { return params_; }
    const NamedParams& params() const { return params_; }

    void save(const std::string& path, const Adam* opt = nullptr) const;
    static ArModel load(const std::string& path, Adam* opt = nullptr);

private:
    struct Row {
        std::vector<int> ids;        // with specials
        std::vector<int> positions;  // restart per document
        std::vector<int> doc;        // document id per position
        std::vector<int> targets;    // next-token target or -1
    };
    std::vector<Row> build_rows(const std::vector<std::vector<int>>& docs, bool packed) const;
    Tensor row_logits(const Row& row) const;
    Tensor batch_loss(const std::vector<std::vector<int>>& docs, bool packed) const;

    ArConfig cfg_;
    NamedParams params_;
    Tensor tok_emb_;
    struct Block {
        Tensor ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b;
        Tensor ln2_g, ln2_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    };
    std::vector<Block> blocks_;
    Tensor lnf_g_, lnf_b_, head_w_, head_b_;
};

nlohmann::json ar_config_to_json(const ArConfig& cfg);
ArConfig ar_config_from_json(const nlohmann::json& j);

}  // namespace chaintok::ar
