/**
 * Test-time search: beam search over token prefixes with pluggable global
 * rewards, the prefix-masked latent classifier, and reward functions
 * (beta-sheet fraction via mini-rollout, class probability via the
 * classifier, external command hook via the pipeline layer).
 *
 * Per-step pruning uses the simplified score
 *     S(x_{1:t}) = log p(v | x_{1:t-1}) + lambda * R(x_{1:t}),
 * where R acts on the whole prefix; final selection among completed
 * sequences uses the full objective sum(log p) + lambda * R.
 */
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chaintok/ar.hpp"
#include "chaintok/fsq.hpp"
#include "chaintok/geometry.hpp"
#include "chaintok/model.hpp"
#include "chaintok/sampler.hpp"

namespace chaintok::search {

using RewardFn = std::function<double(const std::vector<int>& prefix_codes)>;

struct BeamConfig {
    int width = 8;    // B
    int fanout = 8;   // E, expansion candidates per beam; >= vocab is full expansion
    int max_len = 16;
    double lambda = 1.0;
    bool allow_eos = false;
    uint64_t seed = 0;
};

struct BeamEntry {
    std::vector<int> prefix;
    double last_logp = 0.0;
    double cum_logp = 0.0;
    double reward = 0.0;
    double score = 0.0;  // last_logp + lambda * reward
};

struct BeamResult {
    std::vector<int> tokens;
    double objective = 0.0;  // cum_logp + lambda * reward(final)
    double reward = 0.0;
    /// Surviving beams after each pruning step.
    std::vector<std::vector<BeamEntry>> trace;
};

BeamResult beam_search(const ar::ArModel& model, const RewardFn& reward,
                       const BeamConfig& cfg, const std::vector<int>& frozen_prefix = {});

/// Beta-sheet fraction of a 20-step mini-rollout decode of the prefix.
/// Decode failures yield reward 0 (flagged through *failed when given).
double reward_beta(const model::TokenizerModel& tok, const std::vector<int>& prefix_codes,
                   int steps, uint64_t seed, bool* failed = nullptr);

/// Two-layer perceptron over flattened, zero-padded level-index vectors.
/// The input dimension k_max * M is constant for every chain length; level
/// indices are normalized to [-1,1] before flattening and masked positions
/// are zero.
class PrefixClassifier {
public:
    PrefixClassifier(fsq::FsqConfig quant, int classes, int hidden, uint64_t seed);

    int input_dim() const { return quant_.k_max * quant_.channels(); }
    int classes() const { return classes_; }
    const fsq::FsqConfig& quant_config() const { return quant_; }

    std::vector<float> features(const fsq::TokenSequence& prefix) const;
    std::vector<float> probabilities(const fsq::TokenSequence& prefix) const;
    int classify(const fsq::TokenSequence& prefix) const;

    /// One optimizer step of prefix-masked training: per example a prefix
    /// length m ~ U{1..k_max} is sampled and positions past m are zeroed.
    double train_step(const std::vector<std::pair<fsq::TokenSequence, int>>& batch,
                      Adam& opt, Rng& rng);

    NamedParams& params() { return params_; }

private:
    Tensor logits_from_features(const std::vector<float>& feat) const;

    fsq::FsqConfig quant_;
    int classes_;
    NamedParams params_;
    Tensor w1_, b1_, w2_, b2_;
};

/// Probability of the target class for a (zero-padded) prefix.
double reward_class(const PrefixClassifier& clf, const std::vector<int>& prefix_codes,
                    int target_class);

/// Encode a seed structure, freeze its first keep_prefix tokens, and beam
/// search continuations; the result always begins with the frozen prefix.
/// cfg.max_len <= 0 defaults to the encoded length (keep_prefix == max_len
/// returns the original tokens unchanged).
BeamResult prefill_maturation(const ar::ArModel& model, const model::TokenizerModel& tok,
                              const geometry::CoordSet& seed_structure, int keep_prefix,
                              const RewardFn& reward, BeamConfig cfg);

}  // namespace chaintok::search
