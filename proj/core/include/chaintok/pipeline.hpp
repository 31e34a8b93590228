/**
 * Orchestration: datasets, the two training stages, reconstruction and
 * generation evaluation, probing, shrinking, search wiring, metric tables
 * (CSV) and SVG summaries. Every entry point is reproducible from
 * (config, seed); commands never mutate their input files.
 */
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chaintok/ar.hpp"
#include "chaintok/fsq.hpp"
#include "chaintok/geometry.hpp"
#include "chaintok/model.hpp"
#include "chaintok/plot.hpp"
#include "chaintok/sampler.hpp"
#include "chaintok/search.hpp"

namespace chaintok::pipeline {

// ---- datasets ---------------------------------------------------------------

struct DatasetSpec {
    int n = 256;
    geometry::CorpusConfig corpus;
    uint64_t seed = 7;
    /// When nonempty, read coordinate files (text or .pdb) instead of
    /// generating; labels default to 0.
    std::vector<std::string> files;
};

std::vector<geometry::LabeledChain> load_dataset(const DatasetSpec& spec);

// ---- tokenizer training -------------------------------------------------------

struct TokenizerTrainConfig {
    model::TokenizerConfig model;
    AdamConfig adam{3e-4f, 0.9f, 0.999f, 1e-8f, 10.0f};
    /// Cosine decay floor; negative keeps the learning rate constant.
    float lr_min = -1.0f;
    int steps = 2000;
    int batch_size = 8;
    int eval_every = 200;      // 0 disables held-out evaluation
    int eval_chains = 16;
    int eval_ode_steps = 20;
    uint64_t seed = 1;
    std::string resume_from;   // checkpoint path; restores model+optimizer state
};

struct TrainLogRow {
    int step = 0;
    double flow = 0.0;
    double size = 0.0;
    double eval_rmsd_ang = -1.0;  // <0 = not evaluated at this step
    double eval_tm = -1.0;
};

struct TokenizerTrainResult {
    std::vector<TrainLogRow> log;
    double first_flow = 0.0;
    double last_flow = 0.0;
};

/// Train (or resume) on `train`; periodic held-out reconstruction keeps the
/// flow-loss-vs-RMSD divergence observable. Returns the trained model.
model::TokenizerModel train_tokenizer(const TokenizerTrainConfig& cfg,
                                      const std::vector<geometry::CoordSet>& train,
                                      const std::vector<geometry::CoordSet>& heldout,
                                      TokenizerTrainResult* result = nullptr,
                                      Adam* opt_out = nullptr);

// ---- AR training ---------------------------------------------------------------

struct ArTrainConfig {
    ar::ArConfig model;
    AdamConfig adam{1e-4f, 0.9f, 0.95f, 1e-8f, 1.0f};
    /// Cosine decay floor; negative keeps the learning rate constant.
    float lr_min = -1.0f;
    int steps = 500;
    int batch_docs = 8;
    bool packed = true;
    uint64_t seed = 2;
};

struct ArTrainResult {
    std::vector<std::pair<int, double>> loss_log;  // (step, loss)
};

ar::ArModel train_ar(const ArTrainConfig& cfg, const std::vector<std::vector<int>>& docs,
                     ArTrainResult* result = nullptr, Adam* opt_out = nullptr);

/// Tokenize a corpus once, caching one token file per chain under cache_dir;
/// existing cache entries are reused. Returns (docs, reused_count).
std::pair<std::vector<std::vector<int>>, int> tokenize_corpus(
    const model::TokenizerModel& tok, const std::vector<geometry::CoordSet>& chains,
    const std::string& cache_dir);

// ---- reconstruction -------------------------------------------------------------

/// Encode, keep a k-token prefix (k<=0 = full), decode at the true length
/// (teacher-forced size) or the predicted size.
geometry::CoordSet reconstruct(const model::TokenizerModel& tok,
                               const geometry::CoordSet& chain, int k,
                               const sampler::SamplerConfig& dec,
                               bool force_true_size = true);

struct ReconStats {
    double mean_rmsd_ang = 0.0;
    double mean_tm = 0.0;
    std::vector<double> rmsd_ang;  // per chain
    std::vector<double> tm;
};

/// Paired evaluation across chains: the decode seed is derived per chain, so
/// different k values see identical noise paths.
ReconStats eval_reconstruction(const model::TokenizerModel& tok,
                               const std::vector<geometry::CoordSet>& chains, int k,
                               int ode_steps, uint64_t seed);

// ---- CSV ------------------------------------------------------------------------

struct MetricsRow {
    std::string id;
    int length = 0;
    double rmsd_ang = -1.0;
    double tm = -1.0;
    int k = 0;
    double mean_entropy = -1.0;
    double final_entropy = -1.0;
    double helix_frac = 0.0;
    double sheet_frac = 0.0;
    double coil_frac = 0.0;
    double wall_s = 0.0;
};

/// Stable, versioned column order ("# chaintok-csv v1 metrics" comment, then
/// header row).
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);

// ---- commands --------------------------------------------------------------------

struct CmdPaths {
    std::string out_dir;
};

/// train-tokenizer: checkpoint + loss/eval CSV + SVG.
std::string cmd_train_tokenizer(const TokenizerTrainConfig& cfg, const DatasetSpec& data,
                                double heldout_fraction, const std::string& out_dir);

/// train-ar: tokenize cache + checkpoint + loss CSV. Throws when the
/// tokenizer codebook and the AR vocabulary disagree.
std::string cmd_train_ar(ArTrainConfig cfg, const DatasetSpec& data,
                         const std::string& tokenizer_ckpt, const std::string& out_dir);

std::vector<std::string> cmd_encode(const std::string& tokenizer_ckpt,
                                    const std::vector<std::string>& coord_files,
                                    const std::string& out_dir);

struct DecodeOptions {
    int k = 0;            // <=0 = all tokens in the file
    int force_size = 0;   // 0 = predicted size
    std::vector<int> sweep;  // when nonempty: RMSD/TM sweep against reference
    std::string reference_file;  // original coords for sweep scoring
    sampler::SamplerConfig dec;
};

std::vector<std::string> cmd_decode(const std::string& tokenizer_ckpt,
                                    const std::vector<std::string>& token_files,
                                    const DecodeOptions& opt, const std::string& out_dir);

struct GenerateOptions {
    int n = 16;
    ar::StopRule stop = ar::StopRule::fixed(16);
    ar::SampleRule rule = ar::SampleRule::nucleus(0.9);
    sampler::SamplerConfig dec;
    uint64_t seed = 0;
    bool self_consistency = false;  // encode->decode round trip per sample
};

struct GenerateReport {
    std::vector<MetricsRow> rows;
    ar::SizeStats token_stats;
    double mean_self_tm = -1.0;
    double token_agreement = -1.0;
};

GenerateReport cmd_generate(const std::string& tokenizer_ckpt, const std::string& ar_ckpt,
                            const GenerateOptions& opt, const std::string& out_dir);

struct ShrinkReport {
    std::vector<double> fractions;
    std::vector<int> sizes;
    std::vector<double> tm_to_original;
    std::vector<double> helix_frac;
    std::vector<std::string> files;
};

/// Forced-size decodes at the requested fractions of the input length with
/// TM tracked against the original via a monotone index-mapped
/// correspondence (lengths differ).
ShrinkReport cmd_shrink(const std::string& tokenizer_ckpt, const std::string& coord_file,
                        const std::vector<double>& fractions,
                        const sampler::SamplerConfig& dec, const std::string& out_dir);

struct ProbeConfig {
    int hidden = 64;
    int steps = 400;
    int batch = 32;
    float lr = 3e-3f;
    double heldout_fraction = 0.3;
    uint64_t seed = 3;
};

struct ProbeReport {
    int feature_dim = 0;
    double chance = 0.0;
    double mlp_prefix_acc = 0.0;
    double mlp_meanpool_acc = 0.0;
    double linear_prefix_acc = 0.0;
    double linear_meanpool_acc = 0.0;
};

/// Prefix-flatten vs mean-pooled-latent features on the same split, linear
/// and MLP heads on each.
ProbeReport cmd_probe(const std::string& tokenizer_ckpt, const DatasetSpec& data,
                      const ProbeConfig& cfg, const std::string& out_dir);

struct SearchOptions {
    std::string reward;  // "beta" | "class:<label>" | "external:<command>"
    search::BeamConfig beam;
    int mini_rollout_steps = 20;
    std::string prefill_file;  // optional "path:n"
    /// class:<label> rewards train a prefix classifier on this labeled
    /// corpus first (label = all-helix|all-sheet|mixed|coil or an index).
    DatasetSpec classifier_data;
    int classifier_steps = 300;
    sampler::SamplerConfig dec;
};

struct SearchReport {
    std::vector<int> tokens;
    double objective = 0.0;
    double reward = 0.0;
    std::string structure_file;
};

SearchReport cmd_search(const std::string& tokenizer_ckpt, const std::string& ar_ckpt,
                        const SearchOptions& opt, const std::string& out_dir);

/// Pairwise RMSD/TM between same-named files of two sets plus the Frechet
/// distance over encoder-prefix features.
struct MetricsReport {
    std::vector<MetricsRow> rows;
    double frechet = -1.0;
};

MetricsReport cmd_metrics(const std::string& tokenizer_ckpt,
                          const std::vector<std::string>& files_a,
                          const std::vector<std::string>& files_b,
                          const std::string& out_dir);

// ---- helpers shared with tests -----------------------------------------------------

/// Cross-length TM for shrink tracking: monotone index mapping
/// i <-> round(i (L-1)/(L'-1)), Kabsch on mapped pairs, normalized by the
/// original length.
double shrink_tm(const geometry::CoordSet& original, const geometry::CoordSet& shrunk);

/// Prefix-flatten features of a chain (normalized level indices, zero
/// padded to k_max rows).
std::vector<double> prefix_features(const model::TokenizerModel& tok,
                                    const geometry::CoordSet& chain);

/// Mean over positions of the tanh-bounded projected latents ([M]-dim).
std::vector<double> meanpool_features(const model::TokenizerModel& tok,
                                      const geometry::CoordSet& chain);

/// External reward: decode the prefix, write coordinates to a templated
/// path, run the command ("{}" substitutes the file path; appended
/// otherwise), parse one float from its stdout.
search::RewardFn make_external_reward(const model::TokenizerModel& tok,
                                      const std::string& command, int mini_steps,
                                      uint64_t seed, const std::string& workdir);

/// One-sided paired z statistic for mean(a-b) > 0.
double paired_z(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace chaintok::pipeline
