/**
 * Diffusion autoencoder over chain coordinates: bidirectional encoder with
 * absolute positional encodings, FSQ bottleneck, conditional flow-matching
 * decoder with rotary positions and one shared set of adaptive-norm
 * modulation parameters, a size readout head on the first token, and the
 * combined flow + size training loss.
 */
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chaintok/checkpoint.hpp"
#include "chaintok/fsq.hpp"
#include "chaintok/geometry.hpp"
#include "chaintok/optim.hpp"
#include "chaintok/rng.hpp"
#include "chaintok/tensor.hpp"

namespace chaintok::model {

constexpr int kMaxSize = 256;  // size head classes are exact lengths 1..256

struct EncoderConfig {
    int layers = 2;
    int channels = 256;
    int heads = 8;
    int max_positions = kMaxSize;
};

struct DecoderConfig {
    int layers = 12;
    int channels = 512;
    int heads = 8;
    int time_features = 128;
};

struct LossWeights {
    float lambda_size = 0.01f;
};

enum class TimeDist { LogitNormal, Uniform };

struct TrainOptions {
    TimeDist time_dist = TimeDist::LogitNormal;
    /// Fraction of examples trained with the empty conditioning prefix so
    /// the unconditional branch of classifier annealing is meaningful.
    float cond_dropout = 0.1f;
    /// Desk-scale stabilizers for the encoder/decoder race: with few chains
    /// the decoder can silence its (initially random) conditioning before
    /// learning to read it, collapsing the encoder. Freezing the encoder
    /// keeps tokens diverse while the decoder locks onto them; delaying the
    /// rotation augmentation makes the early conditioning task memorizable.
    /// Both default off, matching the plain two-stage recipe.
    int encoder_freeze_steps = 0;
    int rotation_start_step = 0;
};

struct TokenizerConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    fsq::FsqConfig quant;
    LossWeights loss;
    TrainOptions train;
};

/// Small defaults that train on one CPU core; Table-scale settings remain
/// reachable through the individual config structs.
TokenizerConfig desk_scale_config();

/// Linear interpolant endpoints: x_t = (1-t) eps + t x, target v* = x - eps.
struct FlowTarget {
    Tensor x_t;
    Tensor v_star;
};
FlowTarget flow_target(const Tensor& x, const Tensor& eps, double t);

struct StepLosses {
    double flow = 0.0;
    double size = 0.0;
    double total = 0.0;
};

class TokenizerModel {
public:
    TokenizerModel(TokenizerConfig cfg, uint64_t seed);

    const TokenizerConfig& config() const { return cfg_; }

    /// One latent per residue, [L, M]; deterministic given parameters.
    /// Input must be centered; L > max_positions throws.
    Tensor encode_latents(const geometry::CoordSet& coords) const;

    /// Full quantization of a chain, truncated to min(L, k_max) tokens.
    fsq::TokenSequence encode(const geometry::CoordSet& coords) const;

    /// Velocity at the coordinate positions given a (possibly empty) token
    /// prefix conditioning the stream in-context. x_t is [L,3]; prefix
    /// longer than k_max throws.
    Tensor decode_velocity(const Tensor& x_t, double t,
                           const fsq::TokenSequence& tokens) const;

    /// Size logits [1, 256] from the quantized first-token values [1, M].
    Tensor size_logits(const Tensor& first_token_values) const;

    /// Distribution over sizes 1..256 plus argmax; empty tokens throw.
    std::pair<std::vector<float>, int> predict_size(const fsq::TokenSequence& tokens) const;

    /// Teacher-forced combined loss over a batch: center -> random rotation
    /// -> encode -> quantize -> sample cutoff -> nested dropout -> sample
    /// (t, eps) -> decode at the TRUE length -> MSE + lambda * size CE.
    /// Backpropagates and applies one optimizer step.
    StepLosses training_step(const std::vector<geometry::CoordSet>& batch, Adam& opt,
                             Rng& rng);

    /// Forward-only losses (no tape); used by loss decomposition checks.
    StepLosses eval_losses(const std::vector<geometry::CoordSet>& batch, Rng& rng) const;

    NamedParams& params() { return params_; }
    const NamedParams& params() const { return params_; }

    void save(const std::string& path, const Adam* opt = nullptr,
              const nlohmann::json& extra_meta = {}) const;
    static TokenizerModel load(const std::string& path, Adam* opt = nullptr,
                               nlohmann::json* extra_meta = nullptr);

private:
    struct Losses {
        Tensor flow;
        Tensor size;
        Tensor total;
    };
    Losses batch_losses(const std::vector<geometry::CoordSet>& batch, Rng& rng,
                        bool rotate) const;

    /// Decoder core taking the conditioning values explicitly, so training
    /// can pass the straight-through quantize output (gradient path to the
    /// encoder) while inference passes dequantized grid values.
    Tensor decode_stream(const Tensor& x_t, double t, const std::vector<int>& codes,
                         const Tensor& values) const;

    TokenizerConfig cfg_;
    NamedParams params_;

    // encoder
    Tensor enc_in_w_, enc_in_b_, enc_pos_;
    struct Block {
        Tensor ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b;
        Tensor ln2_g, ln2_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    };
    std::vector<Block> enc_blocks_;
    Tensor enc_lnf_g_, enc_lnf_b_, enc_out_w_, enc_out_b_;

    // decoder
    Tensor dec_token_emb_, dec_value_w_, dec_sep_, dec_coord_w_, dec_coord_b_;
    Tensor dec_time1_w_, dec_time1_b_, dec_time2_w_, dec_time2_b_;
    struct DecBlock {
        Tensor qkv_w, qkv_b, out_w, out_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    };
    std::vector<DecBlock> dec_blocks_;
    Tensor dec_head_w_, dec_head_b_;

    // size head
    Tensor size1_w_, size1_b_, size2_w_, size2_b_;

    double sample_time(Rng& rng) const;
};

nlohmann::json config_to_json(const TokenizerConfig& cfg);
TokenizerConfig config_from_json(const nlohmann::json& j);

}  // namespace chaintok::model
