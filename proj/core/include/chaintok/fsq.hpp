/**
 * Finite scalar quantization with straight-through gradients, mixed-radix
 * codebook indexing, and nested token dropout.
 *
 * Per channel m with l levels: z is bounded to (l-1)/2 * tanh(z), rounded to
 * the channel grid, and rescaled to [-1,1]. Odd level counts use the integer
 * grid -s..s; even counts use the half-integer grid -s..s (s=(l-1)/2) so all
 * l points are reachable. Rounding is half-away-from-zero; an exact-zero
 * input on an even channel maps to the upper central code (+0.5 before
 * rescale). The forward pass uses the rounded values while gradients pass
 * straight through the rounding, keeping the tanh Jacobian.
 */
#pragma once

#include <string>
#include <vector>

#include "chaintok/tensor.hpp"

namespace chaintok::fsq {

struct FsqConfig {
    std::vector<int> levels = {8, 5, 5, 5};
    int k_max = 128;

    int channels() const { return static_cast<int>(levels.size()); }
    int codebook_size() const;
};

/// The 4375-code ablation codebook.
FsqConfig large_codebook_config();

struct TokenSequence {
    std::vector<int> codes;                        // mixed-radix, one per position
    std::vector<std::vector<int>> level_indices;   // per-position tuples

    int size() const { return static_cast<int>(codes.size()); }
    bool empty() const { return codes.empty(); }
};

TokenSequence tokens_from_codes(const std::vector<int>& codes, const FsqConfig& cfg);

/// Mixed-radix packing, first channel least significant. Bijection onto
/// [0, codebook_size).
int code_index(const std::vector<int>& levels_tuple, const FsqConfig& cfg);
std::vector<int> code_inverse(int code, const FsqConfig& cfg);

struct QuantizeResult {
    Tensor values;        // [L, M] normalized grid values, straight-through grad
    TokenSequence tokens;
};

/// Quantize projected latents [L, M]. Throws on non-finite input.
QuantizeResult quantize(const Tensor& z, const FsqConfig& cfg);

/// Bound-only forward (s*tanh(z)/s rescaled), no rounding. The
/// straight-through contract says quantize() and this share the
/// same Jacobian.
Tensor bound_only(const Tensor& z, const FsqConfig& cfg);

/// Normalized grid values for one code (length M, in [-1,1]).
std::vector<float> code_values(int code, const FsqConfig& cfg);

/// Constant tensor [k, M] of grid values for a token prefix.
Tensor dequantize(const TokenSequence& tokens, const FsqConfig& cfg);

/// Quantize already-bounded normalized values (no tanh); used by roundtrip
/// checks and by consumers holding dequantized grids.
std::vector<int> quantize_values_row(const std::vector<float>& bounded, const FsqConfig& cfg);

/// Keep the first k tokens; k < 1 is an error, k >= size is the identity.
TokenSequence nested_dropout(const TokenSequence& tokens, int k);

/// Training-time cutoff: uniform over 1..min(len, k_max).
int sample_cutoff(int len, const FsqConfig& cfg, Rng& rng);

// Token stream file format: header "levels 8,5,5,5 kmax 128", then one
// mixed-radix code per line.
void write_tokens(const TokenSequence& tokens, const FsqConfig& cfg, const std::string& path);
struct TokenFile {
    TokenSequence tokens;
    FsqConfig config;
};
TokenFile read_tokens(const std::string& path);

}  // namespace chaintok::fsq
