/**
 * Shared transformer building blocks for the tokenizer decoder, encoder and
 * the autoregressive prior.
 */
#pragma once

#include <string>
#include <vector>

#include "chaintok/tensor.hpp"

namespace chaintok::nn {

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

/// Multi-head attention over a [T,C] stream. rope_pos empty disables rotary;
/// mask (optional [T,T], added to scores) carries causal/document structure.
inline Tensor attention(const Tensor& x, const Tensor& wqkv, const Tensor& bqkv,
                        const Tensor& wo, const Tensor& bo, int heads,
                        const std::vector<int>& rope_pos, const Tensor& mask) {
    const int t = x.dim(0);
    const int c = x.dim(1);
    const int d = c / heads;
    Tensor qkv = linear(x, wqkv, bqkv);  // [T, 3C]
    Tensor q = reshape(narrow(qkv, 1, 0, c), {t, heads, d});
    Tensor k = reshape(narrow(qkv, 1, c, c), {t, heads, d});
    Tensor v = reshape(narrow(qkv, 1, 2 * c, c), {t, heads, d});
    q = transpose(q, 0, 1);  // [H, T, D]
    k = transpose(k, 0, 1);
    v = transpose(v, 0, 1);
    if (!rope_pos.empty()) {
        q = rope(q, rope_pos);
        k = rope(k, rope_pos);
    }
    Tensor scores = scale(matmul(q, transpose(k, 1, 2)),
                          1.0f / std::sqrt(static_cast<float>(d)));  // [H, T, T]
    if (mask.defined()) scores = add(scores, mask);
    Tensor probs = softmax(scores);
    Tensor out = matmul(probs, v);             // [H, T, D]
    out = reshape(transpose(out, 0, 1), {t, c});
    return linear(out, wo, bo);
}

/// Registers a fresh parameter tensor under `name`.
inline Tensor make_param(NamedParams& params, const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params.emplace_back(name, t);
    return t;
}

inline Tensor param_randn(NamedParams& params, const std::string& name,
                          const Shape& shape, Rng& rng, float std_dev = 0.02f) {
    return make_param(params, name, Tensor::randn(shape, rng, std_dev));
}

inline Tensor param_zeros(NamedParams& params, const std::string& name, const Shape& shape) {
    return make_param(params, name, Tensor::zeros(shape));
}

inline Tensor param_ones(NamedParams& params, const std::string& name, const Shape& shape) {
    return make_param(params, name, Tensor::full(shape, 1.0f));
}

}  // namespace chaintok::nn
