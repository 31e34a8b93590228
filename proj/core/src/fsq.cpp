#include "chaintok/fsq.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace chaintok::fsq {

int FsqConfig::codebook_size() const {
    int p = 1;
    for (int l : levels) p *= l;
    return p;
}

FsqConfig large_codebook_config() {
    FsqConfig cfg;
    cfg.levels = {7, 5, 5, 5, 5};
    return cfg;
}

int code_index(const std::vector<int>& levels_tuple, const FsqConfig& cfg) {
    if (levels_tuple.size() != cfg.levels.size()) {
        throw std::invalid_argument("code_index: tuple arity " +
                                    std::to_string(levels_tuple.size()) + " for " +
                                    std::to_string(cfg.levels.size()) + " channels");
    }
    int code = 0, radix = 1;
    for (size_t m = 0; m < cfg.levels.size(); ++m) {
        if (levels_tuple[m] < 0 || levels_tuple[m] >= cfg.levels[m]) {
            throw std::invalid_argument("code_index: component " + std::to_string(m) +
                                        " = " + std::to_string(levels_tuple[m]) +
                                        " outside [0," + std::to_string(cfg.levels[m]) + ")");
        }
        code += levels_tuple[m] * radix;
        radix *= cfg.levels[m];
    }
    return code;
}

std::vector<int> code_inverse(int code, const FsqConfig& cfg) {
    if (code < 0 || code >= cfg.codebook_size()) {
        throw std::invalid_argument("code_inverse: code " + std::to_string(code) +
                                    " outside [0," + std::to_string(cfg.codebook_size()) + ")");
    }
    std::vector<int> tuple(cfg.levels.size());
    for (size_t m = 0; m < cfg.levels.size(); ++m) {
        tuple[m] = code % cfg.levels[m];
        code /= cfg.levels[m];
    }
    return tuple;
}

TokenSequence tokens_from_codes(const std::vector<int>& codes, const FsqConfig& cfg) {
    TokenSequence t;
    t.codes = codes;
    t.level_indices.reserve(codes.size());
    for (int c : codes) t.level_indices.push_back(code_inverse(c, cfg));
    return t;
}

namespace {

/// Quantize one bounded value (already s*tanh scaled) on a channel with l
/// levels; returns the grid index in [0, l).
int grid_index(double bounded, int l) {
    const double s = (l - 1) * 0.5;
    double q;
    if (l % 2 == 1) {
        q = std::round(bounded);  // round() is half-away-from-zero
    } else {
        q = std::round(bounded + 0.5) - 0.5;
    }
    q = std::min(std::max(q, -s), s);
    return static_cast<int>(std::lround(q + s));
}

double grid_value(int index, int l) {
    const double s = (l - 1) * 0.5;
    return (index - s) / s;  // normalized to [-1, 1]
}

}  // namespace

std::vector<int> quantize_values_row(const std::vector<float>& bounded, const FsqConfig& cfg) {
    if (bounded.size() != cfg.levels.size()) {
        throw std::invalid_argument("quantize_values_row: arity mismatch");
    }
    std::vector<int> tuple(cfg.levels.size());
    for (size_t m = 0; m < cfg.levels.size(); ++m) {
        const int l = cfg.levels[m];
        const double s = (l - 1) * 0.5;
        tuple[m] = grid_index(static_cast<double>(bounded[m]) * s, l);
    }
    return tuple;
}

QuantizeResult quantize(const Tensor& z, const FsqConfig& cfg) {
    const Shape& sh = z.shape();
    const int m_ch = cfg.channels();
    if (sh.size() != 2 || sh[1] != m_ch) {
        throw std::invalid_argument("quantize: expected [L," + std::to_string(m_ch) +
                                    "], got " + shape_str(sh));
    }
    const int l_len = sh[0];
    const float* zv = z.data();
    for (int64_t i = 0; i < z.numel(); ++i) {
        if (!std::isfinite(zv[i])) throw std::runtime_error("quantize: non-finite input");
    }

    QuantizeResult out;
    out.tokens.codes.resize(l_len);
    out.tokens.level_indices.resize(l_len);
    std::vector<float> vals(static_cast<size_t>(l_len) * m_ch);
    for (int i = 0; i < l_len; ++i) {
        std::vector<int> tuple(m_ch);
        for (int m = 0; m < m_ch; ++m) {
            const int l = cfg.levels[m];
            const double s = (l - 1) * 0.5;
            const double bounded = s * std::tanh(static_cast<double>(zv[i * m_ch + m]));
            const int idx = grid_index(bounded, l);
            tuple[m] = idx;
            vals[static_cast<size_t>(i) * m_ch + m] = static_cast<float>(grid_value(idx, l));
        }
        out.tokens.level_indices[i] = tuple;
        out.tokens.codes[i] = code_index(tuple, cfg);
    }
    out.values = Tensor::from({l_len, m_ch}, std::move(vals));

    if (GradTape::active()) {
        auto zd = z.ptr();
        auto od = out.values.ptr();
        GradTape::record([zd, od]() {
            if (od->grad.empty()) return;
            if (zd->grad.empty()) zd->grad.assign(zd->val.size(), 0.0f);
            // rounding passes gradients straight through; tanh keeps its Jacobian
            for (size_t i = 0; i < zd->val.size(); ++i) {
                const float t = std::tanh(zd->val[i]);
                zd->grad[i] += od->grad[i] * (1.0f - t * t);
            }
        });
    }
    return out;
}

Tensor bound_only(const Tensor& z, const FsqConfig& cfg) {
    const Shape& sh = z.shape();
    if (sh.size() != 2 || sh[1] != cfg.channels()) {
        throw std::invalid_argument("bound_only: expected [L," +
                                    std::to_string(cfg.channels()) + "], got " +
                                    shape_str(sh));
    }
    return tanh_act(z);
}

std::vector<float> code_values(int code, const FsqConfig& cfg) {
    std::vector<int> tuple = code_inverse(code, cfg);
    std::vector<float> out(tuple.size());
    for (size_t m = 0; m < tuple.size(); ++m) {
        out[m] = static_cast<float>(grid_value(tuple[m], cfg.levels[m]));
    }
    return out;
}

Tensor dequantize(const TokenSequence& tokens, const FsqConfig& cfg) {
    const int k = tokens.size();
    const int m_ch = cfg.channels();
    std::vector<float> v(static_cast<size_t>(k) * m_ch);
    for (int i = 0; i < k; ++i) {
        std::vector<float> row = code_values(tokens.codes[i], cfg);
        for (int m = 0; m < m_ch; ++m) v[static_cast<size_t>(i) * m_ch + m] = row[m];
    }
    return Tensor::from({k, m_ch}, std::move(v));
}

TokenSequence nested_dropout(const TokenSequence& tokens, int k) {
    if (k < 1) throw std::invalid_argument("nested_dropout: cutoff must be >= 1");
    if (k >= tokens.size()) return tokens;
    TokenSequence out;
    out.codes.assign(tokens.codes.begin(), tokens.codes.begin() + k);
    out.level_indices.assign(tokens.level_indices.begin(), tokens.level_indices.begin() + k);
    return out;
}

int sample_cutoff(int len, const FsqConfig& cfg, Rng& rng) {
    const int hi = std::min(len, cfg.k_max);
    return static_cast<int>(rng.uniform_int(1, hi));
}

void write_tokens(const TokenSequence& tokens, const FsqConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_tokens: cannot open " + path);
    f << "levels ";
    for (size_t m = 0; m < cfg.levels.size(); ++m) f << (m ? "," : "") << cfg.levels[m];
    f << " kmax " << cfg.k_max << "\n";
    for (int c : tokens.codes) f << c << "\n";
    if (!f) throw std::runtime_error("write_tokens: write failed for " + path);
}

TokenFile read_tokens(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_tokens: cannot open " + path);
    std::string header;
    if (!std::getline(f, header)) throw std::runtime_error(path + ": empty token file");
    std::istringstream hs(header);
    std::string kw, levels_str, kmax_kw;
    TokenFile out;
    int kmax = 0;
    if (!(hs >> kw >> levels_str >> kmax_kw >> kmax) || kw != "levels" || kmax_kw != "kmax") {
        throw std::runtime_error(path + ": malformed token header at line 1");
    }
    out.config.levels.clear();
    std::istringstream ls(levels_str);
    std::string tok;
    while (std::getline(ls, tok, ',')) out.config.levels.push_back(std::stoi(tok));
    if (out.config.levels.empty()) {
        throw std::runtime_error(path + ": malformed levels list at line 1");
    }
    out.config.k_max = kmax;
    std::string line;
    int lineno = 1;
    std::vector<int> codes;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            codes.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw std::runtime_error(path + ": malformed token at line " +
                                     std::to_string(lineno));
        }
    }
    out.tokens = tokens_from_codes(codes, out.config);
    return out;
}

}  // namespace chaintok::fsq
