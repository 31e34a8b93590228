/**
 * Adam with bias correction and global gradient-norm clipping.
 */
#pragma once

#include <map>
#include <string>
#include <vector>

#include "chaintok/tensor.hpp"

namespace chaintok {

struct AdamConfig {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    /// Global L2 norm threshold; gradients above it are rescaled onto it.
    float clip = 10.0f;
};

struct AdamSlot {
    std::vector<float> m;
    std::vector<float> v;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// One update over all parameters. The global grad norm is computed
    /// first, clipping rescales every gradient by clip/norm when norm
    /// exceeds the threshold, then each parameter takes a bias-corrected
    /// Adam step. Gradients are zeroed afterwards. Returns false (and
    /// leaves parameters and moments untouched) when any gradient is
    /// non-finite; the step counter does not advance in that case.
    bool step(NamedParams& params);

    int64_t step_count() const { return step_count_; }
    float last_grad_norm() const { return last_grad_norm_; }
    int64_t skipped_steps() const { return skipped_; }

    const AdamConfig& config() const { return cfg_; }
    void set_lr(float lr) { cfg_.lr = lr; }
    std::map<std::string, AdamSlot>& slots() { return slots_; }
    void set_step_count(int64_t n) { step_count_ = n; }

private:
    AdamConfig cfg_;
    std::map<std::string, AdamSlot> slots_;
    int64_t step_count_ = 0;
    int64_t skipped_ = 0;
    float last_grad_norm_ = 0.0f;
};

}  // namespace chaintok
