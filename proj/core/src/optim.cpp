#include "chaintok/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace chaintok {

bool Adam::step(NamedParams& params) {
    double norm_sq = 0.0;
    bool finite = true;
    for (auto& [name, p] : params) {
        const auto& g = p.grad();
        if (g.empty()) continue;
        for (float gv : g) {
            if (!std::isfinite(gv)) {
                finite = false;
                break;
            }
            norm_sq += static_cast<double>(gv) * gv;
        }
        if (!finite) break;
    }
    if (!finite) {
        ++skipped_;
        for (auto& [name, p] : params) p.zero_grad();
        return false;
    }
    last_grad_norm_ = static_cast<float>(std::sqrt(norm_sq));
    float grad_scale = 1.0f;
    if (cfg_.clip > 0.0f && last_grad_norm_ > cfg_.clip) {
        grad_scale = cfg_.clip / last_grad_norm_;
    }

    ++step_count_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), step_count_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), step_count_);

    for (auto& [name, p] : params) {
        AdamSlot& slot = slots_[name];
        const size_t n = p.values().size();
        if (slot.m.size() != n) {
            slot.m.assign(n, 0.0f);
            slot.v.assign(n, 0.0f);
        }
        float* val = p.data();
        float* grad = p.grad_data();
        for (size_t i = 0; i < n; ++i) {
            float g = grad[i] * grad_scale;
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0f - cfg_.beta1) * g;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0f - cfg_.beta2) * g * g;
            float mhat = static_cast<float>(slot.m[i] / bc1);
            float vhat = static_cast<float>(slot.v[i] / bc2);
            val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p.zero_grad();
    }
    return true;
}

}  // namespace chaintok
