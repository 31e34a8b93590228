#include "chaintok/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace chaintok::sampler {

namespace {

double g_of(const SamplerConfig& cfg, double t) {
    return cfg.g_schedule == GSchedule::OneMinusT ? (1.0 - t) : 1.0;
}

void check_state(const std::vector<double>& x, int step) {
    for (double v : x) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("integrate: non-finite state at step " +
                                     std::to_string(step));
        }
    }
}

std::vector<double> initial_state(int dim, uint64_t seed) {
    Rng rng = Rng(seed).derive("x0");
    std::vector<double> x(dim);
    for (double& v : x) v = rng.normal();
    return x;
}

}  // namespace

std::vector<double> flow_to_score(const std::vector<double>& v,
                                  const std::vector<double>& x_t, double t,
                                  double delta) {
    if (t >= 1.0 - delta) {
        throw std::invalid_argument("flow_to_score: t=" + std::to_string(t) +
                                    " inside the terminal guard");
    }
    if (v.size() != x_t.size()) {
        throw std::invalid_argument("flow_to_score: dimension mismatch");
    }
    std::vector<double> s(v.size());
    const double inv = 1.0 / (1.0 - t);
    for (size_t i = 0; i < v.size(); ++i) s[i] = (t * v[i] - x_t[i]) * inv;
    return s;
}

Tensor flow_to_score(const Tensor& v, const Tensor& x_t, double t, double delta) {
    if (t >= 1.0 - delta) {
        throw std::invalid_argument("flow_to_score: t=" + std::to_string(t) +
                                    " inside the terminal guard");
    }
    if (v.shape() != x_t.shape()) {
        throw std::invalid_argument("flow_to_score: shape mismatch " +
                                    shape_str(v.shape()) + " vs " + shape_str(x_t.shape()));
    }
    const double inv = 1.0 / (1.0 - t);
    std::vector<float> out(static_cast<size_t>(v.numel()));
    const float* vv = v.data();
    const float* xv = x_t.data();
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>((t * static_cast<double>(vv[i]) - xv[i]) * inv);
    }
    return Tensor::from(v.shape(), std::move(out));
}

std::vector<double> integrate_ode(const VelocityField& v_fn, int dim,
                                  const SamplerConfig& cfg) {
    if (cfg.steps < 1) throw std::invalid_argument("integrate_ode: steps must be >= 1");
    std::vector<double> x = initial_state(dim, cfg.seed);
    const double dt = 1.0 / cfg.steps;
    for (int i = 0; i < cfg.steps; ++i) {
        const double t0 = static_cast<double>(i) * dt;
        const double t1 = t0 + dt;
        std::vector<double> v0 = v_fn(x, t0);
        std::vector<double> xe(x.size());
        for (size_t j = 0; j < x.size(); ++j) xe[j] = x[j] + dt * v0[j];
        std::vector<double> v1 = v_fn(xe, t1);
        for (size_t j = 0; j < x.size(); ++j) x[j] += 0.5 * dt * (v0[j] + v1[j]);
        check_state(x, i);
    }
    return x;
}

std::vector<double> integrate_sde(const VelocityField& v_fn, int dim,
                                  const SamplerConfig& cfg) {
    if (cfg.steps < 1) throw std::invalid_argument("integrate_sde: steps must be >= 1");
    if (cfg.eta == 0.0 && cfg.gamma == 0.0) {
        return integrate_ode(v_fn, dim, cfg);
    }
    std::vector<double> x = initial_state(dim, cfg.seed);
    Rng noise = Rng(cfg.seed).derive("dW");
    const double dt = 1.0 / cfg.steps;
    for (int i = 0; i < cfg.steps; ++i) {
        const double t = static_cast<double>(i) * dt;
        std::vector<double> v = v_fn(x, t);
        if (t < 1.0 - cfg.delta) {
            const double g = g_of(cfg, t);
            std::vector<double> s = flow_to_score(v, x, t, cfg.delta);
            const double noise_scale = std::sqrt(2.0 * g * cfg.gamma * dt);
            for (size_t j = 0; j < x.size(); ++j) {
                x[j] += (v[j] + g * cfg.eta * s[j]) * dt + noise_scale * noise.normal();
            }
        } else {
            for (size_t j = 0; j < x.size(); ++j) x[j] += v[j] * dt;
        }
        check_state(x, i);
    }
    return x;
}

std::vector<double> annealed_velocity(const std::vector<double>& v_cond,
                                      const std::vector<double>& v_unc, double t,
                                      double alpha) {
    if (std::isinf(alpha)) return v_unc;
    if (alpha < 0.0 || alpha > 1.0) {
        throw std::invalid_argument("annealed_velocity: alpha must be in [0,1] or inf");
    }
    if (v_cond.size() != v_unc.size()) {
        throw std::invalid_argument("annealed_velocity: dimension mismatch");
    }
    const double w = 1.0 - std::pow(t, alpha);
    std::vector<double> out(v_unc.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = v_unc[i] + w * (v_cond[i] - v_unc[i]);
    }
    return out;
}

VelocityField model_velocity_field(const model::TokenizerModel& m,
                                   const fsq::TokenSequence& tokens, bool annealing,
                                   double alpha) {
    const bool unconditional = tokens.empty() || (annealing && std::isinf(alpha));
    if (!unconditional && annealing && (alpha < 0.0 || alpha > 1.0)) {
        throw std::invalid_argument("model_velocity_field: alpha must be in [0,1] or inf");
    }
    auto eval = [&m](const std::vector<double>& x, double t,
                     const fsq::TokenSequence& cond) {
        const int l = static_cast<int>(x.size() / 3);
        std::vector<float> xf(x.size());
        for (size_t i = 0; i < x.size(); ++i) xf[i] = static_cast<float>(x[i]);
        Tensor xt = Tensor::from({l, 3}, std::move(xf));
        Tensor v = m.decode_velocity(xt, t, cond);
        std::vector<double> out(x.size());
        const float* vv = v.data();
        for (size_t i = 0; i < x.size(); ++i) out[i] = vv[i];
        return out;
    };
    if (unconditional) {
        return [eval](const std::vector<double>& x, double t) {
            return eval(x, t, fsq::TokenSequence{});
        };
    }
    if (!annealing) {
        return [eval, tokens](const std::vector<double>& x, double t) {
            return eval(x, t, tokens);
        };
    }
    return [eval, tokens, alpha](const std::vector<double>& x, double t) {
        std::vector<double> vc = eval(x, t, tokens);
        std::vector<double> vu = eval(x, t, fsq::TokenSequence{});
        return annealed_velocity(vc, vu, t, alpha);
    };
}

geometry::CoordSet decode_structure(const model::TokenizerModel& m,
                                    const fsq::TokenSequence& tokens,
                                    SizeSource size_source, int forced_size,
                                    const SamplerConfig& cfg) {
    if (tokens.empty()) throw std::invalid_argument("decode_structure: empty token prefix");
    int size = 0;
    if (size_source == SizeSource::Forced) {
        if (forced_size < 1 || forced_size > model::kMaxSize) {
            throw std::invalid_argument("decode_structure: forced size " +
                                        std::to_string(forced_size) + " outside [1,256]");
        }
        size = forced_size;
    } else {
        size = m.predict_size(tokens).second;
    }
    VelocityField field = model_velocity_field(m, tokens, cfg.annealing, cfg.alpha);
    std::vector<double> x = (cfg.mode == Mode::Sde) ? integrate_sde(field, size * 3, cfg)
                                                    : integrate_ode(field, size * 3, cfg);
    geometry::CoordSet out;
    out.pos.resize(size);
    for (int i = 0; i < size; ++i) {
        out.pos[i] = {x[i * 3], x[i * 3 + 1], x[i * 3 + 2]};
    }
    return geometry::center(out);
}

}  // namespace chaintok::sampler
