#include "doctest.h"

#include <cmath>

#include "chaintok/sampler.hpp"

using namespace chaintok;
using namespace chaintok::sampler;

TEST_SUITE_BEGIN("sampler");

namespace {

model::TokenizerConfig tiny_config() {
    model::TokenizerConfig cfg;
    cfg.encoder.layers = 1;
    cfg.encoder.channels = 32;
    cfg.encoder.heads = 2;
    cfg.decoder.layers = 2;
    cfg.decoder.channels = 48;
    cfg.decoder.heads = 2;
    cfg.decoder.time_features = 32;
    cfg.quant.k_max = 16;
    return cfg;
}

/// Gaussian point-mass toy: data = delta(a). Velocity and score are exact.
struct PointMassToy {
    double a;
    std::vector<double> v(const std::vector<double>& x, double t) const {
        std::vector<double> out(x.size());
        for (size_t i = 0; i < x.size(); ++i) out[i] = (a - x[i]) / (1.0 - t);
        return out;
    }
    double score(double x, double t) const { return -(x - t * a) / ((1.0 - t) * (1.0 - t)); }
};

}  // namespace

TEST_CASE("score at t=0 is the standard normal score") {
    std::vector<double> x{0.7, -1.3, 2.0};
    std::vector<double> v{9.0, -3.0, 0.5};  // arbitrary; t=0 kills the v term
    std::vector<double> s = flow_to_score(v, x, 0.0);
    for (size_t i = 0; i < x.size(); ++i) CHECK(s[i] == doctest::Approx(-x[i]));
}

TEST_CASE("score matches the point-mass closed form across t") {
    PointMassToy toy{0.0};
    for (double t : {0.0, 0.25, 0.5, 0.9, 0.95}) {
        std::vector<double> x{1.7};
        std::vector<double> v = toy.v(x, t);
        std::vector<double> s = flow_to_score(v, x, t);
        CHECK(s[0] == doctest::Approx(toy.score(x[0], t)).epsilon(1e-9));
    }
}

TEST_CASE("flow_to_score is affine in v") {
    std::vector<double> x{0.4, -0.9};
    std::vector<double> v1{1.0, 2.0}, v2{-3.0, 0.5};
    const double a = 0.3, t = 0.6;
    std::vector<double> mix(2), s_mix_direct(2);
    for (int i = 0; i < 2; ++i) mix[i] = a * v1[i] + (1 - a) * v2[i];
    std::vector<double> s1 = flow_to_score(v1, x, t);
    std::vector<double> s2 = flow_to_score(v2, x, t);
    std::vector<double> sm = flow_to_score(mix, x, t);
    for (int i = 0; i < 2; ++i) {
        CHECK(sm[i] == doctest::Approx(a * s1[i] + (1 - a) * s2[i]).epsilon(1e-9));
    }
}

TEST_CASE("score conversion refuses the terminal guard region") {
    std::vector<double> x{1.0}, v{1.0};
    CHECK_THROWS_AS(flow_to_score(v, x, 0.9995), std::invalid_argument);
}

TEST_CASE("constant field integrates exactly") {
    SamplerConfig cfg;
    cfg.steps = 7;
    cfg.seed = 42;
    const std::vector<double> c{0.5, -2.0, 1.25};
    auto field = [&](const std::vector<double>&, double) { return c; };
    std::vector<double> x1 = integrate_ode(field, 3, cfg);
    // recover x0 from the same stream
    SamplerConfig cfg0 = cfg;
    cfg0.steps = 1;
    auto zero = [](const std::vector<double>& x, double) {
        return std::vector<double>(x.size(), 0.0);
    };
    std::vector<double> x0 = integrate_ode(zero, 3, cfg0);
    for (int i = 0; i < 3; ++i) CHECK(x1[i] == doctest::Approx(x0[i] + c[i]).epsilon(1e-6));
}

TEST_CASE("linear field converges at second order") {
    // dx/dt = -x has terminal x0 * exp(-1)
    auto field = [](const std::vector<double>& x, double) {
        std::vector<double> v(x.size());
        for (size_t i = 0; i < x.size(); ++i) v[i] = -x[i];
        return v;
    };
    auto err_at = [&](int steps) {
        SamplerConfig cfg;
        cfg.steps = steps;
        cfg.seed = 9;
        std::vector<double> xT = integrate_ode(field, 4, cfg);
        SamplerConfig cfg0 = cfg;
        cfg0.steps = 1;
        auto zero = [](const std::vector<double>& x, double) {
            return std::vector<double>(x.size(), 0.0);
        };
        std::vector<double> x0 = integrate_ode(zero, 4, cfg0);
        double worst = 0.0;
        for (int i = 0; i < 4; ++i) {
            worst = std::max(worst, std::abs(xT[i] - x0[i] * std::exp(-1.0)));
        }
        return worst;
    };
    CHECK(err_at(40) < 1e-3);
    // error is non-increasing in the step count
    double prev = 1e300;
    for (int steps : {10, 20, 40, 80}) {
        double e = err_at(steps);
        CHECK(e <= prev + 1e-12);
        prev = e;
    }
}

TEST_CASE("degenerate sde equals the ode trajectory") {
    // Gaussian-data toy (unit variance): v is finite everywhere, including
    // the t=1 endpoint Heun's corrector evaluates
    const double mu = 2.0;
    auto field = [&](const std::vector<double>& x, double t) {
        const double st2 = (1 - t) * (1 - t) + t * t;
        std::vector<double> v(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            v[i] = mu + ((2 * t - 1) / st2) * (x[i] - t * mu);
        }
        return v;
    };
    SamplerConfig cfg;
    cfg.steps = 33;
    cfg.seed = 4;
    cfg.mode = Mode::Sde;
    cfg.eta = 0.0;
    cfg.gamma = 0.0;
    std::vector<double> sde = integrate_sde(field, 2, cfg);
    std::vector<double> ode = integrate_ode(field, 2, cfg);
    for (int i = 0; i < 2; ++i) CHECK(sde[i] == ode[i]);
}

TEST_CASE("score annealing concentrates a bimodal target") {
    // mixture 0.5 N(-2, 0.3^2) + 0.5 N(2, 0.3^2) with exact velocity
    const double mu[2] = {-2.0, 2.0};
    const double sig2 = 0.09;
    auto field = [&](const std::vector<double>& x, double t) {
        std::vector<double> out(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            double num = 0.0, den = 0.0, vs[2];
            for (int j = 0; j < 2; ++j) {
                const double st2 = (1 - t) * (1 - t) + t * t * sig2;
                const double d = x[i] - t * mu[j];
                const double w = std::exp(-0.5 * d * d / st2) / std::sqrt(st2);
                const double e_x1 = mu[j] + (t * sig2 / st2) * d;
                const double e_eps = (1 - t) * d / st2;
                vs[j] = e_x1 - e_eps;
                num += w * vs[j];
                den += w;
            }
            out[i] = num / den;
        }
        return out;
    };
    auto log_density = [&](double x) {
        double p = 0.0;
        for (int j = 0; j < 2; ++j) {
            p += 0.5 * std::exp(-0.5 * (x - mu[j]) * (x - mu[j]) / sig2) /
                 std::sqrt(2 * M_PI * sig2);
        }
        return std::log(p);
    };
    auto mean_logp = [&](double eta, double gamma) {
        double acc = 0.0;
        const int n = 400;
        for (int i = 0; i < n; ++i) {
            SamplerConfig cfg;
            cfg.steps = 120;
            cfg.mode = Mode::Sde;
            cfg.eta = eta;
            cfg.gamma = gamma;
            cfg.seed = 1000 + i;
            acc += log_density(integrate_sde(field, 1, cfg)[0]);
        }
        return acc / n;
    };
    // drift/noise balance: score drift above the noise level (eta > gamma)
    // trades diversity for density, the designability-boosting regime;
    // score drift below it diffuses
    const double balanced = mean_logp(1.0, 1.0);
    CHECK(mean_logp(1.0, 0.3) > balanced);
    CHECK(mean_logp(0.3, 1.0) < balanced);
}

TEST_CASE("annealed velocity endpoints and arithmetic") {
    std::vector<double> vc{1.0, 2.0, 3.0}, vu{-1.0, 0.0, 5.0};
    for (double alpha : {0.3, 0.8, 1.0}) {
        std::vector<double> at0 = annealed_velocity(vc, vu, 0.0, alpha);
        std::vector<double> at1 = annealed_velocity(vc, vu, 1.0, alpha);
        for (int i = 0; i < 3; ++i) {
            CHECK(at0[i] == vc[i]);
            CHECK(at1[i] == vu[i]);
        }
    }
    // alpha=1, t=0.25: weight 0.75 on the conditional difference
    std::vector<double> mid = annealed_velocity(vc, vu, 0.25, 1.0);
    for (int i = 0; i < 3; ++i) {
        CHECK(mid[i] == doctest::Approx(vu[i] + 0.75 * (vc[i] - vu[i])).epsilon(1e-12));
    }
    // infinity sentinel disables conditioning
    std::vector<double> unc = annealed_velocity(vc, vu, 0.4, kAlphaUnconditional);
    for (int i = 0; i < 3; ++i) CHECK(unc[i] == vu[i]);
    CHECK_THROWS_AS(annealed_velocity(vc, vu, 0.5, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(annealed_velocity(vc, vu, 0.5, -0.1), std::invalid_argument);
}

TEST_CASE("decode_structure determinism and size contracts") {
    model::TokenizerModel m(tiny_config(), 19);
    geometry::CoordSet c = geometry::center(geometry::make_helix(10));
    fsq::TokenSequence t = m.encode(c);
    SamplerConfig cfg;
    cfg.steps = 8;
    cfg.seed = 123;

    geometry::CoordSet d1 = decode_structure(m, t, SizeSource::Forced, 10, cfg);
    geometry::CoordSet d2 = decode_structure(m, t, SizeSource::Forced, 10, cfg);
    REQUIRE(d1.length() == 10);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(d1.pos[i][j] == d2.pos[i][j]);
    }
    // forcing the predicted size reproduces the predicted-size path
    const int predicted = m.predict_size(t).second;
    geometry::CoordSet dp = decode_structure(m, t, SizeSource::Predicted, 0, cfg);
    geometry::CoordSet df = decode_structure(m, t, SizeSource::Forced, predicted, cfg);
    REQUIRE(dp.length() == df.length());
    for (int i = 0; i < dp.length(); ++i) {
        for (int j = 0; j < 3; ++j) CHECK(dp.pos[i][j] == df.pos[i][j]);
    }
    CHECK_THROWS_AS(decode_structure(m, t, SizeSource::Forced, 257, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(decode_structure(m, fsq::TokenSequence{}, SizeSource::Predicted, 0, cfg),
                    std::invalid_argument);
}

TEST_SUITE_END();
