#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "chaintok/model.hpp"
#include "chaintok/pipeline.hpp"

using namespace chaintok;
using namespace chaintok::model;

TEST_SUITE_BEGIN("model");

namespace {

TokenizerConfig tiny_config() {
    TokenizerConfig cfg;
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

}  // namespace

TEST_CASE("flow target endpoints and t-independence of the target") {
    Rng rng(2);
    Tensor x = Tensor::randn({5, 3}, rng);
    Tensor eps = Tensor::randn({5, 3}, rng);
    FlowTarget at0 = flow_target(x, eps, 0.0);
    FlowTarget at1 = flow_target(x, eps, 1.0);
    FlowTarget mid = flow_target(x, eps, 0.37);
    for (int64_t i = 0; i < x.numel(); ++i) {
        CHECK(at0.x_t.data()[i] == doctest::Approx(eps.data()[i]));
        CHECK(at1.x_t.data()[i] == doctest::Approx(x.data()[i]));
        // v* = x - eps regardless of t
        CHECK(at0.v_star.data()[i] == doctest::Approx(mid.v_star.data()[i]));
        CHECK(mid.v_star.data()[i] ==
              doctest::Approx(x.data()[i] - eps.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("encoder output length equals chain length") {
    TokenizerModel m(tiny_config(), 11);
    for (int l : {1, 37, 256}) {
        geometry::CoordSet c = geometry::center(geometry::make_helix(l));
        Tensor z = m.encode_latents(c);
        CHECK(z.shape() == Shape{l, 4});
    }
    geometry::CoordSet too_long = geometry::make_helix(257);
    CHECK_THROWS_AS(m.encode_latents(too_long), std::invalid_argument);
}

TEST_CASE("encoding is order independent and reproducible") {
    TokenizerModel m(tiny_config(), 11);
    geometry::CoordSet a = geometry::center(geometry::make_helix(20));
    Rng rng(5);
    geometry::CoordSet b = geometry::center(geometry::make_coil(20, rng));
    Tensor za1 = m.encode_latents(a);
    Tensor zb1 = m.encode_latents(b);
    // reversed order
    Tensor zb2 = m.encode_latents(b);
    Tensor za2 = m.encode_latents(a);
    for (int64_t i = 0; i < za1.numel(); ++i) {
        CHECK(za1.data()[i] == za2.data()[i]);
        CHECK(zb1.data()[i] == zb2.data()[i]);
    }
    // same seed rebuilds the same parameters and latents bit-exactly
    TokenizerModel m2(tiny_config(), 11);
    Tensor za3 = m2.encode_latents(a);
    for (int64_t i = 0; i < za1.numel(); ++i) CHECK(za1.data()[i] == za3.data()[i]);
}

TEST_CASE("decode velocity shape contract across prefix lengths") {
    TokenizerModel m(tiny_config(), 3);
    const int l = 12;
    Rng rng(4);
    Tensor x_t = Tensor::randn({l, 3}, rng);
    geometry::CoordSet c = geometry::center(geometry::make_helix(l));
    fsq::TokenSequence full = m.encode(c);
    for (int k = 1; k <= full.size(); ++k) {
        Tensor v = m.decode_velocity(x_t, 0.5, fsq::nested_dropout(full, k));
        CHECK(v.shape() == Shape{l, 3});
    }
    // empty prefix = unconditional branch
    Tensor vu = m.decode_velocity(x_t, 0.5, fsq::TokenSequence{});
    CHECK(vu.shape() == Shape{l, 3});
    // over-long prefix is rejected
    fsq::TokenSequence too_long =
        fsq::tokens_from_codes(std::vector<int>(17, 3), m.config().quant);
    CHECK_THROWS_AS(m.decode_velocity(x_t, 0.5, too_long), std::invalid_argument);
}

TEST_CASE("unconditional decode ignores the token argument") {
    TokenizerModel m(tiny_config(), 3);
    Rng rng(9);
    Tensor x_t = Tensor::randn({8, 3}, rng);
    Tensor v1 = m.decode_velocity(x_t, 0.3, fsq::TokenSequence{});
    Tensor v2 = m.decode_velocity(x_t, 0.3, fsq::TokenSequence{});
    for (int64_t i = 0; i < v1.numel(); ++i) CHECK(v1.data()[i] == v2.data()[i]);
}

TEST_CASE("loss decomposition: total = flow + lambda * size") {
    TokenizerConfig cfg = tiny_config();
    cfg.loss.lambda_size = 0.25f;
    cfg.train.cond_dropout = 0.0f;
    TokenizerModel m(cfg, 21);
    std::vector<geometry::CoordSet> batch{geometry::center(geometry::make_helix(10)),
                                          geometry::center(geometry::make_strand(12))};
    Rng rng(5);
    StepLosses l = m.eval_losses(batch, rng);
    CHECK(l.total == doctest::Approx(l.flow + 0.25 * l.size).epsilon(1e-6));

    // lambda = 0 collapses the total onto the flow term
    TokenizerConfig cfg0 = tiny_config();
    cfg0.loss.lambda_size = 0.0f;
    TokenizerModel m0(cfg0, 21);
    Rng rng2(5);
    StepLosses l0 = m0.eval_losses(batch, rng2);
    CHECK(l0.total == doctest::Approx(l0.flow).epsilon(1e-7));
}

TEST_CASE("predict size contract") {
    TokenizerModel m(tiny_config(), 8);
    geometry::CoordSet c = geometry::center(geometry::make_helix(14));
    fsq::TokenSequence t = m.encode(c);
    auto [dist, amax] = m.predict_size(t);
    REQUIRE(dist.size() == 256);
    double sum = 0.0;
    for (float p : dist) {
        REQUIRE(p >= 0.0f);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(amax >= 1);
    CHECK(amax <= 256);
    // a single token suffices
    auto [d1, a1] = m.predict_size(fsq::nested_dropout(t, 1));
    CHECK(d1.size() == 256);
    CHECK(a1 == amax);  // size head only reads token 0
    CHECK_THROWS_AS(m.predict_size(fsq::TokenSequence{}), std::invalid_argument);
}

TEST_CASE("training reduces the flow loss on a tiny overfit") {
    TokenizerConfig cfg = tiny_config();
    cfg.train.cond_dropout = 0.05f;
    TokenizerModel m(cfg, 31);
    Adam opt(AdamConfig{3e-3f, 0.9f, 0.999f, 1e-8f, 10.0f});
    std::vector<geometry::CoordSet> chains{geometry::center(geometry::make_helix(10)),
                                           geometry::center(geometry::make_strand(10))};
    Rng rng(77);
    double first_avg = 0.0, last_avg = 0.0;
    const int steps = 240, window = 40;
    for (int s = 0; s < steps; ++s) {
        Rng srng = rng.derive(s);
        StepLosses l = m.training_step(chains, opt, srng);
        if (s < window) first_avg += l.flow / window;
        if (s >= steps - window) last_avg += l.flow / window;
    }
    CHECK(last_avg < first_avg);
}

TEST_CASE("teacher forcing keeps the stream at the true length") {
    // decode at the true length must succeed for any prefix, even when the
    // size head is untrained and would predict something else
    TokenizerModel m(tiny_config(), 13);
    geometry::CoordSet c = geometry::center(geometry::make_helix(9));
    fsq::TokenSequence t = m.encode(c);
    Rng rng(1);
    Tensor x_t = Tensor::randn({9, 3}, rng);
    Tensor v = m.decode_velocity(x_t, 0.8, t);
    CHECK(v.dim(0) == 9);
}

TEST_CASE("checkpoint round trip preserves behavior and optimizer state") {
    namespace fs = std::filesystem;
    TokenizerModel m(tiny_config(), 5);
    Adam opt;
    std::vector<geometry::CoordSet> chains{geometry::center(geometry::make_helix(8))};
    Rng rng(3);
    for (int s = 0; s < 3; ++s) {
        Rng srng = rng.derive(s);
        m.training_step(chains, opt, srng);
    }
    const std::string path = (fs::temp_directory_path() / "ctk_model.ckpt").string();
    m.save(path, &opt);

    Adam opt2;
    TokenizerModel back = TokenizerModel::load(path, &opt2);
    CHECK(opt2.step_count() == opt.step_count());
    geometry::CoordSet probe = geometry::center(geometry::make_helix(11));
    Tensor z1 = m.encode_latents(probe);
    Tensor z2 = back.encode_latents(probe);
    for (int64_t i = 0; i < z1.numel(); ++i) CHECK(z1.data()[i] == z2.data()[i]);
    std::remove(path.c_str());
}

TEST_CASE("shared modulation is a single parameter set") {
    TokenizerConfig cfg = tiny_config();
    cfg.decoder.layers = 5;
    TokenizerModel m(cfg, 2);
    int mod_params = 0;
    for (const auto& [name, t] : m.params()) {
        if (name.find("dec.time") == 0) ++mod_params;
    }
    // one shared time MLP (two layers: w+b each) regardless of depth
    CHECK(mod_params == 4);
}

TEST_SUITE_END();
