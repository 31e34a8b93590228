#include "doctest.h"

#include <cmath>
#include <functional>

#include "chaintok/rng.hpp"
#include "chaintok/tensor.hpp"

using namespace chaintok;

TEST_SUITE_BEGIN("tensor");

namespace {

/// Central finite differences (step 1e-3) over every element of every leaf,
/// compared to the tape's analytic gradients. The fd path re-evaluates the
/// forward with no tape, so it is independent of the backward implementation.
/// Relative error uses the standard gradcheck denominator max(1,|a|,|fd|):
/// relative above 1, absolute below (the float32 forward caps fd resolution
/// near 1e-4 regardless of the gradient's size).
double fd_max_rel_err(const std::function<Tensor()>& forward, std::vector<Tensor> leaves,
                      float h = 1e-3f) {
    for (Tensor& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    {
        GradTape tape;
        Tensor loss = forward();
        tape.backward(loss);
    }
    double worst = 0.0;
    for (Tensor& l : leaves) {
        const auto& grad = l.grad();
        float* vals = l.data();
        for (int64_t i = 0; i < l.numel(); ++i) {
            const float keep = vals[i];
            vals[i] = keep + h;
            const double fp = forward().item();
            vals[i] = keep - h;
            const double fm = forward().item();
            vals[i] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = grad[i];
            const double rel =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

Tensor randt(const Shape& s, Rng& rng, float scale = 1.0f) {
    return Tensor::randn(s, rng, scale);
}

}  // namespace

TEST_CASE("matmul shape algebra") {
    Rng rng(1);
    Tensor a = randt({2, 3}, rng), b = randt({3, 4}, rng);
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 4});
    // hand-checked entry
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) acc += a.data()[0 * 3 + k] * b.data()[k * 4 + 1];
    CHECK(c.data()[1] == doctest::Approx(acc).epsilon(1e-6));
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor x = Tensor::full({2, 7}, 3.25f);
    Tensor y = softmax(x);
    for (int i = 0; i < 14; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 7).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(5);
    Tensor x = randt({4, 9}, rng, 3.0f);
    Tensor y = softmax(x);
    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int c = 0; c < 9; ++c) s += y.data()[r * 9 + c];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("layer norm statistics") {
    Rng rng(6);
    Tensor x = randt({5, 16}, rng, 2.0f);
    Tensor y = layer_norm(x, Tensor(), Tensor());
    for (int r = 0; r < 5; ++r) {
        double mu = 0.0, var = 0.0;
        for (int c = 0; c < 16; ++c) mu += y.data()[r * 16 + c];
        mu /= 16;
        for (int c = 0; c < 16; ++c) {
            double d = y.data()[r * 16 + c] - mu;
            var += d * d;
        }
        var /= 16;
        CHECK(std::abs(mu) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("cross entropy of a certain correct prediction is zero") {
    // logits so extreme the softmax puts probability ~1 on the target
    Tensor logits = Tensor::from({1, 4}, {50.0f, -50.0f, -50.0f, -50.0f});
    Tensor l = cross_entropy(logits, {0});
    CHECK(l.item() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("sum of squares gradient") {
    Tensor w = Tensor::from({3}, {1.0f, 2.0f, 3.0f});
    w.set_requires_grad(true);
    GradTape tape;
    Tensor loss = sum_all(mul(w, w));
    tape.backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
    CHECK(w.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("constant loss leaves zero gradient") {
    Tensor w = Tensor::from({2}, {1.0f, -1.0f});
    w.set_requires_grad(true);
    Tensor c = Tensor::scalar(5.0f);
    c.set_requires_grad(true);
    GradTape tape;
    Tensor loss = mul(c, c);
    tape.backward(loss);
    CHECK(w.grad()[0] == 0.0f);
    CHECK(w.grad()[1] == 0.0f);
}

TEST_CASE("backward twice without new forward errors") {
    Tensor w = Tensor::from({2}, {1.0f, 2.0f});
    w.set_requires_grad(true);
    GradTape tape;
    Tensor loss = sum_all(mul(w, w));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("per-primitive gradients match central finite differences") {
    Rng rng(77);

    SUBCASE("add with broadcasting") {
        Tensor a = randt({3, 4}, rng), b = randt({4}, rng), w = randt({3, 4}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(add(a, b), w)); }, {a, b}) < 1e-3);
    }
    SUBCASE("sub") {
        Tensor a = randt({2, 3}, rng), b = randt({2, 3}, rng), w = randt({2, 3}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(sub(a, b), w)); }, {a, b}) < 1e-3);
    }
    SUBCASE("mul with rank-3 broadcast") {
        Tensor a = randt({2, 3, 4}, rng), b = randt({1, 3, 4}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(a, b)); }, {a, b}) < 1e-3);
    }
    SUBCASE("matmul 2d") {
        Tensor a = randt({3, 5}, rng, 0.5f), b = randt({5, 2}, rng, 0.5f);
        Tensor w = randt({3, 2}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(matmul(a, b), w)); }, {a, b}) < 1e-3);
    }
    SUBCASE("matmul batched") {
        Tensor a = randt({2, 3, 4}, rng, 0.5f), b = randt({2, 4, 3}, rng, 0.5f);
        CHECK(fd_max_rel_err([&] { return mean_all(matmul(a, b)); }, {a, b}) < 1e-3);
    }
    SUBCASE("transpose") {
        Tensor a = randt({2, 3, 4}, rng), w = randt({2, 4, 3}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(transpose(a, 1, 2), w)); }, {a}) < 1e-3);
    }
    SUBCASE("reshape") {
        Tensor a = randt({2, 6}, rng), w = randt({3, 4}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(reshape(a, {3, 4}), w)); }, {a}) < 1e-3);
    }
    SUBCASE("softmax") {
        Tensor a = randt({3, 5}, rng), w = randt({3, 5}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(softmax(a), w)); }, {a}) < 1e-3);
    }
    SUBCASE("layer norm with affine") {
        Tensor a = randt({4, 8}, rng), g = randt({8}, rng, 0.5f), b = randt({8}, rng);
        Tensor w = randt({4, 8}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(layer_norm(a, g, b), w)); }, {a, g, b}) <
              1e-3);
    }
    SUBCASE("rms norm") {
        Tensor a = randt({3, 6}, rng), w = randt({3, 6}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(rms_norm(a), w)); }, {a}) < 1e-3);
    }
    SUBCASE("gelu") {
        Tensor a = randt({2, 7}, rng), w = randt({2, 7}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(gelu(a), w)); }, {a}) < 1e-3);
    }
    SUBCASE("silu") {
        Tensor a = randt({11}, rng), w = randt({11}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(silu(a), w)); }, {a}) < 1e-3);
    }
    SUBCASE("tanh") {
        Tensor a = randt({6}, rng), w = randt({6}, rng);
        CHECK(fd_max_rel_err([&] { return sum_all(mul(tanh_act(a), w)); }, {a}) < 1e-3);
    }
    SUBCASE("embedding") {
        Tensor table = randt({5, 4}, rng);
        Tensor w = randt({3, 4}, rng);
        std::vector<int> ids{4, 0, 4};
        CHECK(fd_max_rel_err([&] { return sum_all(mul(embedding(table, ids), w)); }, {table}) <
              1e-3);
    }
    SUBCASE("cross entropy") {
        Tensor logits = randt({4, 6}, rng);
        std::vector<int> targets{1, 5, -1, 0};
        CHECK(fd_max_rel_err([&] { return cross_entropy(logits, targets); }, {logits}) < 1e-3);
    }
    SUBCASE("mse") {
        Tensor a = randt({3, 4}, rng), b = randt({3, 4}, rng);
        CHECK(fd_max_rel_err([&] { return mse(a, b); }, {a, b}) < 1e-3);
    }
    SUBCASE("concat and narrow") {
        Tensor a = randt({2, 3}, rng), b = randt({2, 2}, rng), w = randt({2, 4}, rng);
        CHECK(fd_max_rel_err(
                  [&] {
                      Tensor cat = concat({a, b}, 1);
                      return sum_all(mul(narrow(cat, 1, 1, 4), w));
                  },
                  {a, b}) < 1e-3);
    }
    SUBCASE("rope") {
        Tensor x = randt({2, 3, 4}, rng), w = randt({2, 3, 4}, rng);
        std::vector<int> pos{0, 5, 9};
        CHECK(fd_max_rel_err([&] { return sum_all(mul(rope(x, pos), w)); }, {x}) < 1e-3);
    }
    SUBCASE("scale and add_scalar") {
        Tensor a = randt({5}, rng), w = randt({5}, rng);
        CHECK(fd_max_rel_err(
                  [&] { return sum_all(mul(add_scalar(scale(a, -1.7f), 0.3f), w)); }, {a}) <
              1e-3);
    }
}

TEST_CASE("three layer mlp matches finite differences") {
    Rng rng(123);
    Tensor x = randt({4, 6}, rng);
    Tensor w1 = randt({6, 8}, rng, 0.5f), b1 = randt({8}, rng, 0.1f);
    Tensor w2 = randt({8, 8}, rng, 0.5f), b2 = randt({8}, rng, 0.1f);
    Tensor w3 = randt({8, 4}, rng, 0.5f), b3 = randt({4}, rng, 0.1f);
    Tensor target = randt({4, 4}, rng);
    auto forward = [&] {
        Tensor h1 = gelu(add(matmul(x, w1), b1));
        Tensor h2 = silu(add(matmul(h1, w2), b2));
        Tensor out = add(matmul(h2, w3), b3);
        return mse(out, target);
    };
    CHECK(fd_max_rel_err(forward, {w1, b1, w2, b2, w3, b3, x}) < 1e-3);
}

TEST_CASE("forward determinism is bit exact") {
    auto run = [] {
        Rng rng(9);
        Tensor a = Tensor::randn({8, 8}, rng);
        Tensor b = Tensor::randn({8, 8}, rng);
        return softmax(matmul(gelu(a), b)).values();
    };
    auto v1 = run();
    auto v2 = run();
    REQUIRE(v1.size() == v2.size());
    for (size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 4});
    try {
        add(a, b);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,4]") != std::string::npos);
    }
}

TEST_CASE("non-finite output names the primitive") {
    Tensor big = Tensor::full({4}, 3.0e38f);
    try {
        add(big, big);
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
}

TEST_CASE("rope is norm preserving") {
    Rng rng(31);
    Tensor x = Tensor::randn({2, 5, 8}, rng);
    Tensor y = rope(x, {3, 1, 4, 1, 5});
    double nx = 0.0, ny = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        nx += static_cast<double>(x.data()[i]) * x.data()[i];
        ny += static_cast<double>(y.data()[i]) * y.data()[i];
    }
    CHECK(nx == doctest::Approx(ny).epsilon(1e-5));
}

TEST_SUITE_END();
