#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ieces/rng.hpp"
#include "ieces/tensor.hpp"

using namespace ieces;

namespace {

ValuePtr random_value(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto v = Value::make(std::move(shape), true);
    for (auto& x : v->data) x = rng.uniform(lo, hi);
    v->requires_grad = true;
    return v;
}

}  // namespace

TEST_CASE("conv2d scalar kernel scales the input") {
    auto in = Value::make({1, 2, 2}, {1, 2, 3, 4});
    auto k = Value::make({1, 1, 1, 1}, std::vector<double>{2.0});
    auto b = Value::make({1}, std::vector<double>{0.0});
    auto out = conv2d(in, k, b, 1, 0);
    CHECK(out->shape == std::vector<int>{1, 2, 2});
    CHECK(out->data == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("conv2d delta kernel with same padding is the identity") {
    Rng rng(1);
    auto in = random_value({1, 5, 5}, rng);
    auto k = Value::make({1, 1, 3, 3});
    k->data[4] = 1.0;  // center tap
    auto b = Value::make({1}, std::vector<double>{0.0});
    auto out = conv2d(in, k, b, 1, 1);
    for (std::size_t i = 0; i < in->size(); ++i) CHECK(out->data[i] == doctest::Approx(in->data[i]));
}

TEST_CASE("conv2d output shape follows the floor formula") {
    auto in = Value::make({3, 11, 7});
    auto k = Value::make({5, 3, 3, 3});
    auto b = Value::make({5});
    auto out = conv2d(in, k, b, 2, 1);
    CHECK(out->shape == std::vector<int>{5, (11 + 2 - 3) / 2 + 1, (7 + 2 - 3) / 2 + 1});
}

TEST_CASE("conv2d rejects channel mismatch") {
    auto in = Value::make({2, 4, 4});
    auto k = Value::make({1, 3, 3, 3});
    auto b = Value::make({1});
    CHECK_THROWS(conv2d(in, k, b, 1, 0));
}

TEST_CASE("conv2d kernel gradient matches finite differences") {
    FloatModeGuard guard(FloatMode::f64);
    Rng rng(7);
    auto in = random_value({3, 5, 5}, rng);
    auto b = random_value({2}, rng);
    auto point = random_value({2, 3, 3, 3}, rng);
    const double err = grad_check(
        [&](const ValuePtr& k) { return sum_squares(conv2d(in, k, b, 1, 1)); }, point);
    CHECK(err <= 1e-4);
}

TEST_CASE("conv2d gradients for input and bias pass the oracle on 10 instances") {
    FloatModeGuard guard(FloatMode::f64);
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(mix_seed(11, s));
        auto k = random_value({2, 2, 3, 3}, rng);
        auto b = random_value({2}, rng);
        CHECK(grad_check([&](const ValuePtr& p) { return sum_squares(conv2d(p, k, b, 1, 1)); },
                         random_value({2, 6, 6}, rng)) <= 1e-4);
        auto in = random_value({2, 6, 6}, rng);
        CHECK(grad_check([&](const ValuePtr& p) { return sum_squares(conv2d(in, k, p, 1, 0)); },
                         random_value({2}, rng)) <= 1e-4);
    }
}

TEST_CASE("maxpool2d basics") {
    auto in = Value::make({1, 2, 2}, {1, 2, 3, 4});
    auto out = maxpool2d(in, 2, 2, 0);
    CHECK(out->shape == std::vector<int>{1, 1, 1});
    CHECK(out->data[0] == 4.0);

    auto flat = Value::make({1, 4, 4}, std::vector<double>(16, 3.5));
    auto pooled = maxpool2d(flat, 2, 2, 0);
    for (double v : pooled->data) CHECK(v == 3.5);

    CHECK_THROWS(maxpool2d(Value::make({1, 2, 2}), 5, 1, 0));
}

TEST_CASE("maxpool2d gradient matches finite differences on distinct entries") {
    FloatModeGuard guard(FloatMode::f64);
    auto point = Value::make({1, 4, 4}, true);
    for (int i = 0; i < 16; ++i) point->data[i] = i * 0.37 + ((i * 7) % 16) * 0.011;
    CHECK(grad_check([](const ValuePtr& p) { return sum_squares(maxpool2d(p, 2, 2, 0)); },
                     point) <= 1e-4);
}

TEST_CASE("maxpool2d backward hits only argmax positions, first occurrence on ties") {
    auto in = Value::make({1, 2, 2}, {4, 4, 1, 0}, true);
    in->requires_grad = true;
    auto loss = sum(maxpool2d(in, 2, 2, 0));
    backward(loss);
    CHECK(in->grad == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("zero_pad centers and preserves the sum") {
    FloatModeGuard guard(FloatMode::f64);
    auto in = Value::make({1, 1, 1}, std::vector<double>{5.0});
    auto out = zero_pad(in, 3, 3);
    CHECK(out->shape == std::vector<int>{1, 3, 3});
    CHECK(out->data[4] == 5.0);
    double s = 0.0;
    for (double v : out->data) s += v;
    CHECK(s == 5.0);

    Rng rng(2);
    auto same = random_value({2, 3, 3}, rng);
    CHECK(zero_pad(same, 3, 3)->data == same->data);
    CHECK_THROWS(zero_pad(same, 2, 3));
}

TEST_CASE("linear arithmetic and gradient") {
    auto in = Value::make({2}, {1, 2});
    auto w = Value::make({2, 2}, {1, 1, 0, 1});
    auto b = Value::make({2}, {0, 1});
    auto out = linear(in, w, b);
    CHECK(out->data == std::vector<double>{3, 3});

    auto eye = Value::make({2, 2}, {1, 0, 0, 1});
    auto zero = Value::make({2});
    CHECK(linear(in, eye, zero)->data == in->data);
    CHECK_THROWS(linear(Value::make({3}), w, b));

    FloatModeGuard guard(FloatMode::f64);
    Rng rng(3);
    auto w2 = random_value({4, 6}, rng);
    auto b2 = random_value({4}, rng);
    CHECK(grad_check([&](const ValuePtr& p) { return sum_squares(linear(p, w2, b2)); },
                     random_value({6}, rng)) <= 1e-4);
    auto in2 = random_value({6}, rng);
    CHECK(grad_check([&](const ValuePtr& p) { return sum_squares(linear(in2, p, b2)); },
                     random_value({4, 6}, rng)) <= 1e-4);
}

TEST_CASE("relu values and gradient") {
    auto in = Value::make({3}, {-1, 0, 2}, true);
    in->requires_grad = true;
    auto out = relu(in);
    CHECK(out->data == std::vector<double>{0, 0, 2});
    backward(sum(out));
    CHECK(in->grad == std::vector<double>{0, 0, 1});

    auto neg = Value::make({3}, {-1, -2, -3}, true);
    neg->requires_grad = true;
    backward(sum(relu(neg)));
    CHECK(neg->grad == std::vector<double>{0, 0, 0});

    FloatModeGuard guard(FloatMode::f64);
    auto point = Value::make({4}, {-0.9, -0.3, 0.4, 1.2}, true);
    CHECK(grad_check([](const ValuePtr& p) { return sum_squares(relu(p)); }, point) <= 1e-4);
}

TEST_CASE("softmax distribution properties") {
    auto uniform = softmax(Value::make({4}, {1, 1, 1, 1}));
    for (double v : uniform->data) CHECK(v == doctest::Approx(0.25));

    auto two = softmax(Value::make({2}, {0.0, std::log(2.0)}));
    CHECK(two->data[0] == doctest::Approx(1.0 / 3.0));
    CHECK(two->data[1] == doctest::Approx(2.0 / 3.0));

    Rng rng(4);
    auto logits = Value::make({6});
    for (auto& v : logits->data) v = rng.uniform(-3.0, 3.0);
    auto shifted = Value::make({6});
    for (int i = 0; i < 6; ++i) shifted->data[i] = logits->data[i] + 123.5;
    auto a = softmax(logits), b = softmax(shifted);
    double s = 0.0;
    for (int i = 0; i < 6; ++i) {
        CHECK(std::fabs(a->data[i] - b->data[i]) <= 1e-6);
        s += a->data[i];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cross entropy values and the softmax gradient identity") {
    auto onehot = Value::make({3}, {0, 1, 0});
    CHECK(cross_entropy(onehot, 1)->item() == doctest::Approx(0.0));
    auto uniform = Value::make({4}, {0.25, 0.25, 0.25, 0.25});
    CHECK(cross_entropy(uniform, 2)->item() == doctest::Approx(std::log(4.0)));
    CHECK_THROWS(cross_entropy(uniform, 4));

    FloatModeGuard guard(FloatMode::f64);
    auto logits = Value::make({5}, {0.3, -1.2, 0.8, 0.1, -0.4}, true);
    logits->requires_grad = true;
    auto p = softmax(logits);
    backward(cross_entropy(p, 2));
    for (int i = 0; i < 5; ++i) {
        const double expect = p->data[i] - (i == 2 ? 1.0 : 0.0);
        CHECK(std::fabs(logits->grad[i] - expect) <= 1e-6);
    }
}

TEST_CASE("concat_channels order and gradient split") {
    auto a = Value::make({1, 2, 2}, {1, 2, 3, 4}, true);
    auto b = Value::make({1, 2, 2}, {5, 6, 7, 8}, true);
    a->requires_grad = b->requires_grad = true;
    auto out = concat_channels({a, b});
    CHECK(out->shape == std::vector<int>{2, 2, 2});
    CHECK(out->data == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});

    CHECK(concat_channels({a})->data == a->data);
    CHECK_THROWS(concat_channels({a, Value::make({1, 3, 3})}));

    backward(sum_squares(out));
    for (int i = 0; i < 4; ++i) {
        CHECK(a->grad[i] == doctest::Approx(2.0 * a->data[i]));
        CHECK(b->grad[i] == doctest::Approx(2.0 * b->data[i]));
    }
}

TEST_CASE("backward basics") {
    auto x = Value::make({4}, {1, 2, 3, 4}, true);
    x->requires_grad = true;
    backward(sum(x));
    CHECK(x->grad == std::vector<double>{1, 1, 1, 1});

    auto s = Value::scalar(3.0, true);
    backward(mul_elem(s, s));
    CHECK(s->grad[0] == doctest::Approx(6.0));

    CHECK_THROWS(backward(Value::make({2})));
}

TEST_CASE("off-path leaves receive zero gradients") {
    auto used = Value::scalar(2.0, true);
    auto unused = Value::make({3}, true);
    unused->requires_grad = true;
    backward(mul_elem(used, used));
    CHECK(used->grad[0] == doctest::Approx(4.0));
    CHECK(unused->grad.empty());  // never entered the record at all
}

TEST_CASE("composed pipeline end to end against finite differences") {
    FloatModeGuard guard(FloatMode::f64);
    Rng rng(9);
    auto k = random_value({2, 1, 3, 3}, rng);
    auto kb = random_value({2}, rng);
    auto w = random_value({3, 8}, rng);
    auto b = random_value({3}, rng);
    auto point = random_value({1, 4, 4}, rng);
    const double err = grad_check(
        [&](const ValuePtr& p) {
            auto x = relu(conv2d(p, k, kb, 1, 0));
            x = flatten(x);
            return cross_entropy(softmax(linear(x, w, b)), 1);
        },
        point);
    CHECK(err <= 1e-4);
}

TEST_CASE("grad_check reference behaviors") {
    FloatModeGuard guard(FloatMode::f64);
    Rng rng(13);
    CHECK(grad_check([](const ValuePtr& p) { return sum(p); }, random_value({5}, rng)) <= 1e-9);
    // quadratic form: analytic gradient is 2x
    CHECK(grad_check([](const ValuePtr& p) { return sum_squares(p); }, random_value({5}, rng)) <=
          1e-6);
}

TEST_CASE("forward determinism within one floating mode") {
    Rng rng(21);
    auto in = random_value({2, 6, 6}, rng);
    auto k = random_value({3, 2, 3, 3}, rng);
    auto b = random_value({3}, rng);
    auto a1 = conv2d(in, k, b, 1, 1);
    auto a2 = conv2d(in, k, b, 1, 1);
    CHECK(a1->data == a2->data);
}

TEST_CASE("32-bit mode stores float-rounded values and widens exactly") {
    std::vector<double> raw = {0.1, 1.0 / 3.0, 2.7182818284590452};
    FloatModeGuard guard(FloatMode::f32);
    auto v = Value::make({3}, raw);
    for (int i = 0; i < 3; ++i)
        CHECK(v->data[i] == static_cast<double>(static_cast<float>(raw[i])));
}

TEST_CASE("stop-gradient scope produces constant nodes") {
    auto x = Value::make({3}, {1, 2, 3}, true);
    x->requires_grad = true;
    ValuePtr frozen;
    {
        NoGradGuard ng;
        frozen = relu(x);
    }
    CHECK_FALSE(frozen->requires_grad);
    CHECK(frozen->parents.empty());
    auto loss = sum(mul_elem(relu(x), frozen));
    backward(loss);
    // only the live branch contributes; frozen acts as fixed coefficients
    CHECK(x->grad == std::vector<double>{1, 2, 3});
}
