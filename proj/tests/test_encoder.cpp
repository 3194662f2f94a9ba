#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ieces/encoder.hpp"
#include "ieces/rng.hpp"

using namespace ieces;

namespace {

// independent shape-sum oracle for the default architecture
std::size_t expected_default_count() {
    const int c1 = 16, c2 = 32, ib = 16, p3a = 96, p3b = 128, code = 256;
    std::size_t n = 0;
    n += static_cast<std::size_t>(c1) * 3 * 3 * 3 + c1;          // part 1 conv 1
    n += static_cast<std::size_t>(c2) * c1 * 3 * 3 + c2;         // part 1 conv 2
    n += static_cast<std::size_t>(ib) * c2 * 1 * 1 + ib;         // branch 1
    n += static_cast<std::size_t>(ib) * c2 * 1 * 1 + ib;         // branch 2: 1x1
    n += static_cast<std::size_t>(ib) * ib * 1 * 3 + ib;         // branch 2: 1x3
    n += static_cast<std::size_t>(ib) * ib * 3 * 1 + ib;         // branch 2: 3x1
    n += static_cast<std::size_t>(ib) * c2 * 1 * 1 + ib;         // branch 3: 1x1
    n += static_cast<std::size_t>(ib) * ib * 1 * 7 + ib;         // branch 3: 1x7
    n += static_cast<std::size_t>(ib) * ib * 7 * 1 + ib;         // branch 3: 7x1
    n += static_cast<std::size_t>(ib) * c2 * 1 * 1 + ib;         // branch 4: 1x1
    n += static_cast<std::size_t>(p3a) * 4 * ib * 3 * 3 + p3a;   // part 3 conv 1
    n += static_cast<std::size_t>(p3b) * p3a * 3 * 3 + p3b;      // part 3 conv 2
    n += static_cast<std::size_t>(code) * (p3b * 6 * 6) + code;  // final linear
    return n;
}

std::vector<double> random_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> px(static_cast<std::size_t>(3) * size * size);
    for (auto& v : px) v = rng.uniform();
    return px;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig bad;
    bad.part1_c1 = 0;
    CHECK_THROWS(bad.validate());
    bad = EncoderConfig{};
    bad.input_size = 50;  // three halvings would not land on an integer grid
    CHECK_THROWS(bad.validate());
    CHECK_NOTHROW(EncoderConfig{}.validate());

    const auto round = EncoderConfig::deserialize(EncoderConfig{}.serialize());
    CHECK(round == EncoderConfig{});
}

TEST_CASE("default parameter count is exact and within the lightweight budget") {
    auto params = build_encoder(EncoderConfig{}, 1);
    const auto count = param_count(params);
    CHECK(count == expected_default_count());
    CHECK(count >= 1000000);
    CHECK(count <= 5000000);
}

TEST_CASE("param_count on degenerate sets") {
    EncoderParams empty;
    CHECK(param_count(empty) == 0);
    EncoderParams one;
    one.tensors["w"] = Value::make({2, 3});
    CHECK(param_count(one) == 6);
}

TEST_CASE("same seed gives bit-identical parameters, biases start at zero") {
    auto a = build_encoder(EncoderConfig{}, 42);
    auto b = build_encoder(EncoderConfig{}, 42);
    auto c = build_encoder(EncoderConfig{}, 43);
    REQUIRE(a.tensors.size() == b.tensors.size());
    bool differs_from_c = false;
    for (const auto& [name, v] : a.tensors) {
        CHECK(v->data == b.tensors.at(name)->data);
        if (v->data != c.tensors.at(name)->data) differs_from_c = true;
        if (name.size() > 2 && name.substr(name.size() - 2) == ".b")
            for (double x : v->data) CHECK(x == 0.0);
    }
    CHECK(differs_from_c);
}

TEST_CASE("encode returns a code of the configured length, deterministically") {
    EncoderConfig cfg;
    auto params = build_encoder(cfg, 5);
    const auto img = random_image(cfg.input_size, 10);
    const auto code1 = encode(params, cfg, img);
    const auto code2 = encode(params, cfg, img);
    CHECK(static_cast<int>(code1.size()) == cfg.code_length);
    CHECK(code1 == code2);
    for (double v : code1) CHECK(std::isfinite(v));
}

TEST_CASE("all-zero image maps to the bias-propagated constant") {
    EncoderConfig cfg;
    auto params = build_encoder(cfg, 5);
    std::vector<double> zeros(static_cast<std::size_t>(3) * cfg.input_size * cfg.input_size, 0.0);
    const auto a = encode(params, cfg, zeros);
    const auto b = encode(params, cfg, zeros);
    CHECK(a == b);
    // with zero biases and zero input every pre-linear activation is zero
    const auto& fc_b = params.tensors.at("p3.fc.b")->data;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(fc_b[i]));
}

TEST_CASE("wrong input shape is rejected") {
    EncoderConfig cfg;
    auto params = build_encoder(cfg, 5);
    CHECK_THROWS(encode(params, cfg, std::vector<double>(100, 0.0)));
}

TEST_CASE("weight sharing: both branches produce identical codes from one param set") {
    EncoderConfig cfg;
    auto params = build_encoder(cfg, 8);
    const auto img = random_image(cfg.input_size, 3);
    const auto sample_branch = encode(params, cfg, img);
    const auto template_branch = encode(params, cfg, img);
    CHECK(sample_branch == template_branch);  // bitwise
}

TEST_CASE("reduced encoder end-to-end gradient matches finite differences") {
    FloatModeGuard guard(FloatMode::f64);
    auto cfg = reduced_encoder_config();
    auto params = build_encoder(cfg, 7);
    Rng rng(3);
    auto img = Value::make({3, cfg.input_size, cfg.input_size}, true);
    for (auto& v : img->data) v = rng.uniform();
    img->requires_grad = true;
    const double err = grad_check(
        [&](const ValuePtr& p) { return sum_squares(encode_value(params, cfg, p)); }, img, 1e-5);
    CHECK(err <= 1e-3);
}

TEST_CASE("encoder invocation counters") {
    EncoderConfig cfg;
    auto params = build_encoder(cfg, 2);
    const auto img = random_image(cfg.input_size, 1);
    reset_encoder_counters();
    for (int i = 0; i < 3; ++i) (void)encode(params, cfg, img);
    CHECK(encoder_invocations() == 3);
    CHECK(template_encoder_invocations() == 0);
    count_template_invocation();
    CHECK(template_encoder_invocations() == 1);
    reset_encoder_counters();
    CHECK(encoder_invocations() == 0);
}
