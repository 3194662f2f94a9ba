#include "ieces/encoder.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "ieces/rng.hpp"

namespace ieces {

namespace {

std::atomic<long> g_encode_calls{0};
std::atomic<long> g_template_calls{0};

ValuePtr make_param(EncoderParams& p, const std::string& name, std::vector<int> shape,
                    int fan_in, std::uint64_t seed, bool zero = false) {
    auto v = Value::make(std::move(shape), true);
    if (!zero) init_uniform(v, fan_in, seed);
    p.tensors[name] = v;
    return v;
}

// conv + bias pair; bias starts at zero.
void add_conv(EncoderParams& p, const std::string& name, int co, int ci, int kh, int kw,
              std::uint64_t seed) {
    make_param(p, name + ".w", {co, ci, kh, kw}, ci * kh * kw, seed);
    make_param(p, name + ".b", {co}, 0, 0, /*zero=*/true);
}

ValuePtr conv_relu(const EncoderParams& p, const std::string& name, const ValuePtr& x,
                   int pad) {
    return relu(conv2d(x, p.at(name + ".w"), p.at(name + ".b"), 1, pad));
}

// 2x2 stride-1 pool that keeps the spatial size (bottom/right pad by one).
ValuePtr pool2_same(const ValuePtr& x) { return maxpool2d(x, 2, 1, 0, 0, 1, 1); }

}  // namespace

void EncoderConfig::validate() const {
    if (input_size < 8) throw std::invalid_argument("encoder config: input size too small");
    if (input_size % 8 != 0)
        throw std::invalid_argument("encoder config: input size must be divisible by 8");
    if (part1_c1 < 1 || part1_c2 < 1 || inception_branch < 1 || part3_c1 < 1 || part3_c2 < 1)
        throw std::invalid_argument("encoder config: channel widths must be positive");
    if (code_length < 1) throw std::invalid_argument("encoder config: code length must be >= 1");
}

std::vector<double> EncoderConfig::serialize() const {
    return {static_cast<double>(input_size),  static_cast<double>(part1_c1),
            static_cast<double>(part1_c2),    static_cast<double>(inception_branch),
            static_cast<double>(part3_c1),    static_cast<double>(part3_c2),
            static_cast<double>(code_length)};
}

EncoderConfig EncoderConfig::deserialize(const std::vector<double>& v) {
    if (v.size() != 7) throw std::invalid_argument("encoder config: bad serialized length");
    EncoderConfig c;
    c.input_size = static_cast<int>(v[0]);
    c.part1_c1 = static_cast<int>(v[1]);
    c.part1_c2 = static_cast<int>(v[2]);
    c.inception_branch = static_cast<int>(v[3]);
    c.part3_c1 = static_cast<int>(v[4]);
    c.part3_c2 = static_cast<int>(v[5]);
    c.code_length = static_cast<int>(v[6]);
    c.validate();
    return c;
}

EncoderConfig reduced_encoder_config() {
    EncoderConfig c;
    c.input_size = 16;
    c.part1_c1 = 2;
    c.part1_c2 = 4;
    c.inception_branch = 2;
    c.part3_c1 = 4;
    c.part3_c2 = 4;
    c.code_length = 8;
    return c;
}

ValuePtr& EncoderParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

const ValuePtr& EncoderParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

void init_uniform(ValuePtr& v, int fan_in, std::uint64_t seed) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in < 1 ? 1 : fan_in));
    Rng rng(seed);
    for (double& x : v->data) x = rng.uniform(-a, a);
    v->finalize();
}

EncoderParams build_encoder(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderParams p;
    const int b = config.inception_branch;
    int layer = 0;
    auto s = [&]() { return mix_seed(seed, 0x5ec0de, layer++); };

    // Part 1: primary extraction
    add_conv(p, "p1.conv1", config.part1_c1, kImageChannels, 3, 3, s());
    add_conv(p, "p1.conv2", config.part1_c2, config.part1_c1, 3, 3, s());

    // Part 2: inception block with asymmetric kernels
    const int c2 = config.part1_c2;
    add_conv(p, "i.b1.1x1", b, c2, 1, 1, s());
    add_conv(p, "i.b2.1x1", b, c2, 1, 1, s());
    add_conv(p, "i.b2.1x3", b, b, 1, 3, s());
    add_conv(p, "i.b2.3x1", b, b, 3, 1, s());
    add_conv(p, "i.b3.1x1", b, c2, 1, 1, s());
    add_conv(p, "i.b3.1x7", b, b, 1, 7, s());
    add_conv(p, "i.b3.7x1", b, b, 7, 1, s());
    add_conv(p, "i.b4.1x1", b, c2, 1, 1, s());

    // Part 3: convolutional module down to the code
    const int cat = 4 * b;
    add_conv(p, "p3.conv1", config.part3_c1, cat, 3, 3, s());
    add_conv(p, "p3.conv2", config.part3_c2, config.part3_c1, 3, 3, s());
    const int spatial = config.input_size / 8;
    const int flat = config.part3_c2 * spatial * spatial;
    make_param(p, "p3.fc.w", {config.code_length, flat}, flat, s());
    make_param(p, "p3.fc.b", {config.code_length}, 0, 0, /*zero=*/true);
    return p;
}

std::size_t param_count(const EncoderParams& params) {
    std::size_t n = 0;
    for (const auto& [name, v] : params.tensors) n += v->size();
    return n;
}

ValuePtr encode_value(const EncoderParams& params, const EncoderConfig& config,
                      const ValuePtr& image) {
    if (image->shape != std::vector<int>{kImageChannels, config.input_size, config.input_size})
        throw std::invalid_argument("encode: image must be 3 x " +
                                    std::to_string(config.input_size) + " x " +
                                    std::to_string(config.input_size));

    // Part 1: two same-padded 3x3 convs, then a size-preserving 2x2 pool.
    auto x = conv_relu(params, "p1.conv1", image, 1);
    x = conv_relu(params, "p1.conv2", x, 1);
    x = pool2_same(x);

    // Part 2: four parallel branches, channel-concatenated.
    const int n = x->shape[1];
    // Same-padding for a 1xk kernel: widen the input, convolve valid.
    auto conv_1xk = [&](ValuePtr in, const std::string& name, int k) {
        in = zero_pad(in, n, n + k - 1);
        return relu(conv2d(in, params.at(name + ".w"), params.at(name + ".b"), 1, 0));
    };
    auto conv_kx1 = [&](ValuePtr in, const std::string& name, int k) {
        in = zero_pad(in, n + k - 1, n);
        return relu(conv2d(in, params.at(name + ".w"), params.at(name + ".b"), 1, 0));
    };
    auto b1 = conv_relu(params, "i.b1.1x1", x, 0);
    auto b2 = conv_relu(params, "i.b2.1x1", x, 0);
    b2 = conv_1xk(b2, "i.b2.1x3", 3);
    b2 = conv_kx1(b2, "i.b2.3x1", 3);
    auto b3 = conv_relu(params, "i.b3.1x1", x, 0);
    b3 = conv_1xk(b3, "i.b3.1x7", 7);
    b3 = conv_kx1(b3, "i.b3.7x1", 7);
    auto b4 = maxpool2d(x, 3, 1, 1);
    b4 = conv_relu(params, "i.b4.1x1", b4, 0);
    x = concat_channels({b1, b2, b3, b4});

    // Part 3: pool / conv / pool / conv / pool / flatten / linear.
    x = maxpool2d(x, 2, 2, 0);
    x = conv_relu(params, "p3.conv1", x, 1);
    x = maxpool2d(x, 2, 2, 0);
    x = conv_relu(params, "p3.conv2", x, 1);
    x = maxpool2d(x, 2, 2, 0);
    x = flatten(x);
    return linear(x, params.at("p3.fc.w"), params.at("p3.fc.b"));
}

FeatureCode encode(const EncoderParams& params, const EncoderConfig& config,
                   const std::vector<double>& pixels) {
    g_encode_calls.fetch_add(1, std::memory_order_relaxed);
    NoGradGuard ng;
    auto image = Value::make({kImageChannels, config.input_size, config.input_size}, pixels);
    auto code = encode_value(params, config, image);
    return code->data;
}

long encoder_invocations() { return g_encode_calls.load(); }
long template_encoder_invocations() { return g_template_calls.load(); }
void reset_encoder_counters() {
    g_encode_calls.store(0);
    g_template_calls.store(0);
}
void count_template_invocation() { g_template_calls.fetch_add(1, std::memory_order_relaxed); }

}  // namespace ieces
