#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ieces/tensor.hpp"

namespace ieces {

// Traffic-sign crop, 3 x 48 x 48, values in [0,1].
constexpr int kImageSize = 48;
constexpr int kImageChannels = 3;

struct EncoderConfig {
    int input_size = kImageSize;
    int part1_c1 = 16;           // first 3x3 conv width
    int part1_c2 = 32;           // second 3x3 conv width
    int inception_branch = 16;   // per-branch width in the inception block
    int part3_c1 = 96;
    int part3_c2 = 128;
    int code_length = 256;

    void validate() const;
    std::vector<double> serialize() const;
    static EncoderConfig deserialize(const std::vector<double>& v);
    bool operator==(const EncoderConfig&) const = default;
};

// Narrow widths for finite-difference verification of the full pipeline.
EncoderConfig reduced_encoder_config();

// Named parameter set; names are stable and unique, iteration order sorted.
struct EncoderParams {
    std::map<std::string, ValuePtr> tensors;

    ValuePtr& at(const std::string& name);
    const ValuePtr& at(const std::string& name) const;
};

using FeatureCode = std::vector<double>;

EncoderParams build_encoder(const EncoderConfig& config, std::uint64_t seed);

std::size_t param_count(const EncoderParams& params);

// Forward pass as a differentiable graph; `image` is a 3 x 48 x 48 Value.
ValuePtr encode_value(const EncoderParams& params, const EncoderConfig& config,
                      const ValuePtr& image);

// Plain inference entry point: pixels (CHW, length 3*48*48) to a code vector.
// Counts one encoder invocation for the single-branch check.
FeatureCode encode(const EncoderParams& params, const EncoderConfig& config,
                   const std::vector<double>& pixels);

// Instrumentation for the single-branch inference check.
long encoder_invocations();
long template_encoder_invocations();
void reset_encoder_counters();
void count_template_invocation();

// Fan-in scaled uniform draws in [-sqrt(6/fan_in), sqrt(6/fan_in)].
void init_uniform(ValuePtr& v, int fan_in, std::uint64_t seed);

}  // namespace ieces
