#pragma once

#include <cstdint>
#include <vector>

#include "ieces/encoder.hpp"

namespace ieces {

struct ClassifierParams {
    ValuePtr weight;   // C x code_length
    ValuePtr bias;     // C

    int class_count() const { return weight->shape[0]; }
    int code_length() const { return weight->shape[1]; }
};

struct Prediction {
    int class_id = 0;
    std::vector<double> probabilities;
    double max_probability = 0.0;
};

ClassifierParams build_classifier(int classes, int code_length, std::uint64_t seed);

// Z = w * code + b, as a differentiable graph node.
ValuePtr classify_logits(const ClassifierParams& params, const ValuePtr& code);

Prediction predict(const ClassifierParams& params, const FeatureCode& code);

// Cross-entropy of softmax(Z) against a one-hot target.
ValuePtr class_loss(const ClassifierParams& params, const ValuePtr& code, int target);

}  // namespace ieces
