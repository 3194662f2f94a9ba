#include "ieces/classifier.hpp"

#include <stdexcept>

#include "ieces/rng.hpp"

namespace ieces {

ClassifierParams build_classifier(int classes, int code_length, std::uint64_t seed) {
    if (classes < 1 || code_length < 1)
        throw std::invalid_argument("classifier: class count and code length must be positive");
    ClassifierParams p;
    p.weight = Value::make({classes, code_length}, true);
    init_uniform(p.weight, code_length, mix_seed(seed, 0xc1a55));
    p.bias = Value::make({classes}, true);
    return p;
}

ValuePtr classify_logits(const ClassifierParams& params, const ValuePtr& code) {
    if (code->shape != std::vector<int>{params.code_length()})
        throw std::invalid_argument("classify_logits: code length does not match weight columns");
    return linear(code, params.weight, params.bias);
}

Prediction predict(const ClassifierParams& params, const FeatureCode& code) {
    NoGradGuard ng;
    auto z = classify_logits(params, Value::make({static_cast<int>(code.size())}, code));
    auto p = softmax(z);
    Prediction out;
    out.probabilities = p->data;
    out.class_id = 0;
    out.max_probability = p->data[0];
    for (int i = 1; i < params.class_count(); ++i) {
        if (p->data[i] > out.max_probability) {  // strict: lowest index wins ties
            out.max_probability = p->data[i];
            out.class_id = i;
        }
    }
    return out;
}

ValuePtr class_loss(const ClassifierParams& params, const ValuePtr& code, int target) {
    if (target < 0 || target >= params.class_count())
        throw std::invalid_argument("class_loss: target class out of range");
    return cross_entropy(softmax(classify_logits(params, code)), target);
}

}  // namespace ieces
