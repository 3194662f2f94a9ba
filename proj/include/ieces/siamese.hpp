#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "ieces/dataset.hpp"
#include "ieces/encoder.hpp"

namespace ieces {

enum class TemplateMode { template_code, prototype_ema };

struct SiameseConfig {
    double margin = 6.25;   // squared-distance units
    double alpha = 0.1;
    int negatives_per_sample = 1;
    TemplateMode mode = TemplateMode::template_code;
    double ema_decay = 0.99;

    void validate() const;
};

struct SamplePair {
    ValuePtr sample_code;      // differentiable branch
    ValuePtr template_code;    // constant (stop-gradient) branch
    int gamma = 0;             // 0: same class, 1: different class
};

// One standard code per class, indexed 0..C-1.
struct TemplateCodebook {
    std::vector<FeatureCode> codes;

    int class_count() const { return static_cast<int>(codes.size()); }
    const FeatureCode& at(int cls) const;
};

double distance(const FeatureCode& a, const FeatureCode& b);

// Piecewise contrastive loss on the raw distance, margin in D^2 units.
double contrastive_loss(double dw, int gamma, double m);

// Same loss as a differentiable graph node; dsq is the squared distance.
ValuePtr contrastive_loss_value(const ValuePtr& dsq, int gamma, double m);

// Per batch entry: one positive pair plus k uniformly drawn negatives.
std::vector<SamplePair> pair_batch(const std::vector<std::pair<ValuePtr, int>>& batch,
                                   const TemplateCodebook& codebook, int k, std::uint64_t seed);

// Encodes every class template with gradient tracking disabled.
TemplateCodebook encode_templates(const EncoderParams& params, const EncoderConfig& config,
                                  const TemplateSet& templates);

// Prototype-expectation mode: EMA pull of one class code toward a sample code.
void update_prototypes_ema(TemplateCodebook& codebook, int cls, const FeatureCode& sample_code,
                           double decay);

double combined_loss(double l_sim, double l_class, double alpha);

}  // namespace ieces
