#include "ieces/siamese.hpp"

#include <cmath>
#include <stdexcept>

#include "ieces/rng.hpp"

namespace ieces {

void SiameseConfig::validate() const {
    if (margin <= 0.0) throw std::invalid_argument("siamese config: margin must be > 0");
    if (alpha < 0.0) throw std::invalid_argument("siamese config: alpha must be >= 0");
    if (negatives_per_sample < 1)
        throw std::invalid_argument("siamese config: k must be >= 1");
    if (ema_decay <= 0.0 || ema_decay >= 1.0)
        throw std::invalid_argument("siamese config: ema decay must be in (0,1)");
}

const FeatureCode& TemplateCodebook::at(int cls) const {
    if (cls < 0 || cls >= class_count())
        throw std::invalid_argument("codebook: unknown class " + std::to_string(cls));
    return codes[cls];
}

double distance(const FeatureCode& a, const FeatureCode& b) {
    if (a.size() != b.size()) throw std::invalid_argument("distance: code length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double contrastive_loss(double dw, int gamma, double m) {
    if (gamma != 0 && gamma != 1) throw std::invalid_argument("contrastive_loss: gamma not in {0,1}");
    if (dw < 0.0) throw std::invalid_argument("contrastive_loss: distance must be >= 0");
    if (m <= 0.0) throw std::invalid_argument("contrastive_loss: margin must be > 0");
    const double dsq = dw * dw;
    if (gamma == 0) return dsq;
    return dsq > m ? 0.0 : m - dsq;
}

ValuePtr contrastive_loss_value(const ValuePtr& dsq, int gamma, double m) {
    if (gamma != 0 && gamma != 1) throw std::invalid_argument("contrastive_loss: gamma not in {0,1}");
    if (gamma == 0) return dsq;
    // max(0, m - D^2); relu's zero subgradient at the kink matches the
    // hinge-inactive convention.
    return relu(scale_add(dsq, -1.0, m));
}

std::vector<SamplePair> pair_batch(const std::vector<std::pair<ValuePtr, int>>& batch,
                                   const TemplateCodebook& codebook, int k, std::uint64_t seed) {
    const int c = codebook.class_count();
    if (k < 1) throw std::invalid_argument("pair_batch: k must be >= 1");
    if (c < k + 1) throw std::invalid_argument("pair_batch: codebook needs at least k+1 classes");

    std::vector<SamplePair> pairs;
    pairs.reserve(batch.size() * (1 + static_cast<std::size_t>(k)));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& [code, cls] = batch[i];
        if (cls < 0 || cls >= c)
            throw std::invalid_argument("pair_batch: no template for class " + std::to_string(cls));
        auto own = Value::make({static_cast<int>(codebook.at(cls).size())}, codebook.at(cls));
        pairs.push_back({code, own, 0});

        // k distinct negative classes, uniform over the other C-1.
        Rng rng(mix_seed(seed, 0x9a17, i));
        std::vector<int> others;
        others.reserve(c - 1);
        for (int j = 0; j < c; ++j)
            if (j != cls) others.push_back(j);
        for (int n = 0; n < k; ++n) {
            const auto pick = n + static_cast<int>(rng.below(others.size() - n));
            std::swap(others[n], others[pick]);
            auto neg = Value::make({static_cast<int>(codebook.at(others[n]).size())},
                                   codebook.at(others[n]));
            pairs.push_back({code, neg, 1});
        }
    }
    return pairs;
}

TemplateCodebook encode_templates(const EncoderParams& params, const EncoderConfig& config,
                                  const TemplateSet& templates) {
    TemplateCodebook book;
    book.codes.reserve(templates.images.size());
    NoGradGuard ng;
    for (const auto& img : templates.images) {
        if (!img.valid_shape())
            throw std::invalid_argument("encode_templates: malformed template image");
        count_template_invocation();
        auto v = Value::make({kImageChannels, config.input_size, config.input_size}, img.pixels);
        book.codes.push_back(encode_value(params, config, v)->data);
    }
    return book;
}

void update_prototypes_ema(TemplateCodebook& codebook, int cls, const FeatureCode& sample_code,
                           double decay) {
    if (decay <= 0.0 || decay >= 1.0)
        throw std::invalid_argument("update_prototypes_ema: decay must be in (0,1)");
    if (cls < 0 || cls >= codebook.class_count())
        throw std::invalid_argument("update_prototypes_ema: unknown class " + std::to_string(cls));
    auto& proto = codebook.codes[cls];
    if (proto.size() != sample_code.size())
        throw std::invalid_argument("update_prototypes_ema: code length mismatch");
    for (std::size_t i = 0; i < proto.size(); ++i)
        proto[i] = decay * proto[i] + (1.0 - decay) * sample_code[i];
}

double combined_loss(double l_sim, double l_class, double alpha) {
    return alpha * l_sim + l_class;
}

}  // namespace ieces
