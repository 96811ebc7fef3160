#include "cohext/model.hpp"

#include "cohext/errors.hpp"

#include <random>

namespace cohext {

void ModelConfig::resolve() {
    head.d_model = encoder.d_model;
    discriminator.input_dim = encoder.d_model;
}

void ModelConfig::validate() const {
    encoder.validate();
    head.validate();
    discriminator.validate();
    if (head.d_model != encoder.d_model || discriminator.input_dim != encoder.d_model) {
        throw ValidationError("model: head and discriminator input widths must equal the encoder width");
    }
    if (with_converter) {
        converter.validate();
    }
}

Model Model::create(ModelConfig config, std::uint64_t seed) {
    config.resolve();
    config.validate();
    Model model;
    model.config = config;
    // Separate streams so enabling the converter leaves the other weights unchanged.
    std::mt19937_64 encoder_rng(seed);
    std::mt19937_64 head_rng(seed + 0x9e3779b97f4a7c15ULL);
    std::mt19937_64 disc_rng(seed + 2 * 0x9e3779b97f4a7c15ULL);
    model.encoder = encoder::Encoder(config.encoder, encoder_rng);
    model.head = extractor::ExtractorHead(config.head, head_rng);
    model.discriminator = discriminator::CoherenceDiscriminator(config.discriminator, disc_rng);
    if (config.with_converter) {
        std::mt19937_64 conv_rng(seed + 3 * 0x9e3779b97f4a7c15ULL);
        model.converter.emplace(config.converter, conv_rng);
    }
    return model;
}

nn::ParamList Model::encoder_params() const {
    nn::ParamList out;
    encoder.collect(out);
    return out;
}

nn::ParamList Model::head_params() const {
    nn::ParamList out;
    head.collect(out);
    return out;
}

nn::ParamList Model::discriminator_params() const {
    nn::ParamList out;
    discriminator.collect(out);
    return out;
}

nn::ParamList Model::converter_params() const {
    nn::ParamList out;
    if (converter) {
        converter->collect(out);
    }
    return out;
}

nn::ParamList Model::extractor_params() const {
    nn::ParamList out = encoder_params();
    head.collect(out);
    return out;
}

nn::ParamList Model::all_params() const {
    nn::ParamList out = extractor_params();
    discriminator.collect(out);
    if (converter) {
        converter->collect(out);
    }
    return out;
}

WeightMap Model::snapshot() const {
    WeightMap out;
    for (const auto& p : all_params()) {
        out.emplace(p.name, p.var.value());
    }
    return out;
}

void Model::load(const WeightMap& weights, bool require_all) {
    for (auto& p : all_params()) {
        const auto it = weights.find(p.name);
        if (it == weights.end()) {
            if (require_all) {
                throw ValidationError("checkpoint is missing tensor '" + p.name + "'");
            }
            continue;
        }
        if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
            throw ValidationError("tensor '" + p.name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                                  std::to_string(it->second.cols()) + ", model expects " +
                                  std::to_string(p.var.rows()) + "x" + std::to_string(p.var.cols()));
        }
        p.var.mutable_value() = it->second;
    }
}

}  // namespace cohext
