#pragma once

// The trainable bundle: document encoder, extractor head, coherence
// discriminator and the optional pretrained converter.

#include "cohext/discriminator.hpp"
#include "cohext/encoder.hpp"
#include "cohext/extractor.hpp"
#include "cohext/merging.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace cohext {

struct ModelConfig {
    encoder::EncoderConfig encoder;
    extractor::HeadConfig head;
    discriminator::DiscriminatorConfig discriminator;
    merging::ConverterConfig converter;
    bool with_converter{false};

    // Fills dependent widths (head and discriminator input) from the encoder.
    void resolve();
    void validate() const;
};

using WeightMap = std::map<std::string, ag::Matrix>;

struct Model {
    ModelConfig config;
    encoder::Encoder encoder;
    extractor::ExtractorHead head;
    discriminator::CoherenceDiscriminator discriminator;
    std::optional<merging::Converter> converter;

    static Model create(ModelConfig config, std::uint64_t seed);

    [[nodiscard]] nn::ParamList encoder_params() const;
    [[nodiscard]] nn::ParamList head_params() const;
    [[nodiscard]] nn::ParamList discriminator_params() const;
    [[nodiscard]] nn::ParamList converter_params() const;
    // Encoder followed by head.
    [[nodiscard]] nn::ParamList extractor_params() const;
    [[nodiscard]] nn::ParamList all_params() const;

    [[nodiscard]] WeightMap snapshot() const;
    // Every tensor present in `weights` must exist with the same shape; missing
    // tensors keep their current values unless `require_all`.
    void load(const WeightMap& weights, bool require_all = false);
};

}  // namespace cohext
