#pragma once

// Token-level document encoder producing one vector per sentence, read at the
// sentence-start marker ([CLS]) that prefixes every sentence.

#include "cohext/corpus.hpp"
#include "cohext/nn.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace cohext::encoder {

struct EncoderConfig {
    int d_model{64};
    int n_layers{2};
    int n_heads{4};
    int ff_dim{0};  // 0 selects 4 * d_model
    // Content-token budget; the position table covers max_tokens content tokens
    // plus one marker per sentence.
    int max_tokens{512};
    int vocab_size{0};
    double dropout{0.0};
    bool segment_embeddings{true};
    // Sinusoidal initialisation scale for the learned position table; 0 keeps
    // the random normal initialisation.
    double position_init_scale{1.0};

    [[nodiscard]] int feed_forward_dim() const { return ff_dim > 0 ? ff_dim : 4 * d_model; }
    [[nodiscard]] int max_positions() const { return 2 * max_tokens; }
    void validate() const;
};

struct SentenceEmbeddings {
    ag::Var vectors;            // rows x d; padded rows are exactly zero
    std::vector<uint8_t> mask;  // 1 = real sentence

    [[nodiscard]] int rows() const { return static_cast<int>(mask.size()); }
    [[nodiscard]] int real_count() const;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& config, std::mt19937_64& rng);

    // The document must be indexed and truncated to config().max_tokens.
    // pad_to > size() appends zero rows with mask 0. dropout_rng == nullptr
    // runs without dropout.
    [[nodiscard]] SentenceEmbeddings encode(const corpus::Document& doc, int pad_to = 0,
                                            std::mt19937_64* dropout_rng = nullptr) const;

    void collect(nn::ParamList& out) const;
    [[nodiscard]] const EncoderConfig& config() const { return config_; }

private:
    EncoderConfig config_;
    ag::Var token_embedding_;
    ag::Var position_embedding_;
    ag::Var segment_embedding_;
    nn::LayerNorm embedding_norm_;
    nn::TransformerStack stack_;
};

}  // namespace cohext::encoder
