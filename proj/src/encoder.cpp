#include "cohext/encoder.hpp"

#include "cohext/errors.hpp"


namespace cohext::encoder {

void EncoderConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw ValidationError("encoder: d_model must be divisible by n_heads");
    }
    if (n_layers < 0) {
        throw ValidationError("encoder: n_layers must be non-negative");
    }
    if (max_tokens < 1) {
        throw ValidationError("encoder: max_tokens must be >= 1");
    }
    if (vocab_size < 5) {
        throw ValidationError("encoder: vocab_size must cover the special tokens");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ValidationError("encoder: dropout must lie in [0, 1)");
    }
    if (position_init_scale < 0.0) {
        throw ValidationError("encoder: position_init_scale must be non-negative");
    }
}

int SentenceEmbeddings::real_count() const {
    int count = 0;
    for (uint8_t m : mask) {
        count += m != 0 ? 1 : 0;
    }
    return count;
}

Encoder::Encoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    const int d = config_.d_model;
    token_embedding_ = ag::parameter(nn::normal_matrix(config_.vocab_size, d, 0.1, rng));
    position_embedding_ = ag::parameter(config_.position_init_scale > 0.0
                                            ? nn::sinusoidal_table(config_.max_positions(), d, config_.position_init_scale)
                                            : nn::normal_matrix(config_.max_positions(), d, 0.1, rng));
    segment_embedding_ = ag::parameter(nn::normal_matrix(2, d, 0.1, rng));
    embedding_norm_ = nn::LayerNorm(d);
    stack_ = nn::TransformerStack(config_.n_layers, d, config_.n_heads, config_.feed_forward_dim(), config_.dropout,
                                  rng);
}

SentenceEmbeddings Encoder::encode(const corpus::Document& doc, int pad_to, std::mt19937_64* dropout_rng) const {
    if (doc.sentences.empty()) {
        throw ValidationError("encode: document '" + doc.id + "' has no sentences");
    }
    std::vector<int> tokens;
    std::vector<int> segments;
    std::vector<int> markers;
    for (size_t s = 0; s < doc.sentences.size(); ++s) {
        const auto& sentence = doc.sentences[s];
        if (sentence.ids.size() != sentence.words.size()) {
            throw ValidationError("encode: document '" + doc.id + "' is not indexed");
        }
        markers.push_back(static_cast<int>(tokens.size()));
        tokens.push_back(corpus::Vocabulary::kCls);
        segments.push_back(static_cast<int>(s % 2));
        for (int id : sentence.ids) {
            if (id < 0 || id >= config_.vocab_size) {
                throw ValidationError("encode: token id " + std::to_string(id) + " outside vocabulary of size " +
                                      std::to_string(config_.vocab_size));
            }
            tokens.push_back(id);
            segments.push_back(static_cast<int>(s % 2));
        }
    }
    if (static_cast<int>(tokens.size()) > config_.max_positions()) {
        throw ValidationError("encode: document '" + doc.id + "' exceeds the position table; truncate it first");
    }
    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<int>(i);
    }

    ag::Var x = ag::add(ag::gather_rows(token_embedding_, tokens), ag::gather_rows(position_embedding_, positions));
    if (config_.segment_embeddings) {
        x = ag::add(x, ag::gather_rows(segment_embedding_, segments));
    }
    x = embedding_norm_.forward(x);
    if (dropout_rng != nullptr) {
        x = ag::dropout(x, config_.dropout, *dropout_rng);
    }
    x = stack_.forward(x, nullptr, nn::Mode::trainable, dropout_rng);

    SentenceEmbeddings out;
    const int n = doc.size();
    const int rows = std::max(n, pad_to);
    out.vectors = ag::pad_rows(ag::gather_rows(x, markers), rows);
    out.mask.assign(static_cast<size_t>(rows), 0);
    std::fill(out.mask.begin(), out.mask.begin() + n, 1);
    return out;
}

void Encoder::collect(nn::ParamList& out) const {
    out.push_back({"encoder.token_embedding", token_embedding_});
    out.push_back({"encoder.position_embedding", position_embedding_});
    out.push_back({"encoder.segment_embedding", segment_embedding_});
    embedding_norm_.collect("encoder.embedding_norm", out);
    stack_.collect("encoder.stack", out);
}

}  // namespace cohext::encoder
