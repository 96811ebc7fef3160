#include "cohext/extractor.hpp"

#include "cohext/errors.hpp"

#include <cmath>

namespace cohext::extractor {

void HeadConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw ValidationError("extractor head: d_model must be divisible by n_heads");
    }
    if (max_sentences < 1) {
        throw ValidationError("extractor head: max_sentences must be >= 1");
    }
}

Eigen::VectorXd ImportanceScores::probs() const {
    return logits.value().col(0).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
}

Eigen::VectorXd ImportanceScores::pi() const {
    Eigen::VectorXd p = log_pi.value().col(0);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        p(i) = mask[static_cast<size_t>(i)] != 0 ? std::exp(p(i)) : 0.0;
    }
    return p;
}

ExtractorHead::ExtractorHead(const HeadConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    const int ff = config_.ff_dim > 0 ? config_.ff_dim : 4 * config_.d_model;
    position_embedding_ = ag::parameter(nn::normal_matrix(config_.max_sentences, config_.d_model, 0.1, rng));
    stack_ = nn::TransformerStack(config_.n_layers, config_.d_model, config_.n_heads, ff, config_.dropout, rng);
    classifier_ = nn::Linear(config_.d_model, 1, rng);
}

ImportanceScores ExtractorHead::score(const encoder::SentenceEmbeddings& emb, std::mt19937_64* dropout_rng) const {
    const int n = emb.rows();
    if (n > config_.max_sentences) {
        throw ValidationError("extractor head: " + std::to_string(n) + " sentences exceed max_sentences");
    }
    if (emb.real_count() == 0) {
        throw ValidationError("extractor head: no unmasked sentences");
    }
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        positions[static_cast<size_t>(i)] = i;
    }
    const Eigen::RowVectorXd key_bias = nn::key_bias_from_mask(emb.mask);
    ag::Var x = ag::add(emb.vectors, ag::gather_rows(position_embedding_, positions));
    x = stack_.forward(x, &key_bias, nn::Mode::trainable, dropout_rng);

    ImportanceScores out;
    out.logits = classifier_.forward(x);
    out.log_pi = ag::transpose(ag::log_softmax_rows(ag::transpose(out.logits), &key_bias));
    out.mask = emb.mask;
    return out;
}

void ExtractorHead::collect(nn::ParamList& out) const {
    out.push_back({"head.position_embedding", position_embedding_});
    stack_.collect("head.stack", out);
    classifier_.collect("head.classifier", out);
}

ag::Var extractive_loss(const ImportanceScores& scores, std::span<const int> labels) {
    const size_t rows = scores.mask.size();
    if (labels.size() > rows) {
        throw ValidationError("extractive_loss: more labels than sentence rows");
    }
    std::vector<double> targets(rows, 0.0);
    std::vector<uint8_t> mask = scores.mask;
    for (size_t i = 0; i < rows; ++i) {
        if (i >= labels.size()) {
            mask[i] = 0;
            continue;
        }
        if (labels[i] != 0 && labels[i] != 1) {
            throw ValidationError("extractive_loss: label outside {0,1}");
        }
        targets[i] = labels[i];
    }
    return ag::bce_with_logits(scores.logits, targets, mask);
}

}  // namespace cohext::extractor
