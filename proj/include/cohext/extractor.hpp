#pragma once

// Inter-sentence scoring head and the extractive loss.

#include "cohext/encoder.hpp"
#include "cohext/nn.hpp"

#include <random>
#include <span>
#include <vector>

namespace cohext::extractor {

struct HeadConfig {
    int d_model{64};
    int n_heads{4};
    int n_layers{1};
    int ff_dim{0};  // 0 selects 4 * d_model
    int max_sentences{256};
    double dropout{0.0};

    void validate() const;
};

struct ImportanceScores {
    ag::Var logits;  // n x 1
    ag::Var log_pi;  // n x 1, log softmax over unmasked logits (-inf where masked)
    std::vector<uint8_t> mask;

    // sigmoid(logits)
    [[nodiscard]] Eigen::VectorXd probs() const;
    // exp(log_pi); exactly 0 at masked positions
    [[nodiscard]] Eigen::VectorXd pi() const;
};

class ExtractorHead {
public:
    ExtractorHead() = default;
    ExtractorHead(const HeadConfig& config, std::mt19937_64& rng);

    [[nodiscard]] ImportanceScores score(const encoder::SentenceEmbeddings& emb,
                                         std::mt19937_64* dropout_rng = nullptr) const;

    void collect(nn::ParamList& out) const;
    [[nodiscard]] const HeadConfig& config() const { return config_; }
    // Learned inter-sentence positions, exposed for symmetry tests.
    [[nodiscard]] ag::Var& position_embedding() { return position_embedding_; }

private:
    HeadConfig config_;
    ag::Var position_embedding_;
    nn::TransformerStack stack_;
    nn::Linear classifier_;
};

// Mean binary cross-entropy between sigmoid(logits) and labels over unmasked
// positions. Labels shorter than the padded row count are treated as padding.
ag::Var extractive_loss(const ImportanceScores& scores, std::span<const int> labels);

}  // namespace cohext::extractor
