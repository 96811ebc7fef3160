#pragma once

// Coherence discriminator: a transformer over sentence vectors that scores, per
// row, whether the sentence still follows its original predecessor.
//
// One parameter set serves two invocation modes. Trainable calls (fed detached
// sentence vectors) produce the discriminator loss; frozen calls read detached
// weights and produce the coherence loss, whose gradient may only flow back
// into the rows that were fed in.

#include "cohext/nn.hpp"

#include <random>
#include <span>
#include <vector>

namespace cohext::discriminator {

struct DiscriminatorConfig {
    int n_layers{6};
    int n_heads{8};
    int d_model{768};
    int input_dim{768};  // width of the incoming sentence vectors
    int ff_dim{0};       // 0 selects 4 * d_model
    int max_positions{256};
    double dropout{0.0};
    bool pre_norm{false};
    // Sinusoidal initialisation scale for the learned position table; 0 keeps
    // the random normal initialisation.
    double position_init_scale{1.0};

    void validate() const;
};

struct CoherenceScores {
    ag::Var logits;  // rows x 1
    ag::Var scores;  // sigmoid(logits), strictly inside (0, 1)

    [[nodiscard]] int size() const { return static_cast<int>(logits.rows()); }
};

enum class CoherenceLossKind {
    negative_mean,  // -mean(scores)
    bce_to_one,     // mean BCE of the selected scores against label 1
};

class CoherenceDiscriminator {
public:
    CoherenceDiscriminator() = default;
    CoherenceDiscriminator(const DiscriminatorConfig& config, std::mt19937_64& rng);

    // rows: n x input_dim. mask may be empty (all rows real).
    [[nodiscard]] CoherenceScores forward(const ag::Var& rows, std::span<const uint8_t> mask, nn::Mode mode,
                                          std::mt19937_64* dropout_rng = nullptr) const;

    void collect(nn::ParamList& out) const;
    [[nodiscard]] const DiscriminatorConfig& config() const { return config_; }

private:
    DiscriminatorConfig config_;
    bool project_input_{false};
    nn::Linear input_projection_;
    ag::Var position_embedding_;
    nn::TransformerStack stack_;
    nn::Linear classifier_;
};

// Mean BCE against per-row coherence labels over unmasked rows.
ag::Var discriminator_loss(const CoherenceScores& scores, std::span<const int> labels,
                           std::span<const uint8_t> mask = {});

// Arithmetic mean of the scores of the selected rows.
ag::Var coherent_score(const CoherenceScores& selected);

ag::Var coherence_loss(const CoherenceScores& selected, CoherenceLossKind kind = CoherenceLossKind::negative_mean);

}  // namespace cohext::discriminator
