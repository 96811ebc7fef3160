#include "cohext/discriminator.hpp"

#include "cohext/errors.hpp"


namespace cohext::discriminator {

void DiscriminatorConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw ValidationError("discriminator: d_model must be divisible by n_heads");
    }
    if (input_dim < 1 || max_positions < 1 || n_layers < 0) {
        throw ValidationError("discriminator: invalid dimensions");
    }
    if (position_init_scale < 0.0 || dropout < 0.0 || dropout >= 1.0) {
        throw ValidationError("discriminator: position_init_scale must be non-negative and dropout in [0, 1)");
    }
}

CoherenceDiscriminator::CoherenceDiscriminator(const DiscriminatorConfig& config, std::mt19937_64& rng)
    : config_(config) {
    config_.validate();
    const int d = config_.d_model;
    project_input_ = config_.input_dim != d;
    if (project_input_) {
        input_projection_ = nn::Linear(config_.input_dim, d, rng);
    }
    position_embedding_ = ag::parameter(config_.position_init_scale > 0.0
                                            ? nn::sinusoidal_table(config_.max_positions, d, config_.position_init_scale)
                                            : nn::normal_matrix(config_.max_positions, d, 0.1, rng));
    stack_ = nn::TransformerStack(config_.n_layers, d, config_.n_heads, config_.ff_dim > 0 ? config_.ff_dim : 4 * d,
                                  config_.dropout, rng, config_.pre_norm);
    classifier_ = nn::Linear(d, 1, rng);
}

CoherenceScores CoherenceDiscriminator::forward(const ag::Var& rows, std::span<const uint8_t> mask, nn::Mode mode,
                                                std::mt19937_64* dropout_rng) const {
    const auto n = static_cast<int>(rows.rows());
    if (n < 1) {
        throw ValidationError("discriminator: input has no rows");
    }
    if (n > config_.max_positions) {
        throw ValidationError("discriminator: " + std::to_string(n) + " rows exceed max_positions");
    }
    if (rows.cols() != config_.input_dim) {
        throw ValidationError("discriminator: input width differs from input_dim");
    }
    if (!mask.empty() && mask.size() != static_cast<size_t>(n)) {
        throw ValidationError("discriminator: mask length differs from row count");
    }
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        positions[static_cast<size_t>(i)] = i;
    }
    ag::Var x = project_input_ ? input_projection_.forward(rows, mode) : rows;
    x = ag::add(x, ag::gather_rows(nn::use(position_embedding_, mode), positions));
    Eigen::RowVectorXd key_bias;
    if (!mask.empty()) {
        key_bias = nn::key_bias_from_mask(mask);
    }
    x = stack_.forward(x, mask.empty() ? nullptr : &key_bias, mode, dropout_rng);

    CoherenceScores out;
    out.logits = classifier_.forward(x, mode);
    out.scores = ag::sigmoid(out.logits);
    return out;
}

void CoherenceDiscriminator::collect(nn::ParamList& out) const {
    if (project_input_) {
        input_projection_.collect("discriminator.input_projection", out);
    }
    out.push_back({"discriminator.position_embedding", position_embedding_});
    stack_.collect("discriminator.stack", out);
    classifier_.collect("discriminator.classifier", out);
}

ag::Var discriminator_loss(const CoherenceScores& scores, std::span<const int> labels, std::span<const uint8_t> mask) {
    const auto n = static_cast<size_t>(scores.size());
    if (labels.size() != n) {
        throw ValidationError("discriminator_loss: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(n) + " scores");
    }
    if (!mask.empty() && mask.size() != n) {
        throw ValidationError("discriminator_loss: mask length mismatch");
    }
    std::vector<double> targets(n);
    std::vector<uint8_t> m(n, 1);
    for (size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw ValidationError("discriminator_loss: label outside {0,1}");
        }
        targets[i] = labels[i];
        if (!mask.empty()) {
            m[i] = mask[i];
        }
    }
    return ag::bce_with_logits(scores.logits, targets, m);
}

ag::Var coherent_score(const CoherenceScores& selected) {
    if (selected.size() < 1) {
        throw ValidationError("coherent_score: empty selection");
    }
    return ag::mean(selected.scores);
}

ag::Var coherence_loss(const CoherenceScores& selected, CoherenceLossKind kind) {
    if (selected.size() < 1) {
        throw ValidationError("coherence_loss: empty selection");
    }
    if (kind == CoherenceLossKind::bce_to_one) {
        const std::vector<int> ones(static_cast<size_t>(selected.size()), 1);
        return discriminator_loss(selected, ones);
    }
    return ag::scale(coherent_score(selected), -1.0);
}

}  // namespace cohext::discriminator
