#include "cohext/merging.hpp"

#include "cohext/errors.hpp"
#include "cohext/optim.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace cohext::merging {

using ag::Index;

std::string_view to_string(Mode mode) { return mode == Mode::mat ? "mat" : "model"; }

Mode parse_mode(std::string_view name) {
    if (name == "mat") {
        return Mode::mat;
    }
    if (name == "model") {
        return Mode::model;
    }
    throw ValidationError("unknown merging mode '" + std::string(name) + "'");
}

ag::Matrix mat_converting_matrix(std::span<const int> s_tk, int m) {
    const auto n = static_cast<Index>(s_tk.size());
    int total = 0;
    for (const int s : s_tk) {
        if (s != 0 && s != 1) {
            throw ValidationError("mat_converting_matrix: selection entries must be 0 or 1");
        }
        total += s;
    }
    if (total != m) {
        throw ValidationError("mat_converting_matrix: selection has " + std::to_string(total) + " ones, expected " +
                              std::to_string(m));
    }
    ag::Matrix M = ag::Matrix::Zero(n, m);
    int column = 0;
    for (Index i = 0; i < n; ++i) {
        if (s_tk[static_cast<size_t>(i)] == 1) {
            M(i, column++) = 1.0;
        }
    }
    return M;
}

ag::Var merge(const ag::Var& e_prime, const ag::Var& converting) {
    if (converting.rows() != e_prime.rows()) {
        throw ValidationError("merge: converting matrix has " + std::to_string(converting.rows()) + " rows, E' has " +
                              std::to_string(e_prime.rows()));
    }
    return ag::matmul(ag::transpose(converting), e_prime);
}

ag::Var merge(const ag::Var& e_prime, const ag::Matrix& converting) {
    return merge(e_prime, ag::constant(converting));
}

void ConverterConfig::validate() const {
    if (d_hidden < 1 || n_heads < 1 || d_hidden % n_heads != 0) {
        throw ValidationError("converter: d_hidden must be divisible by n_heads");
    }
    if (k_target < 1 || max_positions < k_target) {
        throw ValidationError("converter: k_target must be in [1, max_positions]");
    }
    if (!(lambda_len > 0.0)) {
        throw ValidationError("converter: lambda_len must be positive");
    }
}

Converter::Converter(const ConverterConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    const int d = config_.d_hidden;
    input_weight_ = ag::parameter(nn::normal_matrix(1, d, 1.0, rng));
    input_bias_ = ag::parameter(ag::Matrix::Zero(1, d));
    position_embedding_ = ag::parameter(nn::normal_matrix(config_.max_positions, d, 0.1, rng));
    stack_ = nn::TransformerStack(config_.n_layers, d, config_.n_heads, 4 * d, 0.0, rng);
    output_ = nn::Linear(d, config_.k_target, rng);
}

ag::Var Converter::column_logits(const ag::Var& s_hat, int m) const {
    const auto n = static_cast<int>(s_hat.rows());
    if (s_hat.cols() != 1) {
        throw ValidationError("converter: s_hat must be a column vector");
    }
    if (m < 1 || m > n || m > config_.k_target) {
        throw ValidationError("converter: need 1 <= m <= min(n, k_target), got m=" + std::to_string(m) +
                              " n=" + std::to_string(n));
    }
    if (n > config_.max_positions) {
        throw ValidationError("converter: " + std::to_string(n) + " rows exceed max_positions");
    }
    std::vector<int> positions(static_cast<size_t>(n));
    std::iota(positions.begin(), positions.end(), 0);
    ag::Var x = ag::add_row(ag::matmul(s_hat, input_weight_), input_bias_);
    x = ag::add(x, ag::gather_rows(position_embedding_, positions));
    x = stack_.forward(x, nullptr, nn::Mode::trainable, nullptr);
    ag::Var logits = output_.forward(x);
    if (m < config_.k_target) {
        logits = ag::slice_cols(logits, 0, m);
    }
    return ag::transpose(logits);  // m x n, one row per output slot
}

ag::Var Converter::forward(const ag::Var& s_hat, int m) const {
    return ag::transpose(ag::softmax_rows(column_logits(s_hat, m)));
}

void Converter::collect(nn::ParamList& out) const {
    out.push_back({"converter.input_weight", input_weight_});
    out.push_back({"converter.input_bias", input_bias_});
    out.push_back({"converter.position_embedding", position_embedding_});
    stack_.collect("converter.stack", out);
    output_.collect("converter.output", out);
}

std::vector<int> sample_binary_vector(double lambda_len, int k, int max_len, std::mt19937_64& rng) {
    if (k < 1 || max_len < k) {
        throw ValidationError("sample_binary_vector: need 1 <= k <= max_len");
    }
    std::poisson_distribution<int> length_dist(lambda_len);
    const int n = std::clamp(length_dist(rng), k, max_len);
    std::vector<int> positions(static_cast<size_t>(n));
    std::iota(positions.begin(), positions.end(), 0);
    // Partial Fisher-Yates: the first k entries become the selected rows.
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(positions[static_cast<size_t>(i)], positions[static_cast<size_t>(pick(rng))]);
    }
    std::vector<int> s(static_cast<size_t>(n), 0);
    for (int i = 0; i < k; ++i) {
        s[static_cast<size_t>(positions[static_cast<size_t>(i)])] = 1;
    }
    return s;
}

ag::Var converter_loss(const Converter& converter, std::span<const int> s_tk) {
    const int m = static_cast<int>(std::count(s_tk.begin(), s_tk.end(), 1));
    ag::Matrix s(static_cast<Index>(s_tk.size()), 1);
    for (size_t i = 0; i < s_tk.size(); ++i) {
        s(static_cast<Index>(i), 0) = s_tk[i];
    }
    const ag::Var log_probs = ag::log_softmax_rows(converter.column_logits(ag::constant(std::move(s)), m));
    const ag::Matrix target = mat_converting_matrix(s_tk, m).transpose();
    return ag::scale(ag::sum(ag::hadamard(log_probs, ag::constant(target))), -1.0 / m);
}

double column_accuracy(const Converter& converter, std::span<const std::vector<int>> samples) {
    long correct = 0;
    long total = 0;
    for (const auto& sample : samples) {
        const int m = static_cast<int>(std::count(sample.begin(), sample.end(), 1));
        ag::Matrix s(static_cast<Index>(sample.size()), 1);
        for (size_t i = 0; i < sample.size(); ++i) {
            s(static_cast<Index>(i), 0) = sample[i];
        }
        const ag::Matrix M = converter.forward(ag::constant(std::move(s)), m).value();
        const ag::Matrix truth = mat_converting_matrix(sample, m);
        for (Index j = 0; j < m; ++j) {
            Index predicted = 0;
            Index expected = 0;
            M.col(j).maxCoeff(&predicted);
            truth.col(j).maxCoeff(&expected);
            correct += predicted == expected ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

PretrainResult pretrain_converter(Converter& converter, const PretrainOptions& options) {
    if (options.steps < 0 || options.batch_size < 1) {
        throw ValidationError("pretrain_converter: invalid steps or batch size");
    }
    const auto& cfg = converter.config();
    nn::ParamList params;
    converter.collect(params);
    optim::Adam adam(params, optim::AdamConfig{.lr = options.lr});
    adam.zero_grad();
    std::mt19937_64 rng(options.seed);

    PretrainResult result;
    result.loss_history.reserve(static_cast<size_t>(options.steps));
    for (int step = 0; step < options.steps; ++step) {
        double batch_loss = 0.0;
        for (int b = 0; b < options.batch_size; ++b) {
            const auto sample = sample_binary_vector(cfg.lambda_len, cfg.k_target, cfg.max_positions, rng);
            const ag::Var loss = ag::scale(converter_loss(converter, sample), 1.0 / options.batch_size);
            ag::backward(loss);
            batch_loss += loss.item();
        }
        adam.step();
        result.loss_history.push_back(batch_loss);
    }
    return result;
}

}  // namespace cohext::merging
