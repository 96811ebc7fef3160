#pragma once

// Compacting the n-row masked sentence matrix E' into the m selected rows E_d:
// either with the hard converting matrix built from the selection, or with a
// small pretrained transformer that predicts the matrix from s_hat.

#include "cohext/autograd.hpp"
#include "cohext/nn.hpp"

#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cohext::merging {

enum class Mode { mat, model };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

// n x m; column j holds a one at the row of the j-th smallest selected index.
ag::Matrix mat_converting_matrix(std::span<const int> s_tk, int m);

// E_d = M^T E'. M may be a constant (hard matrix) or a graph value (converter).
ag::Var merge(const ag::Var& e_prime, const ag::Var& converting);
ag::Var merge(const ag::Var& e_prime, const ag::Matrix& converting);

struct ConverterConfig {
    int n_layers{3};
    int n_heads{6};
    int d_hidden{30};
    int k_target{3};
    double lambda_len{10.0};
    int max_positions{256};

    void validate() const;
};

class Converter {
public:
    Converter() = default;
    Converter(const ConverterConfig& config, std::mt19937_64& rng);

    // s_hat: n x 1 over real sentences only, n >= m. Returns n x m with
    // columns normalised by softmax over rows. m <= k_target uses the leading
    // output slots.
    [[nodiscard]] ag::Var forward(const ag::Var& s_hat, int m) const;

    void collect(nn::ParamList& out) const;
    [[nodiscard]] const ConverterConfig& config() const { return config_; }

private:
    [[nodiscard]] ag::Var column_logits(const ag::Var& s_hat, int m) const;

    ConverterConfig config_;
    ag::Var input_weight_;  // 1 x d
    ag::Var input_bias_;    // 1 x d
    ag::Var position_embedding_;
    nn::TransformerStack stack_;
    nn::Linear output_;

    friend ag::Var converter_loss(const Converter&, std::span<const int>);
};

// Binary vector of Poisson(lambda_len) length, clamped to [k, max_len], with
// exactly k ones at uniformly drawn positions.
std::vector<int> sample_binary_vector(double lambda_len, int k, int max_len, std::mt19937_64& rng);

// Mean over columns of -log M[row_j, j] against the hard converting matrix.
ag::Var converter_loss(const Converter& converter, std::span<const int> s_tk);

// Fraction of columns whose argmax row is the true selected row.
double column_accuracy(const Converter& converter, std::span<const std::vector<int>> samples);

struct PretrainOptions {
    int steps{3000};
    int batch_size{16};
    double lr{1e-3};
    std::uint64_t seed{0};
};

struct PretrainResult {
    std::vector<double> loss_history;  // mean batch loss per step
};

// Trains the converter in place.
PretrainResult pretrain_converter(Converter& converter, const PretrainOptions& options);

}  // namespace cohext::merging
