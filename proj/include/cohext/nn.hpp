#pragma once

// Transformer building blocks on top of the autograd graph.

#include "cohext/autograd.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace cohext::nn {

using ag::Matrix;
using ag::Var;

struct NamedParam {
    std::string name;
    Var var;
};
using ParamList = std::vector<NamedParam>;

// Frozen invocations read detached copies of the weights, so no gradient can
// reach the parameters through that call while upstream inputs still can.
enum class Mode { trainable, frozen };

inline Var use(const Var& p, Mode mode) { return mode == Mode::frozen ? ag::detach(p) : p; }

Matrix normal_matrix(ag::Index rows, ag::Index cols, double stddev, std::mt19937_64& rng);
// Transformer-style sin/cos position codes, multiplied by `scale`.
Matrix sinusoidal_table(ag::Index rows, ag::Index cols, double scale);

// 0 for real positions, -inf for padding.
Eigen::RowVectorXd key_bias_from_mask(std::span<const uint8_t> mask);

struct Linear {
    Var weight;  // in x out
    Var bias;    // 1 x out

    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng);

    [[nodiscard]] Var forward(const Var& x, Mode mode = Mode::trainable) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
    Var gamma;
    Var beta;

    LayerNorm() = default;
    explicit LayerNorm(int dim);

    [[nodiscard]] Var forward(const Var& x, Mode mode = Mode::trainable) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct MultiHeadAttention {
    int heads{1};
    Linear query;
    Linear key;
    Linear value;
    Linear output;

    MultiHeadAttention() = default;
    MultiHeadAttention(int dim, int heads, std::mt19937_64& rng);

    [[nodiscard]] Var forward(const Var& x, const Eigen::RowVectorXd* key_bias, Mode mode) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// Post-norm encoder layer (BERT layout): x = LN(x + Attn(x)); x = LN(x + FFN(x)).
// With pre_norm: x = x + Attn(LN(x)); x = x + FFN(LN(x)).
struct TransformerLayer {
    MultiHeadAttention attention;
    LayerNorm attention_norm;
    Linear ff_in;
    Linear ff_out;
    LayerNorm ff_norm;
    double dropout{0.0};
    bool pre_norm{false};

    TransformerLayer() = default;
    TransformerLayer(int dim, int heads, int ff_dim, double dropout, std::mt19937_64& rng, bool pre_norm = false);

    // rng == nullptr disables dropout (evaluation).
    [[nodiscard]] Var forward(const Var& x, const Eigen::RowVectorXd* key_bias, Mode mode,
                              std::mt19937_64* rng) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct TransformerStack {
    std::vector<TransformerLayer> layers;
    bool pre_norm{false};
    LayerNorm final_norm;  // applied after the last layer when pre_norm

    TransformerStack() = default;
    TransformerStack(int n_layers, int dim, int heads, int ff_dim, double dropout, std::mt19937_64& rng,
                     bool pre_norm = false);

    [[nodiscard]] Var forward(const Var& x, const Eigen::RowVectorXd* key_bias, Mode mode,
                              std::mt19937_64* rng) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// Copies values between parameter lists with identical names and shapes.
void copy_values(const ParamList& from, const ParamList& to);
void zero_grads(const ParamList& params);
// Largest absolute gradient entry across the list.
double max_abs_grad(const ParamList& params);

}  // namespace cohext::nn
