#include "cohext/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cohext::nn {

Matrix normal_matrix(ag::Index rows, ag::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (ag::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

Matrix sinusoidal_table(ag::Index rows, ag::Index cols, double scale) {
    Matrix table(rows, cols);
    for (ag::Index p = 0; p < rows; ++p) {
        for (ag::Index i = 0; i < cols; i += 2) {
            const double angle = static_cast<double>(p) * std::pow(10000.0, -static_cast<double>(i) / cols);
            table(p, i) = scale * std::sin(angle);
            if (i + 1 < cols) {
                table(p, i + 1) = scale * std::cos(angle);
            }
        }
    }
    return table;
}

Eigen::RowVectorXd key_bias_from_mask(std::span<const uint8_t> mask) {
    Eigen::RowVectorXd bias(static_cast<ag::Index>(mask.size()));
    for (size_t i = 0; i < mask.size(); ++i) {
        bias(static_cast<ag::Index>(i)) = mask[i] != 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    return bias;
}

Linear::Linear(int in, int out, std::mt19937_64& rng)
    : weight(ag::parameter(normal_matrix(in, out, std::sqrt(2.0 / (in + out)), rng))),
      bias(ag::parameter(Matrix::Zero(1, out))) {}

Var Linear::forward(const Var& x, Mode mode) const {
    return ag::add_row(ag::matmul(x, use(weight, mode)), use(bias, mode));
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int dim)
    : gamma(ag::parameter(Matrix::Ones(1, dim))), beta(ag::parameter(Matrix::Zero(1, dim))) {}

Var LayerNorm::forward(const Var& x, Mode mode) const {
    return ag::layer_norm_rows(x, use(gamma, mode), use(beta, mode), 1e-5);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads_, std::mt19937_64& rng)
    : heads(heads_), query(dim, dim, rng), key(dim, dim, rng), value(dim, dim, rng), output(dim, dim, rng) {
    if (heads <= 0 || dim % heads != 0) {
        throw std::invalid_argument("attention: dimension must be divisible by head count");
    }
}

Var MultiHeadAttention::forward(const Var& x, const Eigen::RowVectorXd* key_bias, Mode mode) const {
    const Var q = query.forward(x, mode);
    const Var k = key.forward(x, mode);
    const Var v = value.forward(x, mode);
    const ag::Index dim = x.cols();
    const ag::Index head_dim = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> per_head;
    per_head.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const ag::Index off = h * head_dim;
        const Var qh = ag::slice_cols(q, off, head_dim);
        const Var kh = ag::slice_cols(k, off, head_dim);
        const Var vh = ag::slice_cols(v, off, head_dim);
        const Var att = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt), key_bias);
        per_head.push_back(ag::matmul(att, vh));
    }
    return output.forward(ag::concat_cols(per_head), mode);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
}

TransformerLayer::TransformerLayer(int dim, int heads, int ff_dim, double dropout_, std::mt19937_64& rng,
                                   bool pre_norm_)
    : attention(dim, heads, rng),
      attention_norm(dim),
      ff_in(dim, ff_dim, rng),
      ff_out(ff_dim, dim, rng),
      ff_norm(dim),
      dropout(dropout_),
      pre_norm(pre_norm_) {}

Var TransformerLayer::forward(const Var& x, const Eigen::RowVectorXd* key_bias, Mode mode,
                              std::mt19937_64* rng) const {
    const auto sublayer_dropout = [&](Var v) { return rng != nullptr ? ag::dropout(v, dropout, *rng) : v; };
    if (pre_norm) {
        const Var h = ag::add(x, sublayer_dropout(attention.forward(attention_norm.forward(x, mode), key_bias, mode)));
        const Var f = ff_out.forward(ag::gelu(ff_in.forward(ff_norm.forward(h, mode), mode)), mode);
        return ag::add(h, sublayer_dropout(f));
    }
    const Var h = attention_norm.forward(ag::add(x, sublayer_dropout(attention.forward(x, key_bias, mode))), mode);
    const Var f = ff_out.forward(ag::gelu(ff_in.forward(h, mode)), mode);
    return ff_norm.forward(ag::add(h, sublayer_dropout(f)), mode);
}

void TransformerLayer::collect(const std::string& prefix, ParamList& out) const {
    attention.collect(prefix + ".attention", out);
    attention_norm.collect(prefix + ".attention_norm", out);
    ff_in.collect(prefix + ".ff_in", out);
    ff_out.collect(prefix + ".ff_out", out);
    ff_norm.collect(prefix + ".ff_norm", out);
}

TransformerStack::TransformerStack(int n_layers, int dim, int heads, int ff_dim, double dropout,
                                   std::mt19937_64& rng, bool pre_norm_)
    : pre_norm(pre_norm_) {
    layers.reserve(static_cast<size_t>(n_layers));
    for (int i = 0; i < n_layers; ++i) {
        layers.emplace_back(dim, heads, ff_dim, dropout, rng, pre_norm);
    }
    if (pre_norm) {
        final_norm = LayerNorm(dim);
    }
}

Var TransformerStack::forward(const Var& x, const Eigen::RowVectorXd* key_bias, Mode mode,
                              std::mt19937_64* rng) const {
    Var h = x;
    for (const auto& layer : layers) {
        h = layer.forward(h, key_bias, mode, rng);
    }
    return pre_norm ? final_norm.forward(h, mode) : h;
}

void TransformerStack::collect(const std::string& prefix, ParamList& out) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
    if (pre_norm) {
        final_norm.collect(prefix + ".final_norm", out);
    }
}

void copy_values(const ParamList& from, const ParamList& to) {
    if (from.size() != to.size()) {
        throw std::invalid_argument("copy_values: parameter count differs");
    }
    for (size_t i = 0; i < from.size(); ++i) {
        if (from[i].name != to[i].name || from[i].var.rows() != to[i].var.rows() ||
            from[i].var.cols() != to[i].var.cols()) {
            throw std::invalid_argument("copy_values: mismatch at " + from[i].name);
        }
        Var dst = to[i].var;
        dst.mutable_value() = from[i].var.value();
    }
}

void zero_grads(const ParamList& params) {
    for (const auto& p : params) {
        Var v = p.var;
        v.zero_grad();
    }
}

double max_abs_grad(const ParamList& params) {
    double m = 0.0;
    for (const auto& p : params) {
        const Matrix g = p.var.grad();
        if (g.size() > 0) {
            m = std::max(m, g.cwiseAbs().maxCoeff());
        }
    }
    return m;
}

}  // namespace cohext::nn
