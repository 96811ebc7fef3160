#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Var is a shared handle to a graph node. Leaves created with parameter()
// accumulate gradients across backward() calls until zero_grad(); interior
// nodes are reset at the start of every backward() so one graph can be
// differentiated for several roots. detach() cuts the graph: nothing upstream
// of a detached value ever receives gradient through it.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

namespace cohext::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad{false};
    bool leaf{true};
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Matrix& grad_buffer() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
            grad = Matrix::Zero(value.rows(), value.cols());
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    [[nodiscard]] const Matrix& value() const { return node_->value; }
    [[nodiscard]] Matrix& mutable_value() { return node_->value; }
    // Zero matrix of matching shape when no gradient has reached this node.
    [[nodiscard]] Matrix grad() const;
    [[nodiscard]] double item() const;
    [[nodiscard]] Index rows() const { return node_->value.rows(); }
    [[nodiscard]] Index cols() const { return node_->value.cols(); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

    void zero_grad();

private:
    std::shared_ptr<Node> node_;
};

// Leaves
Var parameter(Matrix init);
Var constant(Matrix value);
Var scalar(double v);
Var detach(const Var& x);

// Elementwise and linear algebra
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);      // row: 1 x cols, broadcast down rows
Var scale_rows(const Var& a, const Var& col);   // col: rows x 1, row i scaled by col(i)
Var transpose(const Var& a);

// Nonlinearities
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);

// Row-wise softmax. key_bias (1 x cols, entries 0 or -inf) is added to every row
// before normalisation; -inf entries receive exactly zero probability.
Var softmax_rows(const Var& a, const Eigen::RowVectorXd* key_bias = nullptr);
Var log_softmax_rows(const Var& a, const Eigen::RowVectorXd* key_bias = nullptr);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-12);

// Reductions
Var sum(const Var& a);
Var mean(const Var& a);
// Mean of entries of a column vector where mask(i) != 0.
Var masked_mean(const Var& col, std::span<const uint8_t> mask);
// Mean binary cross-entropy of sigmoid(logits) against targets over mask(i) != 0,
// computed in the stable softplus(z) - t*z form.
Var bce_with_logits(const Var& logits, std::span<const double> targets, std::span<const uint8_t> mask);

// Shape manipulation
Var gather_rows(const Var& table, std::span<const int> rows);
Var slice_rows(const Var& a, Index begin, Index count);
Var slice_cols(const Var& a, Index begin, Index count);
Var concat_cols(std::span<const Var> parts);
Var pad_rows(const Var& a, Index total_rows);

Var dropout(const Var& a, double p, std::mt19937_64& rng);

// Forward value is exactly `hard`; the backward pass treats the node as the
// identity of `soft`, i.e. hard + soft - stop_gradient(soft) without rounding.
Var straight_through(Matrix hard, const Var& soft);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
void backward(const Var& root);

}  // namespace cohext::ag
