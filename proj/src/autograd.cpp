#include "cohext/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace cohext::ag {

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_op(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->leaf = false;
    for (const Var& in : inputs) {
        if (in.requires_grad()) {
            node->requires_grad = true;
        }
    }
    if (node->requires_grad) {
        for (const Var& in : inputs) {
            node->parents.push_back(in.node());
        }
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
}

// Accumulates into a parent only when it participates in differentiation.
template <class Expr>
void accumulate(const NodePtr& parent, const Expr& g) {
    if (parent->requires_grad) {
        parent->grad_buffer() += g;
    }
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoeff = 0.044715;

double stable_softplus(double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

Matrix Var::grad() const {
    if (node_->grad.rows() == node_->value.rows() && node_->grad.cols() == node_->value.cols()) {
        return node_->grad;
    }
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
}

double Var::item() const {
    if (node_->value.size() != 1) {
        throw std::invalid_argument("item() on non-scalar");
    }
    return node_->value(0, 0);
}

void Var::zero_grad() {
    if (node_) {
        node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
    }
}

Var parameter(Matrix init) {
    auto node = std::make_shared<Node>();
    node->value = std::move(init);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

Var detach(const Var& x) { return constant(x.value()); }

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ");
    }
    NodePtr pa = a.node();
    NodePtr pb = b.node();
    return make_op(a.value() * b.value(), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
        }
        if (pb->requires_grad) {
            pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
        }
    });
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    NodePtr pa = a.node();
    NodePtr pb = b.node();
    return make_op(a.value() + b.value(), {a, b}, [pa, pb](Node& self) {
        accumulate(pa, self.grad);
        accumulate(pb, self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    NodePtr pa = a.node();
    NodePtr pb = b.node();
    return make_op(a.value() - b.value(), {a, b}, [pa, pb](Node& self) {
        accumulate(pa, self.grad);
        accumulate(pb, -self.grad);
    });
}

Var hadamard(const Var& a, const Var& b) {
    check_same_shape(a, b, "hadamard");
    NodePtr pa = a.node();
    NodePtr pb = b.node();
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [pa, pb](Node& self) {
        accumulate(pa, self.grad.cwiseProduct(pb->value));
        accumulate(pb, self.grad.cwiseProduct(pa->value));
    });
}

Var scale(const Var& a, double s) {
    NodePtr pa = a.node();
    return make_op(a.value() * s, {a}, [pa, s](Node& self) { accumulate(pa, self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
    NodePtr pa = a.node();
    return make_op(a.value().array() + s, {a}, [pa](Node& self) { accumulate(pa, self.grad); });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw std::invalid_argument("add_row: bias must be 1 x cols");
    }
    NodePtr pa = a.node();
    NodePtr pr = row.node();
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return make_op(std::move(out), {a, row}, [pa, pr](Node& self) {
        accumulate(pa, self.grad);
        accumulate(pr, self.grad.colwise().sum());
    });
}

Var scale_rows(const Var& a, const Var& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) {
        throw std::invalid_argument("scale_rows: scale must be rows x 1");
    }
    NodePtr pa = a.node();
    NodePtr pc = col.node();
    Matrix out = col.value().col(0).asDiagonal() * a.value();
    return make_op(std::move(out), {a, col}, [pa, pc](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer() += pc->value.col(0).asDiagonal() * self.grad;
        }
        if (pc->requires_grad) {
            pc->grad_buffer() += self.grad.cwiseProduct(pa->value).rowwise().sum();
        }
    });
}

Var transpose(const Var& a) {
    NodePtr pa = a.node();
    return make_op(a.value().transpose(), {a}, [pa](Node& self) { accumulate(pa, self.grad.transpose()); });
}

Var gelu(const Var& a) {
    NodePtr pa = a.node();
    const Matrix& x = a.value();
    Matrix t = (kSqrt2OverPi * (x.array() + kGeluCoeff * x.array().cube())).tanh().matrix();
    Matrix out = (0.5 * x.array() * (1.0 + t.array())).matrix();
    return make_op(std::move(out), {a}, [pa, t = std::move(t)](Node& self) {
        if (!pa->requires_grad) {
            return;
        }
        const auto xa = pa->value.array();
        const auto ta = t.array();
        auto d = 0.5 * (1.0 + ta) + 0.5 * xa * (1.0 - ta.square()) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * xa.square());
        pa->grad_buffer().array() += self.grad.array() * d;
    });
}

Var sigmoid(const Var& a) {
    NodePtr pa = a.node();
    Matrix out = a.value().unaryExpr([](double z) { return stable_sigmoid(z); });
    return make_op(std::move(out), {a}, [pa](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
        }
    });
}

Var log(const Var& a) {
    NodePtr pa = a.node();
    return make_op(a.value().array().log().matrix(), {a}, [pa](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().array() += self.grad.array() / pa->value.array();
        }
    });
}

Var softplus(const Var& a) {
    NodePtr pa = a.node();
    Matrix out = a.value().unaryExpr([](double z) { return stable_softplus(z); });
    return make_op(std::move(out), {a}, [pa](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().array() +=
                self.grad.array() * pa->value.unaryExpr([](double z) { return stable_sigmoid(z); }).array();
        }
    });
}

Var softmax_rows(const Var& a, const Eigen::RowVectorXd* key_bias) {
    Matrix z = a.value();
    if (key_bias != nullptr) {
        if (key_bias->size() != z.cols()) {
            throw std::invalid_argument("softmax_rows: key bias width mismatch");
        }
        z.rowwise() += *key_bias;
    }
    Matrix out(z.rows(), z.cols());
    for (Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        out.row(r) = (z.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    // Eigen's vectorised exp clamps its argument, so -inf would leave a denormal.
    out = (z.array() == -std::numeric_limits<double>::infinity()).select(0.0, out);
    NodePtr pa = a.node();
    return make_op(std::move(out), {a}, [pa](Node& self) {
        if (!pa->requires_grad) {
            return;
        }
        const Matrix& s = self.value;
        Eigen::VectorXd dot = self.grad.cwiseProduct(s).rowwise().sum();
        Matrix g = self.grad;
        g.colwise() -= dot;
        pa->grad_buffer() += s.cwiseProduct(g);
    });
}

Var log_softmax_rows(const Var& a, const Eigen::RowVectorXd* key_bias) {
    Matrix z = a.value();
    if (key_bias != nullptr) {
        if (key_bias->size() != z.cols()) {
            throw std::invalid_argument("log_softmax_rows: key bias width mismatch");
        }
        z.rowwise() += *key_bias;
    }
    Matrix out(z.rows(), z.cols());
    Matrix probs(z.rows(), z.cols());
    for (Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        const double lse = m + std::log((z.row(r).array() - m).exp().sum());
        out.row(r) = (z.row(r).array() - lse).matrix();
        probs.row(r) = out.row(r).array().exp().matrix();
    }
    NodePtr pa = a.node();
    return make_op(std::move(out), {a}, [pa, probs = std::move(probs)](Node& self) {
        if (!pa->requires_grad) {
            return;
        }
        // Masked entries hold -inf; their incoming gradient is ignored.
        Matrix g = self.grad;
        for (Index i = 0; i < g.size(); ++i) {
            if (!std::isfinite(self.value.data()[i])) {
                g.data()[i] = 0.0;
            }
        }
        Eigen::VectorXd total = g.rowwise().sum();
        Matrix d = g;
        d -= total.asDiagonal() * probs;
        pa->grad_buffer() += d;
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Index n = x.rows();
    const Index d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        throw std::invalid_argument("layer_norm_rows: gamma/beta must be 1 x cols");
    }
    Matrix xhat(n, d);
    Eigen::VectorXd inv_std(n);
    for (Index r = 0; r < n; ++r) {
        const double mu = x.value().row(r).mean();
        const double var = (x.value().row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = ((x.value().row(r).array() - mu) * inv_std(r)).matrix();
    }
    Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    NodePtr px = x.node();
    NodePtr pg = gamma.node();
    NodePtr pb = beta.node();
    return make_op(std::move(out), {x, gamma, beta},
                   [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Matrix& g = self.grad;
                       if (pg->requires_grad) {
                           pg->grad_buffer() += g.cwiseProduct(xhat).colwise().sum();
                       }
                       if (pb->requires_grad) {
                           pb->grad_buffer() += g.colwise().sum();
                       }
                       if (px->requires_grad) {
                           Matrix dxhat = g.array().rowwise() * pg->value.row(0).array();
                           const double dd = static_cast<double>(dxhat.cols());
                           Eigen::VectorXd m1 = dxhat.rowwise().sum() / dd;
                           Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / dd;
                           Matrix dx = dxhat;
                           dx.colwise() -= m1;
                           dx -= m2.asDiagonal() * xhat;
                           px->grad_buffer() += inv_std.asDiagonal() * dx;
                       }
                   });
}

Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    NodePtr pa = a.node();
    return make_op(std::move(out), {a}, [pa](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().array() += self.grad(0, 0);
        }
    });
}

Var mean(const Var& a) {
    const double count = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / count);
}

Var masked_mean(const Var& col, std::span<const uint8_t> mask) {
    if (col.cols() != 1 || static_cast<size_t>(col.rows()) != mask.size()) {
        throw std::invalid_argument("masked_mean: mask length mismatch");
    }
    double total = 0.0;
    double count = 0.0;
    for (Index i = 0; i < col.rows(); ++i) {
        if (mask[static_cast<size_t>(i)] != 0) {
            total += col.value()(i, 0);
            count += 1.0;
        }
    }
    if (count == 0.0) {
        throw std::invalid_argument("masked_mean: empty mask");
    }
    Matrix out(1, 1);
    out(0, 0) = total / count;
    NodePtr pc = col.node();
    std::vector<uint8_t> m(mask.begin(), mask.end());
    return make_op(std::move(out), {col}, [pc, m = std::move(m), count](Node& self) {
        if (!pc->requires_grad) {
            return;
        }
        Matrix& g = pc->grad_buffer();
        for (size_t i = 0; i < m.size(); ++i) {
            if (m[i] != 0) {
                g(static_cast<Index>(i), 0) += self.grad(0, 0) / count;
            }
        }
    });
}

Var bce_with_logits(const Var& logits, std::span<const double> targets, std::span<const uint8_t> mask) {
    if (logits.cols() != 1 || static_cast<size_t>(logits.rows()) != targets.size() || targets.size() != mask.size()) {
        throw std::invalid_argument("bce_with_logits: length mismatch");
    }
    double total = 0.0;
    double count = 0.0;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (mask[i] != 0) {
            const double z = logits.value()(static_cast<Index>(i), 0);
            total += stable_softplus(z) - targets[i] * z;
            count += 1.0;
        }
    }
    if (count == 0.0) {
        throw std::invalid_argument("bce_with_logits: empty mask");
    }
    Matrix out(1, 1);
    out(0, 0) = total / count;
    NodePtr pl = logits.node();
    std::vector<double> t(targets.begin(), targets.end());
    std::vector<uint8_t> m(mask.begin(), mask.end());
    return make_op(std::move(out), {logits}, [pl, t = std::move(t), m = std::move(m), count](Node& self) {
        if (!pl->requires_grad) {
            return;
        }
        Matrix& g = pl->grad_buffer();
        for (size_t i = 0; i < t.size(); ++i) {
            if (m[i] != 0) {
                const auto r = static_cast<Index>(i);
                g(r, 0) += self.grad(0, 0) * (stable_sigmoid(pl->value(r, 0)) - t[i]) / count;
            }
        }
    });
}

Var gather_rows(const Var& table, std::span<const int> rows) {
    Matrix out(static_cast<Index>(rows.size()), table.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= table.rows()) {
            throw std::out_of_range("gather_rows: index " + std::to_string(rows[i]) + " out of range");
        }
        out.row(static_cast<Index>(i)) = table.value().row(rows[i]);
    }
    NodePtr pt = table.node();
    std::vector<int> idx(rows.begin(), rows.end());
    return make_op(std::move(out), {table}, [pt, idx = std::move(idx)](Node& self) {
        if (!pt->requires_grad) {
            return;
        }
        Matrix& g = pt->grad_buffer();
        for (size_t i = 0; i < idx.size(); ++i) {
            g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
        }
    });
}

Var slice_rows(const Var& a, Index begin, Index count) {
    if (begin < 0 || count < 0 || begin + count > a.rows()) {
        throw std::out_of_range("slice_rows: range outside matrix");
    }
    NodePtr pa = a.node();
    return make_op(a.value().middleRows(begin, count), {a}, [pa, begin, count](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().middleRows(begin, count) += self.grad;
        }
    });
}

Var slice_cols(const Var& a, Index begin, Index count) {
    if (begin < 0 || count < 0 || begin + count > a.cols()) {
        throw std::out_of_range("slice_cols: range outside matrix");
    }
    NodePtr pa = a.node();
    return make_op(a.value().middleCols(begin, count), {a}, [pa, begin, count](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer().middleCols(begin, count) += self.grad;
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no inputs");
    }
    const Index rows = parts.front().rows();
    Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) {
            throw std::invalid_argument("concat_cols: row counts differ");
        }
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Index offset = 0;
    auto node = std::make_shared<Node>();
    node->leaf = false;
    std::vector<std::pair<NodePtr, Index>> slots;
    for (const Var& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        slots.emplace_back(p.node(), offset);
        offset += p.cols();
        node->requires_grad = node->requires_grad || p.requires_grad();
    }
    node->value = std::move(out);
    if (node->requires_grad) {
        for (const auto& [parent, off] : slots) {
            node->parents.push_back(parent);
        }
        node->backward_fn = [slots = std::move(slots)](Node& self) {
            for (const auto& [parent, off] : slots) {
                if (parent->requires_grad) {
                    parent->grad_buffer() += self.grad.middleCols(off, parent->value.cols());
                }
            }
        };
    }
    return Var(std::move(node));
}

Var pad_rows(const Var& a, Index total_rows) {
    if (total_rows < a.rows()) {
        throw std::invalid_argument("pad_rows: target smaller than input");
    }
    if (total_rows == a.rows()) {
        return a;
    }
    Matrix out = Matrix::Zero(total_rows, a.cols());
    out.topRows(a.rows()) = a.value();
    NodePtr pa = a.node();
    return make_op(std::move(out), {a}, [pa](Node& self) {
        if (pa->requires_grad) {
            pa->grad_buffer() += self.grad.topRows(pa->value.rows());
        }
    });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
    if (p <= 0.0) {
        return a;
    }
    std::bernoulli_distribution keep(1.0 - p);
    Matrix m(a.rows(), a.cols());
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
    }
    return hadamard(a, constant(std::move(m)));
}

Var straight_through(Matrix hard, const Var& soft) {
    if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
        throw std::invalid_argument("straight_through: shape mismatch");
    }
    NodePtr ps = soft.node();
    return make_op(std::move(hard), {soft}, [ps](Node& self) { accumulate(ps, self.grad); });
}

void backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1) {
        throw std::invalid_argument("backward: root must be a scalar");
    }
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives parents before children.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* node : order) {
        if (!node->leaf) {
            node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
        }
    }
    root.node()->grad_buffer().array() += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->leaf && node->backward_fn) {
            node->backward_fn(*node);
        }
    }
}

}  // namespace cohext::ag
