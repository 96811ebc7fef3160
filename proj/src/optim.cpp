#include "cohext/optim.hpp"

#include <cmath>

namespace cohext::optim {

Adam::Adam(nn::ParamList params, const AdamConfig& config) : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
        v_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& var = params_[i].var;
        const ag::Matrix& g = var.grad();
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
        auto& w = var.mutable_value();
        w.array() -= config_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
    }
    zero_grad();
}

void Adam::zero_grad() const { nn::zero_grads(params_); }

}  // namespace cohext::optim
