#include "cohext/selection.hpp"

#include "cohext/errors.hpp"
#include "cohext/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cohext::selection {

namespace {

int unmasked_count(std::span<const uint8_t> mask, Eigen::Index n) {
    if (mask.empty()) {
        return static_cast<int>(n);
    }
    return static_cast<int>(std::count_if(mask.begin(), mask.end(), [](uint8_t m) { return m != 0; }));
}

void check_k(int k, int available) {
    if (k < 1) {
        throw ValidationError("selection: K must be >= 1");
    }
    if (k > available) {
        throw ValidationError("selection: K=" + std::to_string(k) + " exceeds " + std::to_string(available) +
                              " unmasked sentences");
    }
}

SelectionVector finish(ag::Var y, int k, std::span<const uint8_t> mask, Method method, double temperature) {
    SelectionVector out;
    out.s_tk = topk_indicator(y.value().col(0), k, mask);
    out.s_hat = straight_through(out.s_tk, y);
    out.y = std::move(y);
    out.method = method;
    out.temperature = temperature;
    return out;
}

}  // namespace

std::string_view to_string(Method method) {
    switch (method) {
        case Method::topk:
            return "topk";
        case Method::gumbel_topk:
            return "gumbel_topk";
        case Method::gumbel_softmax_topk:
            return "gumbel_softmax_topk";
    }
    return "topk";
}

Method parse_method(std::string_view name) {
    if (name == "topk") {
        return Method::topk;
    }
    if (name == "gumbel_topk") {
        return Method::gumbel_topk;
    }
    if (name == "gumbel_softmax_topk") {
        return Method::gumbel_softmax_topk;
    }
    throw ValidationError("unknown selection method '" + std::string(name) + "'");
}

std::vector<int> SelectionVector::selected() const {
    std::vector<int> out;
    for (size_t i = 0; i < s_tk.size(); ++i) {
        if (s_tk[i] != 0) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

double gumbel_from_uniform(double u) {
    const double clamped = std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
    return -std::log(-std::log(clamped));
}

Eigen::VectorXd gumbel_noise(int n, std::mt19937_64& rng) {
    if (n < 1) {
        throw ValidationError("gumbel_noise: n must be >= 1");
    }
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) {
        g(i) = gumbel_from_uniform(uniform(rng));
    }
    return g;
}

std::vector<int> topk_indicator(const Eigen::VectorXd& y, int k, std::span<const uint8_t> mask) {
    if (!mask.empty() && mask.size() != static_cast<size_t>(y.size())) {
        throw ValidationError("topk: mask length mismatch");
    }
    check_k(k, unmasked_count(mask, y.size()));
    std::vector<int> order;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (mask.empty() || mask[static_cast<size_t>(i)] != 0) {
            order.push_back(static_cast<int>(i));
        }
    }
    // Stable sort keeps the lower index first among equal values.
    std::stable_sort(order.begin(), order.end(), [&y](int a, int b) { return y(a) > y(b); });
    std::vector<int> indicator(static_cast<size_t>(y.size()), 0);
    for (int i = 0; i < k; ++i) {
        indicator[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    }
    return indicator;
}

SelectionVector gumbel_softmax_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, double temperature, int k,
                                    const Eigen::VectorXd& noise) {
    if (!(temperature > 0.0)) {
        throw ValidationError("gumbel_softmax_topk: temperature must be positive");
    }
    if (noise.size() != log_pi.rows()) {
        throw ValidationError("gumbel_softmax_topk: noise length mismatch");
    }
    check_k(k, unmasked_count(mask, log_pi.rows()));
    ag::Matrix g(noise.size(), 1);
    g.col(0) = noise;
    const ag::Var perturbed = ag::scale(ag::add(log_pi, ag::constant(std::move(g))), 1.0 / temperature);
    Eigen::RowVectorXd key_bias;
    if (!mask.empty()) {
        key_bias = nn::key_bias_from_mask(mask);
    }
    ag::Var y = ag::transpose(ag::softmax_rows(ag::transpose(perturbed), mask.empty() ? nullptr : &key_bias));
    return finish(std::move(y), k, mask, Method::gumbel_softmax_topk, temperature);
}

SelectionVector gumbel_softmax_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, double temperature, int k,
                                    std::mt19937_64& rng) {
    return gumbel_softmax_topk(log_pi, mask, temperature, k, gumbel_noise(static_cast<int>(log_pi.rows()), rng));
}

SelectionVector gumbel_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, int k, const Eigen::VectorXd& noise) {
    if (noise.size() != log_pi.rows()) {
        throw ValidationError("gumbel_topk: noise length mismatch");
    }
    check_k(k, unmasked_count(mask, log_pi.rows()));
    ag::Matrix g(noise.size(), 1);
    g.col(0) = noise;
    ag::Var y = ag::add(log_pi, ag::constant(std::move(g)));
    return finish(std::move(y), k, mask, Method::gumbel_topk, 1.0);
}

SelectionVector gumbel_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, int k, std::mt19937_64& rng) {
    return gumbel_topk(log_pi, mask, k, gumbel_noise(static_cast<int>(log_pi.rows()), rng));
}

SelectionVector plain_topk(const ag::Var& scores, std::span<const uint8_t> mask, int k) {
    check_k(k, unmasked_count(mask, scores.rows()));
    return finish(scores, k, mask, Method::topk, 1.0);
}

ag::Var straight_through(std::span<const int> s_tk, const ag::Var& y) {
    if (s_tk.size() != static_cast<size_t>(y.rows()) || y.cols() != 1) {
        throw ValidationError("straight_through: length mismatch");
    }
    ag::Matrix hard(y.rows(), 1);
    for (size_t i = 0; i < s_tk.size(); ++i) {
        hard(static_cast<Eigen::Index>(i), 0) = static_cast<double>(s_tk[i]);
    }
    return ag::straight_through(std::move(hard), y);
}

ag::Var apply_selection(const ag::Var& s_hat, const ag::Var& sentence_vectors) {
    if (s_hat.rows() != sentence_vectors.rows()) {
        throw ValidationError("apply_selection: selection length differs from sentence count");
    }
    return ag::scale_rows(ag::detach(sentence_vectors), s_hat);
}

SelectionVector select(const extractor::ImportanceScores& scores, const SelectOptions& options, std::mt19937_64& rng) {
    const int available = unmasked_count(scores.mask, scores.logits.rows());
    const int k = std::min(options.k, available);
    switch (options.method) {
        case Method::topk: {
            const Eigen::RowVectorXd key_bias = nn::key_bias_from_mask(scores.mask);
            const ag::Var pi = ag::transpose(ag::softmax_rows(ag::transpose(scores.logits), &key_bias));
            return plain_topk(pi, scores.mask, k);
        }
        case Method::gumbel_topk:
            return gumbel_topk(scores.log_pi, scores.mask, k, rng);
        case Method::gumbel_softmax_topk:
            return gumbel_softmax_topk(scores.log_pi, scores.mask, options.temperature, k, rng);
    }
    throw ValidationError("select: unknown method");
}

std::vector<int> select_for_inference(const extractor::ImportanceScores& scores, int k) {
    const int available = unmasked_count(scores.mask, scores.logits.rows());
    const auto indicator = topk_indicator(scores.probs(), std::min(k, available), scores.mask);
    std::vector<int> out;
    for (size_t i = 0; i < indicator.size(); ++i) {
        if (indicator[i] != 0) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

}  // namespace cohext::selection
