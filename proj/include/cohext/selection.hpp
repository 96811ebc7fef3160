#pragma once

// Differentiable K-of-n sentence selection: plain TopK, Gumbel TopK,
// Gumbel-Softmax TopK and the straight-through estimator.
//
// Ties are broken towards the lowest index everywhere.

#include "cohext/autograd.hpp"
#include "cohext/extractor.hpp"

#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cohext::selection {

enum class Method { topk, gumbel_topk, gumbel_softmax_topk };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct SelectionVector {
    ag::Var y;              // n x 1 soft scores
    std::vector<int> s_tk;  // hard indicator of the K largest y
    ag::Var s_hat;          // forward value s_tk, backward identity w.r.t. y
    Method method{Method::topk};
    double temperature{1.0};

    // Ascending indices with s_tk = 1.
    [[nodiscard]] std::vector<int> selected() const;
};

inline constexpr double kUniformClamp = 1e-12;

// -log(-log(u)) with u clamped to [kUniformClamp, 1 - kUniformClamp].
double gumbel_from_uniform(double u);
Eigen::VectorXd gumbel_noise(int n, std::mt19937_64& rng);

// Indicator of the k largest unmasked entries. Throws ValidationError when k
// exceeds the unmasked count.
std::vector<int> topk_indicator(const Eigen::VectorXd& y, int k, std::span<const uint8_t> mask = {});

// y = softmax((g + log_pi) / T) over unmasked positions.
SelectionVector gumbel_softmax_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, double temperature, int k,
                                    const Eigen::VectorXd& noise);
SelectionVector gumbel_softmax_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, double temperature, int k,
                                    std::mt19937_64& rng);

// y = g + log_pi, unnormalised.
SelectionVector gumbel_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, int k, const Eigen::VectorXd& noise);
SelectionVector gumbel_topk(const ag::Var& log_pi, std::span<const uint8_t> mask, int k, std::mt19937_64& rng);

// y = scores, deterministic.
SelectionVector plain_topk(const ag::Var& scores, std::span<const uint8_t> mask, int k);

ag::Var straight_through(std::span<const int> s_tk, const ag::Var& y);

// Row i of the result is s_hat(i) * e_i. The sentence vectors enter detached,
// so gradient reaches only s_hat: d/ds_hat(i) = <dL/dE'_i, e_i>.
ag::Var apply_selection(const ag::Var& s_hat, const ag::Var& sentence_vectors);

struct SelectOptions {
    Method method{Method::gumbel_softmax_topk};
    double temperature{1.0};
    int k{3};
};

// Training-time selection from importance scores. K is clamped to the number
// of unmasked sentences. The plain TopK method uses y = pi.
SelectionVector select(const extractor::ImportanceScores& scores, const SelectOptions& options, std::mt19937_64& rng);

// Inference selector: TopK on sigmoid probabilities, K clamped; ascending indices.
std::vector<int> select_for_inference(const extractor::ImportanceScores& scores, int k);

}  // namespace cohext::selection
