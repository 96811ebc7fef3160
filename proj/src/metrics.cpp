#include "cohext/metrics.hpp"

#include "cohext/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

namespace cohext::metrics {

namespace {

RougeScore from_counts(double overlap, double cand_total, double ref_total) {
    RougeScore s;
    s.precision = cand_total > 0.0 ? overlap / cand_total : 0.0;
    s.recall = ref_total > 0.0 ? overlap / ref_total : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::map<std::vector<int>, int> ngram_counts(std::span<const int> tokens, int n) {
    std::map<std::vector<int>, int> counts;
    const auto len = static_cast<int>(tokens.size());
    for (int i = 0; i + n <= len; ++i) {
        ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)];
    }
    return counts;
}

// Maps both word sequences into a shared integer alphabet.
std::pair<std::vector<int>, std::vector<int>> intern(std::span<const std::string> a, std::span<const std::string> b) {
    std::unordered_map<std::string, int> ids;
    auto map_one = [&ids](std::span<const std::string> words) {
        std::vector<int> out;
        out.reserve(words.size());
        for (const auto& w : words) {
            out.push_back(ids.try_emplace(w, static_cast<int>(ids.size())).first->second);
        }
        return out;
    };
    auto ia = map_one(a);
    auto ib = map_one(b);
    return {std::move(ia), std::move(ib)};
}

std::vector<std::string> split_ws(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

}  // namespace

RougeScore rouge_n(std::span<const int> candidate, std::span<const int> reference, int n) {
    if (n < 1) {
        throw ValidationError("rouge_n: n must be >= 1");
    }
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    double overlap = 0.0;
    for (const auto& [gram, count] : cand) {
        if (auto it = ref.find(gram); it != ref.end()) {
            overlap += std::min(count, it->second);
        }
    }
    const double cand_total = std::max(0, static_cast<int>(candidate.size()) - n + 1);
    const double ref_total = std::max(0, static_cast<int>(reference.size()) - n + 1);
    return from_counts(overlap, cand_total, ref_total);
}

RougeScore rouge_l(std::span<const int> candidate, std::span<const int> reference) {
    const size_t m = candidate.size();
    const size_t n = reference.size();
    std::vector<int> prev(n + 1, 0);
    std::vector<int> cur(n + 1, 0);
    for (size_t i = 1; i <= m; ++i) {
        for (size_t j = 1; j <= n; ++j) {
            cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return from_counts(prev[n], static_cast<double>(m), static_cast<double>(n));
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
    const auto [c, r] = intern(candidate, reference);
    return rouge_n(std::span<const int>(c), std::span<const int>(r), n);
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
    const auto [c, r] = intern(candidate, reference);
    return rouge_l(std::span<const int>(c), std::span<const int>(r));
}

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n) {
    const auto c = split_ws(candidate);
    const auto r = split_ws(reference);
    return rouge_n(std::span<const std::string>(c), std::span<const std::string>(r), n);
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
    const auto c = split_ws(candidate);
    const auto r = split_ws(reference);
    return rouge_l(std::span<const std::string>(c), std::span<const std::string>(r));
}

double consecutive_proportion(std::span<const int> selected, StartPairRule rule) {
    if (selected.empty()) {
        throw ValidationError("consecutive_proportion: empty selection");
    }
    int matched = 0;
    if (rule == StartPairRule::always || selected[0] == 0) {
        ++matched;
    }
    for (size_t j = 1; j < selected.size(); ++j) {
        if (selected[j] <= selected[j - 1]) {
            throw ValidationError("consecutive_proportion: indices must be strictly ascending");
        }
        if (selected[j] == selected[j - 1] + 1) {
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(selected.size());
}

double s_score(double r1, double r2, double rl, std::optional<double> bs, double cons_prop, double alpha) {
    return r1 + r2 + rl + bs.value_or(0.0) + alpha * cons_prop;
}

void refresh_s_score(MetricsReport& report) {
    report.s_score = s_score(report.r1, report.r2, report.rl, report.bs, report.cons_prop, report.alpha);
}

std::vector<double> position_distribution(std::span<const std::vector<int>> predictions,
                                          std::span<const int> doc_lengths, int bins) {
    if (predictions.size() != doc_lengths.size()) {
        throw ValidationError("position_distribution: predictions and lengths differ in count");
    }
    if (bins < 1) {
        throw ValidationError("position_distribution: bins must be >= 1");
    }
    std::vector<double> hist(static_cast<size_t>(bins), 0.0);
    double total = 0.0;
    for (size_t d = 0; d < predictions.size(); ++d) {
        const int len = doc_lengths[d];
        for (int idx : predictions[d]) {
            if (idx < 0 || idx >= len) {
                throw ValidationError("position_distribution: index outside document");
            }
            int bin = 0;
            if (len > 1) {
                const double rel = static_cast<double>(idx) / static_cast<double>(len - 1);
                bin = std::min(bins - 1, static_cast<int>(std::floor(rel * bins)));
            }
            hist[static_cast<size_t>(bin)] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0.0) {
        for (double& h : hist) {
            h /= total;
        }
    }
    return hist;
}

}  // namespace cohext::metrics
