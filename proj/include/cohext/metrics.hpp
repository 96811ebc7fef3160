#pragma once

// Rouge-1/2/L, consecutive-sentence proportion, S-score and positional reports.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cohext::metrics {

struct RougeScore {
    double precision{0.0};
    double recall{0.0};
    double f1{0.0};
};

// Clipped n-gram overlap. F1 is 0 when precision and recall are both 0.
RougeScore rouge_n(std::span<const int> candidate, std::span<const int> reference, int n);
RougeScore rouge_l(std::span<const int> candidate, std::span<const int> reference);

// Word-level variants; words are compared exactly.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

// Whitespace-split convenience overloads.
RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n);
RougeScore rouge_l(std::string_view candidate, std::string_view reference);

enum class StartPairRule {
    always,          // the (virtual start, first) pair always counts as consecutive
    first_sentence,  // counts only when the first selected index is 0
};

// M/N over N pairs including the virtual start pair. Throws ValidationError
// unless indices are non-empty and strictly ascending.
double consecutive_proportion(std::span<const int> selected, StartPairRule rule = StartPairRule::always);

// All fields are percentages on the 0-100 scale.
struct MetricsReport {
    double r1{0.0};
    double r2{0.0};
    double rl{0.0};
    std::optional<double> bs;
    double cons_prop{0.0};
    double alpha{1.0};
    double s_score{0.0};
};

double s_score(double r1, double r2, double rl, std::optional<double> bs, double cons_prop, double alpha);
// Recomputes report.s_score from its components under report.alpha.
void refresh_s_score(MetricsReport& report);

// Relative position idx/(len-1) in `bins` equal bins (len == 1 maps to bin 0),
// normalised to frequencies. Returns all zeros when nothing was selected.
std::vector<double> position_distribution(std::span<const std::vector<int>> predictions,
                                          std::span<const int> doc_lengths, int bins = 20);

}  // namespace cohext::metrics
