#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cohext/errors.hpp"
#include "cohext/metrics.hpp"

#include <cmath>
#include <map>
#include <random>
#include <vector>

using namespace cohext;
using namespace cohext::metrics;

namespace {

// Pair counting straight from the definition: N pairs including the start.
double count_pairs(const std::vector<int>& idx, bool first_only) {
    int consecutive = first_only ? (idx[0] == 0 ? 1 : 0) : 1;
    for (size_t j = 1; j < idx.size(); ++j) {
        consecutive += idx[j] == idx[j - 1] + 1 ? 1 : 0;
    }
    return static_cast<double>(consecutive) / static_cast<double>(idx.size());
}

// Longest common subsequence by exhaustive subsequence matching, tiny inputs only.
int lcs_brute(const std::vector<int>& a, const std::vector<int>& b) {
    int best = 0;
    for (int bits = 0; bits < (1 << a.size()); ++bits) {
        std::vector<int> sub;
        for (size_t i = 0; i < a.size(); ++i) {
            if ((bits >> i) & 1) {
                sub.push_back(a[i]);
            }
        }
        size_t k = 0;
        for (size_t i = 0; i < b.size() && k < sub.size(); ++i) {
            k += b[i] == sub[k] ? 1 : 0;
        }
        if (k == sub.size()) {
            best = std::max(best, static_cast<int>(sub.size()));
        }
    }
    return best;
}

}  // namespace

TEST_CASE("rouge-n hand cases") {
    const auto r = rouge_n("the cat sat", "the cat", 1);
    CHECK(r.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rouge_n("a b c d", "a b c d", 2).f1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rouge_n("a b", "c d", 1).f1 == 0.0);
    CHECK(rouge_n("", "", 1).f1 == 0.0);
    CHECK(rouge_n("the cat sat", "the cat", 2).f1 == doctest::Approx(2.0 * 0.5 / 1.5).epsilon(1e-12));

    // Clipping: "the" appears three times in the candidate but once in the reference.
    const auto clipped = rouge_n("the the the", "the cat", 1);
    CHECK(clipped.precision == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(clipped.recall == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS((void)rouge_n("a", "a", 0), ValidationError);
}

TEST_CASE("rouge-l hand cases") {
    const auto r = rouge_l("a b c", "a c");
    CHECK(r.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rouge_l("x y z", "x y z").f1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rouge_l("x y z", "").f1 == 0.0);
}

TEST_CASE("rouge-l matches a brute-force LCS and rouge-n is symmetric in F1") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> word(0, 3);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<int> a(static_cast<size_t>(1 + trial % 7));
        std::vector<int> b(static_cast<size_t>(1 + (trial / 7) % 6));
        for (auto& x : a) {
            x = word(rng);
        }
        for (auto& x : b) {
            x = word(rng);
        }
        const double lcs = lcs_brute(a, b);
        const auto r = rouge_l(a, b);
        CHECK(r.precision == doctest::Approx(lcs / a.size()).epsilon(1e-12));
        CHECK(r.recall == doctest::Approx(lcs / b.size()).epsilon(1e-12));
        for (int n : {1, 2}) {
            CHECK(rouge_n(a, b, n).f1 == doctest::Approx(rouge_n(b, a, n).f1).epsilon(1e-12));
            CHECK(rouge_n(a, b, n).f1 >= 0.0);
            CHECK(rouge_n(a, b, n).f1 <= 1.0);
        }
    }
}

TEST_CASE("consecutive proportion examples") {
    CHECK(consecutive_proportion(std::vector<int>{3, 4, 7}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(consecutive_proportion(std::vector<int>{0, 1, 2}) == 1.0);
    CHECK(consecutive_proportion(std::vector<int>{2, 5, 9}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(consecutive_proportion(std::vector<int>{2, 5, 9}, StartPairRule::first_sentence) == 0.0);
    CHECK(consecutive_proportion(std::vector<int>{0, 5}, StartPairRule::first_sentence) == 0.5);
    CHECK_THROWS_AS((void)consecutive_proportion(std::vector<int>{}), ValidationError);
    CHECK_THROWS_AS((void)consecutive_proportion(std::vector<int>{3, 3}), ValidationError);
    CHECK_THROWS_AS((void)consecutive_proportion(std::vector<int>{4, 2}), ValidationError);
}

TEST_CASE("consecutive proportion matches pair counting for every ascending list") {
    int lists = 0;
    for (int bits = 1; bits < (1 << 10); ++bits) {
        if (__builtin_popcount(static_cast<unsigned>(bits)) > 5) {
            continue;
        }
        std::vector<int> idx;
        for (int i = 0; i < 10; ++i) {
            if ((bits >> i) & 1) {
                idx.push_back(i);
            }
        }
        CHECK(consecutive_proportion(idx) == count_pairs(idx, false));
        CHECK(consecutive_proportion(idx, StartPairRule::first_sentence) == count_pairs(idx, true));
        ++lists;
    }
    CHECK(lists == 637);  // C(10,1) + ... + C(10,5)
}

TEST_CASE("s-score") {
    CHECK(s_score(10, 20, 30, 40, 50, 1.0) == doctest::Approx(150.0));
    CHECK(s_score(10, 20, 30, 40, 50, 0.0) == doctest::Approx(100.0));
    CHECK(s_score(10, 20, 30, std::nullopt, 50, 2.0) == doctest::Approx(160.0));

    // A published base row and its rounded S-score.
    const double cnndm = s_score(42.1, 19.3, 38.6, 63.6, 46.1, 1.0);
    CHECK(cnndm == doctest::Approx(209.7).epsilon(1e-12));
    CHECK(std::abs(cnndm - 209.4) <= 0.4);
    CHECK(std::abs(cnndm - 209.5) <= 0.4);
    CHECK(s_score(42.0, 19.3, 38.6, 63.5, 46.0, 1.0) == doctest::Approx(209.4).epsilon(1e-12));

    MetricsReport report{40, 20, 35, std::nullopt, 60, 0.5, 0.0};
    refresh_s_score(report);
    CHECK(report.s_score == doctest::Approx(125.0));
}

TEST_CASE("position distribution") {
    const std::vector<std::vector<int>> first{{0}, {0}, {0}};
    const std::vector<int> lens{5, 9, 1};
    const auto d = position_distribution(first, lens);
    REQUIRE(d.size() == 20);
    CHECK(d[0] == 1.0);

    const std::vector<std::vector<int>> last{{4}};
    CHECK(position_distribution(last, std::vector<int>{5})[19] == 1.0);

    std::mt19937_64 rng(2);
    constexpr int kSamples = 10000;
    std::vector<std::vector<int>> uniform;
    std::vector<int> lengths;
    for (int i = 0; i < kSamples; ++i) {
        uniform.push_back({static_cast<int>(rng() % 21)});
        lengths.push_back(21);
    }
    const auto flat = position_distribution(uniform, lengths);
    double total = 0.0;
    double chi2 = 0.0;
    for (double f : flat) {
        total += f;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    // Positions 0..20 over 20 bins: bin 19 collects two positions.
    for (int b = 0; b < 20; ++b) {
        const double expected = (b == 19 ? 2.0 : 1.0) / 21.0 * kSamples;
        const double observed = flat[static_cast<size_t>(b)] * kSamples;
        chi2 += (observed - expected) * (observed - expected) / expected;
    }
    CHECK(chi2 < 43.8);  // 99.9th percentile of chi-square with 19 degrees of freedom

    CHECK(position_distribution(std::vector<std::vector<int>>{}, std::vector<int>{}) == std::vector<double>(20, 0.0));
}
