#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cohext/errors.hpp"
#include "cohext/extractor.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace cohext;
using namespace cohext::extractor;

namespace {

ExtractorHead make_head(int d = 16, std::uint64_t seed = 1) {
    HeadConfig cfg;
    cfg.d_model = d;
    cfg.n_heads = 2;
    cfg.max_sentences = 32;
    std::mt19937_64 rng(seed);
    return {cfg, rng};
}

encoder::SentenceEmbeddings rows_of(const ag::Matrix& m, int pad = 0) {
    std::vector<uint8_t> mask(static_cast<size_t>(m.rows()), 1);
    mask.resize(mask.size() + static_cast<size_t>(pad), 0);
    return {ag::pad_rows(ag::constant(m), static_cast<ag::Index>(mask.size())), mask};
}

ImportanceScores from_logits(std::vector<double> logits) {
    ag::Matrix m(static_cast<ag::Index>(logits.size()), 1);
    for (size_t i = 0; i < logits.size(); ++i) {
        m(static_cast<ag::Index>(i), 0) = logits[i];
    }
    const auto v = ag::parameter(m);
    return {v, ag::transpose(ag::log_softmax_rows(ag::transpose(v))), std::vector<uint8_t>(logits.size(), 1)};
}

}  // namespace

TEST_CASE("a single sentence gets all the mass") {
    const auto head = make_head();
    std::mt19937_64 rng(2);
    const auto s = head.score(rows_of(nn::normal_matrix(1, 16, 1.0, rng)));
    CHECK(s.pi().size() == 1);
    CHECK(s.pi()(0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical rows without positions score identically") {
    auto head = make_head();
    head.position_embedding().mutable_value().setZero();
    std::mt19937_64 rng(3);
    const ag::Matrix row = nn::normal_matrix(1, 16, 1.0, rng);
    const auto s = head.score(rows_of(row.replicate(5, 1)));
    const auto pi = s.pi();
    for (int i = 0; i < 5; ++i) {
        CHECK(pi(i) == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("masked rows get exactly zero mass and pi stays normalised") {
    const auto head = make_head();
    std::mt19937_64 rng(4);
    const auto s = head.score(rows_of(nn::normal_matrix(3, 16, 1.0, rng), 2));
    const auto pi = s.pi();
    REQUIRE(pi.size() == 5);
    CHECK(pi(3) == 0.0);
    CHECK(pi(4) == 0.0);
    CHECK(pi.sum() == doctest::Approx(1.0).epsilon(1e-12));
    const auto probs = s.probs();
    for (int i = 0; i < 3; ++i) {
        CHECK(probs(i) > 0.0);
        CHECK(probs(i) < 1.0);
    }
}

TEST_CASE("extractive loss examples") {
    const auto half = from_logits({0.0, 0.0});
    const std::vector<int> labels{1, 0};
    CHECK(extractive_loss(half, labels).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const auto fit = from_logits({40.0, -40.0});
    const auto loss = extractive_loss(fit, labels);
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() < 1e-15);
    ag::backward(loss);
    CHECK(fit.logits.grad().cwiseAbs().maxCoeff() < 1e-15);

    const std::vector<int> bad{1, 2};
    CHECK_THROWS_AS((void)extractive_loss(half, bad), ValidationError);
    const std::vector<int> too_many{1, 0, 1};
    CHECK_THROWS_AS((void)extractive_loss(half, too_many), ValidationError);
}

TEST_CASE("extractive loss is non-negative and ignores padded rows") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> logits(4);
        std::vector<int> labels(4);
        for (size_t i = 0; i < 4; ++i) {
            logits[i] = normal(rng);
            labels[i] = static_cast<int>(rng() % 2);
        }
        CHECK(extractive_loss(from_logits(logits), labels).item() >= 0.0);
    }
    auto padded = from_logits({0.0, 5.0, 9.0});
    padded.mask[2] = 0;
    const std::vector<int> labels{1, 0, 1};
    const auto expected = 0.5 * (std::log(2.0) + std::log1p(std::exp(5.0)));
    CHECK(extractive_loss(padded, labels).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("head parameters match finite differences") {
    const auto head = make_head(16, 6);
    std::mt19937_64 rng(7);
    const auto emb = rows_of(nn::normal_matrix(5, 16, 1.0, rng), 1);
    const std::vector<int> labels{1, 0, 0, 1, 0};
    nn::ParamList params;
    head.collect(params);
    const auto r = testing::check_params(params, [&] { return extractive_loss(head.score(emb), labels); }, 16, 8);
    INFO(r.where);
    CHECK(r.checked > 50);
    CHECK(r.worst < 1e-3);
}

TEST_CASE("gradient reaches the incoming sentence vectors") {
    const auto head = make_head(16, 9);
    std::mt19937_64 rng(10);
    auto x = ag::parameter(nn::normal_matrix(4, 16, 1.0, rng));
    const std::vector<int> labels{0, 1, 1, 0};
    const auto r = testing::check_leaf(x, [&] {
        return extractive_loss(head.score({x, std::vector<uint8_t>(4, 1)}), labels);
    });
    INFO(r.where);
    CHECK(r.worst < 1e-4);
}
