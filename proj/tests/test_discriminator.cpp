#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cohext/discriminator.hpp"
#include "cohext/errors.hpp"
#include "cohext/optim.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace cohext;
using namespace cohext::discriminator;

namespace {

DiscriminatorConfig small_config(int input_dim = 16) {
    DiscriminatorConfig c;
    c.d_model = 16;
    c.input_dim = input_dim;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_positions = 32;
    return c;
}

CoherenceDiscriminator make(const DiscriminatorConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {c, rng};
}

CoherenceScores of_scores(std::vector<double> s) {
    ag::Matrix logits(static_cast<ag::Index>(s.size()), 1);
    for (size_t i = 0; i < s.size(); ++i) {
        logits(static_cast<ag::Index>(i), 0) = std::log(s[i] / (1.0 - s[i]));
    }
    const auto l = ag::parameter(logits);
    return {l, ag::sigmoid(l)};
}

}  // namespace

TEST_CASE("one score per row, strictly inside (0, 1)") {
    const auto disc = make(small_config(), 1);
    std::mt19937_64 rng(2);
    for (int n : {1, 2, 7, 20}) {
        const auto out = disc.forward(ag::constant(nn::normal_matrix(n, 16, 3.0, rng)), {}, nn::Mode::trainable);
        REQUIRE(out.size() == n);
        CHECK((out.scores.value().array() > 0.0).all());
        CHECK((out.scores.value().array() < 1.0).all());
        CHECK(out.scores.value().allFinite());
    }
}

TEST_CASE("inputs of another width are projected") {
    const auto disc = make(small_config(24), 3);
    std::mt19937_64 rng(4);
    const auto out = disc.forward(ag::constant(nn::normal_matrix(3, 24, 1.0, rng)), {}, nn::Mode::trainable);
    CHECK(out.size() == 3);
    CHECK_THROWS_AS((void)disc.forward(ag::constant(nn::normal_matrix(3, 16, 1.0, rng)), {}, nn::Mode::trainable),
                    ValidationError);
}

TEST_CASE("discriminator loss examples") {
    const std::vector<int> one{1};
    CHECK(discriminator_loss(of_scores({0.5}), one).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const auto perfect = of_scores({1.0 - 1e-16, 1e-16});
    CHECK(discriminator_loss(perfect, std::vector<int>{1, 0}).item() < 1e-14);

    const std::vector<int> two{1, 0};
    CHECK_THROWS_AS((void)discriminator_loss(of_scores({0.5}), two), ValidationError);
    CHECK_THROWS_AS((void)discriminator_loss(of_scores({0.5, 0.5}), std::vector<int>{1, 3}), ValidationError);

    const std::vector<uint8_t> mask{1, 0};
    CHECK(discriminator_loss(of_scores({0.5, 0.9}), two, mask).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("coherent score and coherence loss") {
    const auto s = of_scores({0.2, 0.4, 0.6});
    CHECK(coherent_score(s).item() == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(coherent_score(of_scores({0.73})).item() == doctest::Approx(0.73).epsilon(1e-12));
    CHECK(coherent_score(of_scores({0.3, 0.3, 0.3, 0.3})).item() == doctest::Approx(0.3).epsilon(1e-12));

    const auto loss = coherence_loss(s);
    CHECK(loss.item() == doctest::Approx(-0.4).epsilon(1e-12));

    // d loss / d score_i = -1/m, read through the sigmoid: dL/dlogit = -s(1-s)/m.
    ag::backward(loss);
    const ag::Matrix sv = s.scores.value();
    for (int i = 0; i < 3; ++i) {
        const double expected = -sv(i, 0) * (1.0 - sv(i, 0)) / 3.0;
        CHECK(s.logits.grad()(i, 0) == doctest::Approx(expected).epsilon(1e-12));
    }

    const auto raw = ag::parameter(ag::Matrix::Constant(4, 1, 0.5));
    const auto direct = coherence_loss({raw, raw});
    ag::backward(direct);
    CHECK((raw.grad().array() + 0.25).abs().maxCoeff() < 1e-15);

    for (int i = 0; i < 3; ++i) {
        std::vector<double> bumped{0.2, 0.4, 0.6};
        bumped[static_cast<size_t>(i)] += 0.1;
        CHECK(coherence_loss(of_scores(bumped)).item() < loss.item());
    }

    const CoherenceScores empty{ag::constant(ag::Matrix(0, 1)), ag::constant(ag::Matrix(0, 1))};
    CHECK_THROWS_AS((void)coherent_score(empty), ValidationError);
    CHECK_THROWS_AS((void)coherence_loss(empty), ValidationError);

    const auto bce = coherence_loss(of_scores({0.5, 0.5}), CoherenceLossKind::bce_to_one);
    CHECK(bce.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("frozen mode blocks parameter gradients but not input gradients") {
    const auto disc = make(small_config(), 5);
    nn::ParamList params;
    disc.collect(params);
    std::mt19937_64 rng(6);
    const auto x = ag::parameter(nn::normal_matrix(4, 16, 1.0, rng));
    nn::zero_grads(params);
    ag::backward(coherence_loss(disc.forward(x, {}, nn::Mode::frozen)));
    CHECK(nn::max_abs_grad(params) == 0.0);
    CHECK(x.grad().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("all-coherent sanity fit drives the loss below 0.1") {
    auto c = small_config();
    c.n_layers = 1;
    const auto disc = make(c, 7);
    nn::ParamList params;
    disc.collect(params);
    optim::AdamConfig ac;
    ac.lr = 1e-2;
    optim::Adam adam(params, ac);
    std::mt19937_64 rng(8);
    double loss = 1.0;
    for (int step = 0; step < 60 && loss >= 0.1; ++step) {
        const int n = 3 + static_cast<int>(rng() % 6);
        const std::vector<int> ones(static_cast<size_t>(n), 1);
        const auto l = discriminator_loss(
            disc.forward(ag::constant(nn::normal_matrix(n, 16, 1.0, rng)), {}, nn::Mode::trainable), ones);
        loss = l.item();
        ag::backward(l);
        adam.step();
    }
    CHECK(loss < 0.1);
}

TEST_CASE("discriminator parameters match finite differences") {
    for (bool pre_norm : {false, true}) {
        auto c = small_config(12);
        c.pre_norm = pre_norm;
        const auto disc = make(c, 9);
        std::mt19937_64 rng(10);
        const auto x = ag::constant(nn::normal_matrix(6, 12, 1.0, rng));
        const std::vector<int> labels{1, 0, 1, 1, 0, 0};
        const std::vector<uint8_t> mask{1, 1, 1, 1, 1, 0};
        nn::ParamList params;
        disc.collect(params);
        const auto r = testing::check_params(
            params, [&] { return discriminator_loss(disc.forward(x, mask, nn::Mode::trainable), labels, mask); }, 12,
            11);
        INFO(pre_norm, r.where);
        CHECK(r.checked > 50);
        CHECK(r.worst < 1e-3);
    }
}
