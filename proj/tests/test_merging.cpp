#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cohext/errors.hpp"
#include "cohext/merging.hpp"
#include "cohext/selection.hpp"
#include "gradcheck.hpp"

#include <numeric>

using namespace cohext;
using namespace cohext::merging;

namespace {

ag::Matrix gather(const ag::Matrix& e, const std::vector<int>& s) {
    std::vector<int> rows;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == 1) {
            rows.push_back(static_cast<int>(i));
        }
    }
    ag::Matrix out(static_cast<ag::Index>(rows.size()), e.cols());
    for (size_t j = 0; j < rows.size(); ++j) {
        out.row(static_cast<ag::Index>(j)) = e.row(rows[j]);
    }
    return out;
}

ag::Var column(const std::vector<double>& v) {
    ag::Matrix m(static_cast<ag::Index>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) {
        m(static_cast<ag::Index>(i), 0) = v[i];
    }
    return ag::parameter(m);
}

ConverterConfig small_converter() {
    ConverterConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_hidden = 12;
    c.lambda_len = 8.0;
    c.max_positions = 32;
    return c;
}

}  // namespace

TEST_CASE("converting matrix examples") {
    const std::vector<int> s{1, 1, 0, 0, 1};
    ag::Matrix expected = ag::Matrix::Zero(5, 3);
    expected(0, 0) = expected(1, 1) = expected(4, 2) = 1.0;
    CHECK(mat_converting_matrix(s, 3) == expected);

    CHECK(mat_converting_matrix(std::vector<int>{1, 1, 1, 1}, 4) == ag::Matrix::Identity(4, 4));
    ag::Matrix last(2, 1);
    last << 0.0, 1.0;
    CHECK(mat_converting_matrix(std::vector<int>{0, 1}, 1) == last);

    CHECK_THROWS_AS((void)mat_converting_matrix(s, 2), ValidationError);
    CHECK_THROWS_AS((void)mat_converting_matrix(std::vector<int>{1, 2, 0}, 2), ValidationError);
}

TEST_CASE("merging the worked example keeps e1, e2, e5") {
    std::mt19937_64 rng(1);
    const auto e = ag::constant(nn::normal_matrix(5, 4, 1.0, rng));
    const auto ep = selection::apply_selection(column({1, 1, 0, 0, 1}), e);
    const auto ed = merge(ep, mat_converting_matrix(std::vector<int>{1, 1, 0, 0, 1}, 3)).value();
    REQUIRE(ed.rows() == 3);
    CHECK(ed.row(0) == e.value().row(0));
    CHECK(ed.row(1) == e.value().row(1));
    CHECK(ed.row(2) == e.value().row(4));
    CHECK(merge(e, ag::Matrix::Identity(5, 5)).value() == e.value());
    CHECK_THROWS_AS((void)merge(e, ag::Matrix::Identity(4, 4)), ValidationError);
}

TEST_CASE("hard merge equals a row gather for every selection with n <= 8") {
    std::mt19937_64 rng(2);
    int cases = 0;
    for (int n = 1; n <= 8; ++n) {
        const ag::Matrix e = nn::normal_matrix(n, 6, 1.0, rng);
        for (int bits = 1; bits < (1 << n); ++bits) {
            std::vector<int> s(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                s[static_cast<size_t>(i)] = (bits >> i) & 1;
            }
            const int m = std::accumulate(s.begin(), s.end(), 0);
            const auto masked = selection::apply_selection(column(std::vector<double>(s.begin(), s.end())),
                                                           ag::constant(e));
            CHECK(merge(masked, mat_converting_matrix(s, m)).value() == gather(e, s));
            ++cases;
        }
    }
    CHECK(cases == 502);
}

TEST_CASE("gradient reaching s_hat through the hard merge") {
    std::mt19937_64 rng(3);
    const auto e = ag::constant(nn::normal_matrix(5, 4, 1.0, rng));
    const std::vector<int> s{1, 0, 1, 1, 0};
    const auto m = mat_converting_matrix(s, 3);
    const auto w = ag::constant(nn::normal_matrix(3, 4, 1.0, rng));
    const auto s_hat = column({1, 0, 1, 1, 0});
    const auto loss = [&] { return ag::sum(ag::hadamard(merge(selection::apply_selection(s_hat, e), m), w)); };
    const auto r = testing::check_leaf(s_hat, loss);
    CHECK(r.worst < 1e-6);

    // d/ds_hat(i) = <dL/dE'_i, e_i>, where dL/dE' = M w.
    ag::backward(loss());
    const ag::Matrix upstream = m * w.value();
    for (int i = 0; i < 5; ++i) {
        CHECK(s_hat.grad()(i, 0) == doctest::Approx(upstream.row(i).dot(e.value().row(i))).epsilon(1e-12));
    }
}

TEST_CASE("converter output is column-stochastic and differentiable in s_hat") {
    std::mt19937_64 rng(4);
    const Converter conv(small_converter(), rng);
    const auto s_hat = column({0, 1, 1, 0, 0, 1, 0});
    const auto mat = conv.forward(s_hat, 3);
    REQUIRE(mat.rows() == 7);
    REQUIRE(mat.cols() == 3);
    CHECK((mat.value().colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((mat.value().array() >= 0.0).all());

    const auto e = ag::constant(nn::normal_matrix(7, 5, 1.0, rng));
    const auto merged = merge(selection::apply_selection(s_hat, e), mat);
    // Rows of the merge are convex combinations of E' rows: bounded by the row extremes.
    const ag::Matrix ep = selection::apply_selection(s_hat, e).value();
    for (int c = 0; c < 5; ++c) {
        CHECK(merged.value().col(c).maxCoeff() <= ep.col(c).maxCoeff() + 1e-12);
        CHECK(merged.value().col(c).minCoeff() >= ep.col(c).minCoeff() - 1e-12);
    }
    ag::backward(ag::sum(merged));
    CHECK(s_hat.grad().cwiseAbs().maxCoeff() > 1e-8);

    const auto r = testing::check_leaf(s_hat, [&] {
        return ag::sum(ag::hadamard(merge(selection::apply_selection(s_hat, e), conv.forward(s_hat, 3)),
                                    ag::constant(ag::Matrix::Ones(3, 5))));
    });
    CHECK(r.worst < 1e-4);
}

TEST_CASE("converter parameters match finite differences") {
    std::mt19937_64 rng(5);
    const Converter conv(small_converter(), rng);
    nn::ParamList params;
    conv.collect(params);
    const std::vector<int> s{0, 1, 0, 1, 1, 0};
    const auto r = testing::check_params(params, [&] { return converter_loss(conv, s); }, 12, 6);
    INFO(r.where);
    CHECK(r.worst < 1e-3);
}

TEST_CASE("converter training target and samples") {
    const std::vector<int> s{0, 1, 1, 0, 1};
    ag::Matrix target = ag::Matrix::Zero(5, 3);
    target(1, 0) = target(2, 1) = target(4, 2) = 1.0;
    CHECK(mat_converting_matrix(s, 3) == target);

    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; ++i) {
        const auto v = sample_binary_vector(2.0, 3, 40, rng);
        CHECK(v.size() >= 3);
        CHECK(v.size() <= 40);
        CHECK(std::accumulate(v.begin(), v.end(), 0) == 3);
    }
}

TEST_CASE("a short converter pretraining lowers the loss") {
    std::mt19937_64 rng(8);
    Converter conv(small_converter(), rng);
    PretrainOptions opt;
    opt.steps = 200;
    opt.batch_size = 8;
    opt.lr = 3e-3;
    opt.seed = 9;
    const auto result = pretrain_converter(conv, opt);
    REQUIRE(result.loss_history.size() == 200);
    const auto window = [&](size_t begin) {
        return std::accumulate(result.loss_history.begin() + static_cast<long>(begin),
                               result.loss_history.begin() + static_cast<long>(begin + 20), 0.0) / 20.0;
    };
    CHECK(window(80) < window(0));
    CHECK(window(180) < window(80));

    std::mt19937_64 held(10);
    std::vector<std::vector<int>> samples;
    for (int i = 0; i < 200; ++i) {
        samples.push_back(sample_binary_vector(8.0, 3, 32, held));
    }
    const double acc = column_accuracy(conv, samples);
    CHECK(acc > 1.0 / 8.0);
    CHECK(acc <= 1.0);
}
