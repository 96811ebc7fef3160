#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cohext/config.hpp"
#include "cohext/errors.hpp"
#include "cohext/trainer.hpp"
#include "helpers.hpp"

#include <fstream>
#include <sstream>

using namespace cohext;
using namespace cohext::trainer;

namespace {

struct Setup {
    config::RunConfig cfg;
    config::Datasets ds;
    Model model;

    explicit Setup(int docs = 24, int d = 16, std::uint64_t seed = 0) : cfg(testing::tiny_config(docs, d)) {
        ds = config::load_datasets(cfg);
        model = testing::tiny_model(cfg, ds, seed);
    }
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool same_weights(const WeightMap& a, const WeightMap& b, const std::string& prefix) {
    for (const auto& [name, m] : a) {
        if (name.rfind(prefix, 0) == 0 && m != b.at(name)) {
            return false;
        }
    }
    return true;
}

metrics::MetricsReport report_of(double r1, double r2, double rl, double cons) {
    metrics::MetricsReport r{r1, r2, rl, std::nullopt, cons, 1.0, 0.0};
    metrics::refresh_s_score(r);
    return r;
}

}  // namespace

TEST_CASE("total loss") {
    TrainConfig c;
    c.lambda_ext = c.lambda_dis = c.lambda_cohe = 1.0;
    CHECK(total_loss(1.0, 2.0, 3.0, c) == 6.0);
    c.lambda_ext = 0.0;
    CHECK(total_loss(1.0, 2.0, 3.0, c) == total_loss(99.0, 2.0, 3.0, c));
    CHECK_THROWS_AS((void)total_loss(std::nan(""), 2.0, 3.0, c), TrainingError);
    CHECK_THROWS_AS((void)total_loss(1.0, INFINITY, 3.0, c), TrainingError);
    c.lambda_dis = c.lambda_cohe = 0.0;
    CHECK_THROWS_AS((void)total_loss(1.0, 2.0, 3.0, c), ValidationError);
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("gradient routing holds on random documents") {
    Setup s;
    auto cfg = s.cfg.finetune;
    cfg.lambda_ext = 1.0;
    auto rng = make_stream(11, Stream::augment);
    for (const auto method : {selection::Method::gumbel_softmax_topk, selection::Method::gumbel_topk,
                              selection::Method::topk}) {
        cfg.method = method;
        for (size_t i = 0; i < 6; ++i) {
            const auto& doc = s.ds.train.documents[i];
            const auto sdoc = augment::shuffle_document(doc, augment::sample_num_switches(2.0, doc.size(), rng), rng);
            const auto r = routing_report(s.model, sdoc, cfg, 100 + i);
            CHECK(r.dis_to_encoder == 0.0);
            CHECK(r.dis_to_head == 0.0);
            CHECK(r.cohe_to_discriminator == 0.0);
            CHECK(r.ext_to_discriminator == 0.0);
            CHECK(r.cohe_product_path == 0.0);
            CHECK(r.max_leak() < 1e-12);
            CHECK(r.dis_to_discriminator > 0.0);
            CHECK(r.ext_to_encoder > 0.0);
            CHECK(r.cohe_to_head > 0.0);
            CHECK(nn::max_abs_grad(s.model.all_params()) == 0.0);
        }
    }
}

TEST_CASE("the product-path probe sees gradient when the block is removed") {
    // With s_hat detached, the coherence loss can only reach the encoder through
    // e_i. The structural detach keeps that at zero; a live selection path does not.
    Setup s;
    auto cfg = s.cfg.finetune;
    const auto& doc = s.ds.train.documents[0];
    auto rng = make_stream(3, Stream::augment);
    const auto sdoc = augment::shuffle_document(doc, 2, rng);

    auto noise = make_stream(5, Stream::noise);
    const auto blocked = forward_document(s.model, sdoc, cfg, noise, {0, nullptr, true});
    ag::backward(blocked.l_cohe);
    CHECK(nn::max_abs_grad(s.model.extractor_params()) == 0.0);
    nn::zero_grads(s.model.all_params());

    auto noise2 = make_stream(5, Stream::noise);
    const auto open = forward_document(s.model, sdoc, cfg, noise2);
    ag::backward(open.l_cohe);
    CHECK(nn::max_abs_grad(s.model.encoder_params()) > 0.0);
    CHECK(nn::max_abs_grad(s.model.discriminator_params()) == 0.0);
    nn::zero_grads(s.model.all_params());

    const auto& e = open.embeddings.vectors.value();
    const auto& ep = open.e_prime.value();
    for (int i = 0; i < static_cast<int>(open.selection.s_tk.size()); ++i) {
        const double weight = open.selection.s_tk[static_cast<size_t>(i)];
        CHECK((ep.row(i) - weight * e.row(i)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(open.merged.rows() == std::min(cfg.k, doc.size()));
}

TEST_CASE("stage 1 leaves the discriminator untouched and is deterministic") {
    const auto dir = testing::scratch_dir("trainer_stage1");
    std::vector<std::string> logs;
    for (int run = 0; run < 2; ++run) {
        Setup s;
        const auto before = s.model.snapshot();
        const auto result = pretrain_stage(s.model, s.ds.train, s.ds.validation, s.cfg.pretrain);
        const auto after = s.model.snapshot();
        CHECK(same_weights(before, after, "discriminator."));
        CHECK_FALSE(same_weights(before, after, "encoder."));
        CHECK_FALSE(same_weights(before, after, "head."));
        REQUIRE(result.log.size() == 3);  // steps 0, 3, 6
        CHECK(result.log.front().step == 0);
        const auto path = dir / ("log" + std::to_string(run) + ".csv");
        write_log_csv(result.log, path);
        logs.push_back(slurp(path));
    }
    CHECK(logs[0] == logs[1]);
    CHECK(logs[0].rfind(std::string(kLogHeader) + "\n", 0) == 0);
}

TEST_CASE("pretraining needs labels") {
    Setup s;
    auto train = s.ds.train;
    train.documents[2].labels.reset();
    CHECK_THROWS_AS((void)pretrain_stage(s.model, train, s.ds.validation, s.cfg.pretrain), ValidationError);
}

TEST_CASE("stage 2 determinism and the discriminator-only setting") {
    std::vector<std::vector<LogRow>> logs;
    for (int run = 0; run < 2; ++run) {
        Setup s;
        logs.push_back(finetune_stage(s.model, s.ds.train, s.ds.validation, s.cfg.finetune).log);
    }
    REQUIRE(logs[0].size() == logs[1].size());
    for (size_t i = 0; i < logs[0].size(); ++i) {
        CHECK(logs[0][i].report.s_score == logs[1][i].report.s_score);
        CHECK(logs[0][i].l_dis == logs[1][i].l_dis);
        CHECK(logs[0][i].l_cohe == logs[1][i].l_cohe);
    }

    // Only the discriminator loss is on: the extractor must not move.
    Setup s;
    auto cfg = s.cfg.finetune;
    cfg.lambda_ext = 0.0;
    cfg.lambda_dis = 1.0;
    cfg.lambda_cohe = 0.0;
    const auto before = s.model.snapshot();
    (void)finetune_stage(s.model, s.ds.train, s.ds.validation, cfg);
    const auto after = s.model.snapshot();
    CHECK(same_weights(before, after, "encoder."));
    CHECK(same_weights(before, after, "head."));
    CHECK_FALSE(same_weights(before, after, "discriminator."));
}

TEST_CASE("pretraining improves validation RL on planted labels") {
    auto cfg = testing::tiny_config(80, 16);
    cfg.data.synth_train = 60;
    cfg.data.synth_validation = 20;
    cfg.pretrain.max_steps = 500;
    cfg.pretrain.eval_every = 50;
    const auto ds = config::load_datasets(cfg);
    auto model = testing::tiny_model(cfg, ds, 1);
    const auto result = pretrain_stage(model, ds.train, ds.validation, cfg.pretrain);
    REQUIRE(result.log.size() == 11);
    // Three-point moving average, first window against last.
    const auto smoothed = [&](size_t i) {
        return (result.log[i].report.rl + result.log[i + 1].report.rl + result.log[i + 2].report.rl) / 3.0;
    };
    CHECK(smoothed(8) > smoothed(0));
}

TEST_CASE("checkpoint selection") {
    CHECK_THROWS_AS((void)select_checkpoint(std::vector<Checkpoint>{}, 1.0), ValidationError);

    std::vector<Checkpoint> one{{5, report_of(10, 20, 30, 50), 0.0, {}}};
    CHECK(select_checkpoint(one, 1.0).step == 5);
    CHECK(metrics::s_score(10, 20, 30, 40, 50, 1.0) == 150.0);

    std::vector<metrics::MetricsReport> tied{report_of(10, 10, 10, 10), report_of(20, 0, 10, 10),
                                             report_of(10, 10, 10, 10)};
    CHECK(select_checkpoint_index(tied, 1.0) == 0);

    std::vector<metrics::MetricsReport> trade{report_of(30, 10, 30, 20), report_of(25, 8, 25, 40),
                                              report_of(20, 5, 20, 70)};
    CHECK(select_checkpoint_index(trade, 0.0) == 0);
    CHECK(select_checkpoint_index(trade, 5.0) == 2);
}

TEST_CASE("selected ConsProp never falls as alpha grows") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> pct(0.0, 100.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<metrics::MetricsReport> log;
        for (int i = 0; i < 8; ++i) {
            log.push_back(report_of(pct(rng), pct(rng) / 2, pct(rng), pct(rng)));
        }
        double previous = -1.0;
        for (double alpha = 0.0; alpha <= 10.0; alpha += 0.25) {
            const double cons = log[select_checkpoint_index(log, alpha)].cons_prop;
            CHECK(cons >= previous);
            previous = cons;
        }
    }
}

TEST_CASE("log CSV round trip and median report") {
    const auto dir = testing::scratch_dir("trainer_csv");
    std::vector<LogRow> log{{0, report_of(10.5, 2.25, 9.125, 40), 0.5, 0.25, -0.125},
                            {200, report_of(11, 3, 10, 45), 0.4, 0.2, -0.3}};
    log[1].report.bs = 61.5;
    metrics::refresh_s_score(log[1].report);
    write_log_csv(log, dir / "log.csv");
    const auto back = read_log_csv(dir / "log.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].step == 0);
    CHECK(back[0].report.r2 == 2.25);
    CHECK_FALSE(back[0].report.bs.has_value());
    CHECK(back[1].report.bs.value() == 61.5);
    CHECK(back[1].l_cohe == -0.3);
    CHECK(back[1].report.s_score == doctest::Approx(log[1].report.s_score).epsilon(1e-12));

    const std::vector<metrics::MetricsReport> runs{report_of(10, 1, 5, 30), report_of(30, 3, 2, 10),
                                                   report_of(20, 2, 9, 20)};
    const auto m = median_report(runs);
    CHECK(m.r1 == 20);
    CHECK(m.r2 == 2);
    CHECK(m.rl == 5);
    CHECK(m.cons_prop == 20);
    CHECK(m.s_score == doctest::Approx(47.0));
}

TEST_CASE("alpha changes only the S-score of an evaluation") {
    Setup s;
    auto a = s.cfg.finetune;
    auto b = a;
    a.alpha = 0.0;
    b.alpha = 5.0;
    const auto ra = evaluate(s.model, s.ds.validation, a);
    const auto rb = evaluate(s.model, s.ds.validation, b);
    CHECK(ra.report.r1 == rb.report.r1);
    CHECK(ra.report.rl == rb.report.rl);
    CHECK(ra.report.cons_prop == rb.report.cons_prop);
    CHECK(ra.predictions == rb.predictions);
    CHECK(rb.report.s_score - ra.report.s_score == doctest::Approx(5.0 * ra.report.cons_prop));
}

TEST_CASE("external scores enter the report") {
    Setup s;
    ExternalScores bs;
    for (const auto& d : s.ds.validation.documents) {
        bs[d.id] = 60.0;
    }
    const auto with = evaluate(s.model, s.ds.validation, s.cfg.finetune, &bs);
    REQUIRE(with.report.bs.has_value());
    CHECK(*with.report.bs == doctest::Approx(60.0));
    bs.erase(s.ds.validation.documents[0].id);
    CHECK_THROWS_AS((void)evaluate(s.model, s.ds.validation, s.cfg.finetune, &bs), ValidationError);
}
