// Acceptance checks. Prints one PASS/FAIL line per criterion and exits 1 if
// any selected criterion fails.
//
//   acceptance [--only NAME]... [--skip NAME]... [--config configs/toy.ini] [--seeds 3]

#include "cohext/augment.hpp"
#include "cohext/config.hpp"
#include "cohext/errors.hpp"
#include "cohext/merging.hpp"
#include "cohext/metrics.hpp"
#include "cohext/selection.hpp"
#include "cohext/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

using namespace cohext;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass{false};
    std::string detail;
    // Set when only part of the work counts against the budget.
    std::optional<double> timed_seconds;

    Outcome() = default;
    Outcome(bool p, std::string d, std::optional<double> t = std::nullopt)
        : pass(p), detail(std::move(d)), timed_seconds(t) {}
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* format, auto... args) {
    char buf[1024];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

ag::Var column(const Eigen::VectorXd& v) { return ag::parameter(ag::Matrix(v)); }

// ---------------------------------------------------------------- routing

Outcome routing(const config::RunConfig& base) {
    auto cfg = base;
    const auto ds = config::load_datasets(cfg);
    cfg.model.encoder.vocab_size = ds.vocab.size();
    const auto model = Model::create(cfg.model, cfg.seed);
    auto tc = cfg.finetune;
    tc.lambda_ext = 1.0;

    auto rng = trainer::make_stream(cfg.seed + 17, trainer::Stream::augment);
    std::uniform_int_distribution<size_t> pick(0, ds.train.documents.size() - 1);
    double dis_encoder = 0.0;
    double cohe_disc = 0.0;
    double product = 0.0;
    double leak = 0.0;
    double cohe_head_min = std::numeric_limits<double>::infinity();
    int documents = 0;
    constexpr int kBatches = 50;
    for (int b = 0; b < kBatches; ++b) {
        for (int i = 0; i < tc.batch_size; ++i) {
            const auto& doc = ds.train.documents[pick(rng)];
            const int switches = augment::sample_num_switches(tc.lambda_shuffle, doc.size(), rng);
            const auto sdoc = augment::shuffle_document(doc, switches, rng);
            const auto r = trainer::routing_report(model, sdoc, tc, rng());
            dis_encoder = std::max({dis_encoder, r.dis_to_encoder, r.dis_to_head});
            cohe_disc = std::max(cohe_disc, r.cohe_to_discriminator);
            product = std::max(product, r.cohe_product_path);
            leak = std::max(leak, r.max_leak());
            cohe_head_min = std::min(cohe_head_min, r.cohe_to_head);
            ++documents;
        }
    }
    const bool pass = dis_encoder < 1e-12 && cohe_disc < 1e-12 && product < 1e-12 && leak < 1e-12;
    return {pass, fmt("%d batches, %d documents: |dLdis/dencoder| %.1e, |dLcohe/ddisc| %.1e, product path %.1e "
                      "(smallest live |dLcohe/dhead| %.1e)",
                      kBatches, documents, dis_encoder, cohe_disc, product, cohe_head_min)};
}

// -------------------------------------------------------- straight-through

Outcome straight_through() {
    std::mt19937_64 rng(5);
    bool forward_exact = true;
    double jacobian_error = 0.0;
    double numeric_error = 0.0;
    int vectors = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 15;
        const int k = 1 + trial % n;
        const auto log_pi = ag::parameter(nn::normal_matrix(n, 1, 1.0, rng));
        const std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
        const auto sel = trial % 2 == 0 ? selection::gumbel_softmax_topk(log_pi, mask, 1.0, k, rng)
                                        : selection::gumbel_topk(log_pi, mask, k, rng);
        for (int i = 0; i < n; ++i) {
            forward_exact = forward_exact && sel.s_hat.value()(i, 0) == static_cast<double>(sel.s_tk[static_cast<size_t>(i)]);
        }

        // Reverse mode, one output row at a time.
        const Eigen::VectorXd y0 = sel.y.value().col(0);
        for (int i = 0; i < n; ++i) {
            const auto y = column(y0);
            const auto s_hat = selection::straight_through(sel.s_tk, y);
            ag::Matrix pick = ag::Matrix::Zero(n, 1);
            pick(i, 0) = 1.0;
            ag::backward(ag::sum(ag::hadamard(s_hat, ag::constant(pick))));
            jacobian_error = std::max(jacobian_error, (y.grad() - pick).cwiseAbs().maxCoeff());
        }

        // Central differences of the estimator's surrogate y + [s_tk - y]_fixed,
        // with the bracketed term held at its value at y0.
        Eigen::VectorXd hard(n);
        for (int i = 0; i < n; ++i) {
            hard(i) = sel.s_tk[static_cast<size_t>(i)];
        }
        const Eigen::VectorXd fixed = hard - y0;
        constexpr double h = 1e-3;
        for (int j = 0; j < n; ++j) {
            Eigen::VectorXd up = y0;
            Eigen::VectorXd down = y0;
            up(j) += h;
            down(j) -= h;
            const Eigen::VectorXd col = ((up + fixed) - (down + fixed)) / (2.0 * h);
            Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
            unit(j) = 1.0;
            numeric_error = std::max(numeric_error, (col - unit).cwiseAbs().maxCoeff());
        }
        ++vectors;
    }
    const bool pass = forward_exact && jacobian_error < 1e-10 && numeric_error < 1e-10;
    return {pass, fmt("%d selections: forward %s, reverse-mode Jacobian error %.1e, finite-difference error %.1e",
                      vectors, forward_exact ? "bitwise equal" : "MISMATCH", jacobian_error, numeric_error)};
}

// ----------------------------------------------------------------- merging

Outcome merging_equivalence() {
    std::mt19937_64 rng(2);
    int cases = 0;
    int mismatches = 0;
    for (int n = 1; n <= 8; ++n) {
        const ag::Matrix e = nn::normal_matrix(n, 8, 1.0, rng);
        for (int bits = 1; bits < (1 << n); ++bits) {
            const int m = __builtin_popcount(static_cast<unsigned>(bits));
            if (m > 3) {
                continue;
            }
            std::vector<int> s(static_cast<size_t>(n));
            Eigen::VectorXd s_hat(n);
            std::vector<int> rows;
            for (int i = 0; i < n; ++i) {
                s[static_cast<size_t>(i)] = (bits >> i) & 1;
                s_hat(i) = s[static_cast<size_t>(i)];
                if (s[static_cast<size_t>(i)] == 1) {
                    rows.push_back(i);
                }
            }
            ag::Matrix gathered(m, e.cols());
            for (int j = 0; j < m; ++j) {
                gathered.row(j) = e.row(rows[static_cast<size_t>(j)]);
            }
            const auto e_prime = selection::apply_selection(column(s_hat), ag::constant(e));
            const auto merged = merging::merge(e_prime, merging::mat_converting_matrix(s, m)).value();
            mismatches += merged == gathered ? 0 : 1;
            ++cases;
        }
    }
    return {mismatches == 0, fmt("%d binary vectors (n <= 8, K <= 3), %d mismatches", cases, mismatches)};
}

// ----------------------------------------------------------------- metrics

Outcome metric_oracles() {
    int lists = 0;
    int cons_mismatch = 0;
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
        int pairs = 1;
        for (size_t j = 1; j < idx.size(); ++j) {
            pairs += idx[j] == idx[j - 1] + 1 ? 1 : 0;
        }
        const double oracle = static_cast<double>(pairs) / static_cast<double>(idx.size());
        cons_mismatch += metrics::consecutive_proportion(idx) == oracle ? 0 : 1;
        ++lists;
    }

    struct Hand {
        double got;
        double expected;
    };
    const auto r1 = metrics::rouge_n("the cat sat", "the cat", 1);
    const auto rl = metrics::rouge_l("a b c", "a c");
    const std::vector<Hand> hand{
        {r1.precision, 2.0 / 3.0},
        {r1.recall, 1.0},
        {r1.f1, 0.8},
        {metrics::rouge_n("a b c", "a b c", 1).f1, 1.0},
        {metrics::rouge_n("a b", "c d", 1).f1, 0.0},
        {rl.precision, 2.0 / 3.0},
        {rl.recall, 1.0},
        {rl.f1, 0.8},
        {metrics::rouge_l("a b c", "a b c").f1, 1.0},
        {metrics::rouge_l("a b c", "").f1, 0.0},
        {metrics::consecutive_proportion(std::vector<int>{3, 4, 7}), 2.0 / 3.0},
        {metrics::consecutive_proportion(std::vector<int>{0, 1, 2}), 1.0},
        {metrics::consecutive_proportion(std::vector<int>{2, 5, 9}), 1.0 / 3.0},
    };
    double worst = 0.0;
    for (const auto& h : hand) {
        worst = std::max(worst, std::abs(h.got - h.expected));
    }
    const bool pass = cons_mismatch == 0 && worst < 1e-9;
    return {pass, fmt("%d index lists, %d mismatches; %zu hand cases, worst error %.1e", lists, cons_mismatch,
                      hand.size(), worst)};
}

// ----------------------------------------------------------- distributions

Outcome distributions() {
    std::mt19937_64 rng(1);
    const double gumbel_mean = selection::gumbel_noise(10000, rng).mean();
    const double gumbel_rel = std::abs(gumbel_mean - std::numbers::egamma) / std::numbers::egamma;

    const std::vector<double> pi{0.5, 0.3, 0.2};
    Eigen::VectorXd log_pi(3);
    for (int i = 0; i < 3; ++i) {
        log_pi(i) = std::log(pi[static_cast<size_t>(i)]);
    }
    const auto lp = column(log_pi);
    const std::vector<uint8_t> mask(3, 1);
    std::vector<int> counts(3, 0);
    constexpr int kTrials = 10000;
    for (int t = 0; t < kTrials; ++t) {
        ++counts[static_cast<size_t>(selection::gumbel_topk(lp, mask, 1, rng).selected()[0])];
    }
    double freq_gap = 0.0;
    for (size_t i = 0; i < 3; ++i) {
        freq_gap = std::max(freq_gap, std::abs(counts[i] / static_cast<double>(kTrials) - pi[i]));
    }

    constexpr double kLambda = 2.0;
    double total = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        total += augment::sample_num_switches(kLambda, 1000, rng);
    }
    const double poisson_rel = std::abs(total / kTrials - kLambda) / kLambda;

    const bool pass = gumbel_rel < 0.05 && freq_gap < 0.02 && poisson_rel < 0.05;
    return {pass, fmt("Gumbel mean %.4f (%.1f%% off), GK frequencies %d/%d/%d (max gap %.1f points), "
                      "Poisson mean %.3f (%.1f%% off)",
                      gumbel_mean, 100 * gumbel_rel, counts[0], counts[1], counts[2], 100 * freq_gap,
                      total / kTrials, 100 * poisson_rel)};
}

// --------------------------------------------------------------- converter

Outcome converter(const config::RunConfig& base) {
    auto cfg = base;
    const auto ds = config::load_datasets(cfg);
    auto cc = cfg.model.converter;
    cc.lambda_len = corpus::mean_sentence_count(ds.train, cfg.model.encoder.max_tokens);

    std::mt19937_64 init(cfg.seed);
    merging::Converter conv(cc, init);
    auto held = trainer::make_stream(cfg.seed, trainer::Stream::validation_shuffle);
    std::vector<std::vector<int>> samples;
    for (int i = 0; i < 1000; ++i) {
        samples.push_back(merging::sample_binary_vector(cc.lambda_len, cc.k_target, cc.max_positions, held));
    }

    constexpr int kMaxSteps = 5000;
    constexpr int kChunk = 250;
    merging::PretrainOptions opt = cfg.converter_training;
    opt.steps = kChunk;
    double accuracy = 0.0;
    int steps = 0;
    while (steps < kMaxSteps) {
        opt.seed = cfg.seed + static_cast<std::uint64_t>(steps);  // fresh samples per chunk
        (void)merging::pretrain_converter(conv, opt);
        steps += kChunk;
        accuracy = merging::column_accuracy(conv, samples);
        if (accuracy >= 0.95) {
            break;
        }
    }
    return {accuracy >= 0.95, fmt("column accuracy %.4f on %zu held-out vectors after %d steps (length mean %.2f)",
                                  accuracy, samples.size(), steps, cc.lambda_len)};
}

// --------------------------------------------------------------- toy trend

struct ToyRun {
    metrics::MetricsReport stage1;
    metrics::MetricsReport stage2;
    std::vector<metrics::MetricsReport> stage2_log;
};

ToyRun toy_run(config::RunConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.resolve();
    const auto ds = config::load_datasets(cfg);
    cfg.model.encoder.vocab_size = ds.vocab.size();
    auto model = Model::create(cfg.model, seed);
    ToyRun out;
    const auto s1 = trainer::pretrain_stage(model, ds.train, ds.validation, cfg.pretrain);
    out.stage1 = s1.best_checkpoint().report;
    model.load(s1.best_checkpoint().weights);
    const auto s2 = trainer::finetune_stage(model, ds.train, ds.validation, cfg.finetune);
    out.stage2 = s2.best_checkpoint().report;
    for (const auto& row : s2.log) {
        out.stage2_log.push_back(row.report);
    }
    return out;
}

Outcome toy_trend(const config::RunConfig& cfg, int seeds, std::vector<ToyRun>& runs) {
    std::vector<metrics::MetricsReport> before;
    std::vector<metrics::MetricsReport> after;
    std::string per_seed;
    for (int s = 0; s < seeds; ++s) {
        runs.push_back(toy_run(cfg, static_cast<std::uint64_t>(s)));
        const auto& r = runs.back();
        before.push_back(r.stage1);
        after.push_back(r.stage2);
        per_seed += fmt("; seed %d ConsProp %.1f->%.1f RL %.1f->%.1f", s, r.stage1.cons_prop, r.stage2.cons_prop,
                        r.stage1.rl, r.stage2.rl);
        std::fprintf(stderr, "toy seed %d done%s\n", s, per_seed.c_str());
    }
    const auto m1 = trainer::median_report(before);
    const auto m2 = trainer::median_report(after);
    const double cons_gain = m2.cons_prop - m1.cons_prop;
    const double rl_drop = m1.rl - m2.rl;
    const bool pass = cons_gain >= 10.0 && rl_drop <= 2.0;
    return {pass, fmt("median over %d seeds: ConsProp %+.2f points (need >= +10), RL %+.2f points (drop must be <= 2)",
                      seeds, cons_gain, -rl_drop) +
                      per_seed};
}

// ------------------------------------------------------ alpha monotonicity

std::vector<metrics::MetricsReport> short_validation_log(const config::RunConfig& base) {
    auto cfg = base;
    cfg.data.synth_docs = 120;
    cfg.data.synth_train = 90;
    cfg.data.synth_validation = 30;
    cfg.model.encoder.d_model = 16;
    cfg.model.encoder.n_heads = 2;
    cfg.model.head.n_heads = 2;
    cfg.model.discriminator.d_model = 16;
    cfg.model.discriminator.n_heads = 2;
    cfg.pretrain.max_steps = 60;
    cfg.finetune.max_steps = 200;
    cfg.finetune.eval_every = 10;
    cfg.finetune.lr = 1e-3;
    cfg.resolve();
    const auto ds = config::load_datasets(cfg);
    cfg.model.encoder.vocab_size = ds.vocab.size();
    auto model = Model::create(cfg.model, cfg.seed);
    const auto s1 = trainer::pretrain_stage(model, ds.train, ds.validation, cfg.pretrain);
    model.load(s1.best_checkpoint().weights);
    std::vector<metrics::MetricsReport> log;
    for (const auto& row : trainer::finetune_stage(model, ds.train, ds.validation, cfg.finetune).log) {
        log.push_back(row.report);
    }
    return log;
}

// Sweeps alpha over a short-run validation log and, when available, the toy
// stage-2 logs. The logs are built first; only the selection sweeps are timed.
Outcome alpha_monotonicity(const config::RunConfig& cfg, const std::vector<ToyRun>& toy_runs) {
    std::vector<std::pair<std::string, std::vector<metrics::MetricsReport>>> logs;
    logs.emplace_back("short run", short_validation_log(cfg));
    for (size_t i = 0; i < toy_runs.size(); ++i) {
        logs.emplace_back(fmt("toy seed %zu", i), toy_runs[i].stage2_log);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> alphas{0.05, 0.1, 0.5, 1.0, 5.0};
    bool pass = true;
    std::string detail;
    for (const auto& [name, log] : logs) {
        double previous = -1.0;
        std::vector<size_t> picked;
        std::string trace;
        for (double a : alphas) {
            const auto i = trainer::select_checkpoint_index(log, a);
            pass = pass && log[i].cons_prop >= previous;
            previous = log[i].cons_prop;
            if (std::find(picked.begin(), picked.end(), i) == picked.end()) {
                picked.push_back(i);
            }
            trace += fmt("%s%.2f", trace.empty() ? "" : " ", log[i].cons_prop);
        }
        detail += fmt("%s%s (%zu rows, %zu distinct picks): %s", detail.empty() ? "" : "; ", name.c_str(), log.size(),
                      picked.size(), trace.c_str());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {pass, "selected ConsProp over alpha {0.05,0.1,0.5,1,5}, " + detail, seconds};
}

// ------------------------------------------------------------- determinism

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism(const config::RunConfig& base) {
    auto cfg = base;
    cfg.data.synth_docs = 60;
    cfg.data.synth_train = 40;
    cfg.data.synth_validation = 10;
    cfg.pretrain.max_steps = 40;
    cfg.pretrain.eval_every = 10;
    cfg.finetune.max_steps = 40;
    cfg.finetune.eval_every = 10;
    cfg.seed = 7;
    cfg.resolve();
    const auto dir = fs::temp_directory_path() / "cohext_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (int run = 0; run < 2; ++run) {
        auto c = cfg;
        const auto ds = config::load_datasets(c);
        c.model.encoder.vocab_size = ds.vocab.size();
        auto model = Model::create(c.model, c.seed);
        const auto s1 = trainer::pretrain_stage(model, ds.train, ds.validation, c.pretrain);
        trainer::write_log_csv(s1.log, dir / fmt("pretrain%d.csv", run));
        model.load(s1.best_checkpoint().weights);
        const auto s2 = trainer::finetune_stage(model, ds.train, ds.validation, c.finetune);
        trainer::write_log_csv(s2.log, dir / fmt("finetune%d.csv", run));
    }
    const auto p0 = read_file(dir / "pretrain0.csv");
    const auto f0 = read_file(dir / "finetune0.csv");
    const bool pass = p0 == read_file(dir / "pretrain1.csv") && f0 == read_file(dir / "finetune1.csv");
    return {pass, fmt("two runs with seed 7: stage-1 log %zu bytes, stage-2 log %zu bytes, %s", p0.size(), f0.size(),
                      pass ? "byte-identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<std::string> only;
    std::vector<std::string> skip;
    std::string config_path = COHEXT_TOY_CONFIG;
    int seeds = 3;
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--skip", skip, "Skip these criteria");
    app.add_option("--config", config_path, "Toy-scale INI config")->check(CLI::ExistingFile);
    app.add_option("--seeds", seeds, "Seeds for the toy trend")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::warn);

    config::RunConfig cfg;
    try {
        cfg = config::load(config_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance: %s\n", e.what());
        return 2;
    }

    std::vector<ToyRun> toy_runs;
    const std::vector<Criterion> criteria{
        {"routing", 60.0, [&] { return routing(cfg); }},
        {"straight_through", 10.0, [] { return straight_through(); }},
        {"merging", 60.0, [] { return merging_equivalence(); }},
        {"metrics", 60.0, [] { return metric_oracles(); }},
        {"distributions", 60.0, [] { return distributions(); }},
        {"converter", 600.0, [&] { return converter(cfg); }},
        {"toy_trend", 1800.0, [&] { return toy_trend(cfg, seeds, toy_runs); }},
        {"alpha_monotonicity", 1.0, [&] { return alpha_monotonicity(cfg, toy_runs); }},
        {"determinism", 600.0, [&] { return determinism(cfg); }},
    };

    const auto wanted = [&](const std::string& name) {
        const bool listed = only.empty() || std::find(only.begin(), only.end(), name) != only.end();
        return listed && std::find(skip.begin(), skip.end(), name) == skip.end();
    };
    for (const auto& name : only) {
        if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == name; })) {
            std::fprintf(stderr, "acceptance: unknown criterion '%s'\n", name.c_str());
            return 2;
        }
    }

    int failures = 0;
    for (const auto& c : criteria) {
        if (!wanted(c.name)) {
            continue;
        }
        Outcome outcome;
        double seconds = 0.0;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            outcome = c.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("error: ") + e.what(), std::nullopt};
        }
        seconds = outcome.timed_seconds.value_or(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        const bool in_budget = seconds <= c.budget_seconds;
        const bool pass = outcome.pass && in_budget;
        failures += pass ? 0 : 1;
        std::printf("%s %s: %s [%.1f s of %.0f s%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(),
                    outcome.detail.c_str(), seconds, c.budget_seconds, in_budget ? "" : ", over budget");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
