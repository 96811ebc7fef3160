// cohext: command-line driver for two-stage coherence-boosted extractive
// summarization. Exit codes: 0 success, 2 usage or configuration error,
// 3 runtime failure.

#include "cohext/augment.hpp"
#include "cohext/checkpoint.hpp"
#include "cohext/config.hpp"
#include "cohext/errors.hpp"
#include "cohext/merging.hpp"
#include "cohext/metrics.hpp"
#include "cohext/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cohext;
using nlohmann::json;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 3;

void configure_logging() {
    const char* level = std::getenv("COHEXT_LOG_LEVEL");
    spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
    spdlog::set_pattern("[%H:%M:%S] [%l] %v");
}

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> k;
    std::optional<double> alpha;
    std::optional<std::string> method;
    std::optional<std::string> merging;
    std::optional<double> lambda_ext;
    std::optional<double> lambda_dis;
    std::optional<double> lambda_cohe;
    bool check_routing{false};

    void attach(CLI::App* cmd, bool training) {
        cmd->add_option("--seed", seed, "Run seed");
        cmd->add_option("--k", k, "Sentences per summary");
        cmd->add_option("--alpha", alpha, "Cons.Prop weight in the S-score");
        if (!training) {
            return;
        }
        cmd->add_option("--selection-method", method, "topk | gumbel_topk | gumbel_softmax_topk");
        cmd->add_option("--merging-mode", merging, "mat | model");
        cmd->add_option("--lambda-ext", lambda_ext);
        cmd->add_option("--lambda-dis", lambda_dis);
        cmd->add_option("--lambda-cohe", lambda_cohe);
        cmd->add_flag("--check-routing", check_routing, "Verify gradient routing on every step");
    }

    void apply(config::RunConfig& cfg, trainer::TrainConfig& stage) const {
        if (seed) {
            cfg.seed = *seed;
        }
        if (k) {
            stage.k = *k;
        }
        if (alpha) {
            stage.alpha = *alpha;
        }
        if (method) {
            stage.method = selection::parse_method(*method);
        }
        if (merging) {
            stage.merging = merging::parse_mode(*merging);
        }
        if (lambda_ext) {
            stage.lambda_ext = *lambda_ext;
        }
        if (lambda_dis) {
            stage.lambda_dis = *lambda_dis;
        }
        if (lambda_cohe) {
            stage.lambda_cohe = *lambda_cohe;
        }
        if (check_routing) {
            stage.check_routing = true;
        }
#ifndef NDEBUG
        stage.check_routing = true;
#endif
        cfg.resolve();
        cfg.validate();
    }
};

config::RunConfig load_config(const std::string& path) {
    return path.empty() ? config::defaults() : config::load(path);
}

std::vector<fs::path> data_inputs(const config::RunConfig& cfg) {
    std::vector<fs::path> out;
    for (const auto& p : {cfg.data.train, cfg.data.validation, cfg.data.test}) {
        if (!p.empty()) {
            out.emplace_back(p);
        }
    }
    return out;
}

void log_row(const trainer::LogRow& row) {
    spdlog::debug("eval step {} RL {:.2f} ConsProp {:.2f}", row.step, row.report.rl, row.report.cons_prop);
}

// Writes log.csv plus the best and final checkpoints of a stage.
void save_stage(const fs::path& out, const trainer::StageResult& result, const config::RunConfig& cfg,
                const corpus::Vocabulary& vocab) {
    trainer::write_log_csv(result.log, out / "log.csv");
    const auto& best = result.best_checkpoint();
    const auto& last = result.checkpoints.back();
    for (const auto& [name, ckpt] : {std::pair{"checkpoint", &best}, std::pair{"final", &last}}) {
        checkpoint::save(out / name, ckpt->weights, cfg, &vocab, ckpt->step);
        trainer::write_log_csv(result.log, out / name / "log.csv");
    }
    std::printf("best step %d: R1 %.2f R2 %.2f RL %.2f ConsProp %.2f S %.2f\n", best.step, best.report.r1,
                best.report.r2, best.report.rl, best.report.cons_prop, best.s_score);
}

int cmd_synth(const std::string& config_path, const fs::path& out) {
    config::RunConfig cfg = load_config(config_path);
    if (cfg.data.source != "synthetic") {
        throw ValidationError("synth: data.source must be synthetic");
    }
    std::vector<fs::path> inputs;
    if (!config_path.empty()) {
        inputs.emplace_back(config_path);
    }
    checkpoint::write_manifest(checkpoint::make_manifest("synth", cfg, inputs, out));
    const auto ds = config::load_datasets(cfg);
    corpus::save_jsonl(ds.train, out / "train.jsonl");
    corpus::save_jsonl(ds.validation, out / "validation.jsonl");
    corpus::save_jsonl(ds.test, out / "test.jsonl");
    std::printf("wrote %zu/%zu/%zu documents to %s\n", ds.train.documents.size(), ds.validation.documents.size(),
                ds.test.documents.size(), out.string().c_str());
    return 0;
}

int cmd_pretrain(const std::string& config_path, const fs::path& out, const Overrides& ov) {
    config::RunConfig cfg = load_config(config_path);
    ov.apply(cfg, cfg.pretrain);
    auto ds = config::load_datasets(cfg);
    cfg.model.encoder.vocab_size = ds.vocab.size();
    std::vector<fs::path> inputs = data_inputs(cfg);
    if (!config_path.empty()) {
        inputs.emplace_back(config_path);
    }
    checkpoint::write_manifest(checkpoint::make_manifest("pretrain", cfg, inputs, out));

    Model model = Model::create(cfg.model, cfg.seed);
    trainer::StageOptions options;
    options.on_eval = log_row;
    const auto result = trainer::pretrain_stage(model, ds.train, ds.validation, cfg.pretrain, options);
    save_stage(out, result, cfg, ds.vocab);
    return 0;
}

int cmd_finetune(const std::string& config_path, const fs::path& init, const std::string& converter_dir,
                 const fs::path& out, const Overrides& ov) {
    auto bundle = checkpoint::load(init);
    config::RunConfig cfg = config_path.empty() ? bundle.config : config::load(config_path);
    ov.apply(cfg, cfg.finetune);
    if (!bundle.vocab) {
        throw ValidationError("finetune: " + init.string() + " has no vocab.txt");
    }
    auto ds = config::load_datasets(cfg, &*bundle.vocab);
    cfg.model.encoder.vocab_size = ds.vocab.size();
    if (cfg.finetune.merging == merging::Mode::model) {
        cfg.model.with_converter = true;
    }
    std::vector<fs::path> inputs = data_inputs(cfg);
    inputs.push_back(init);
    if (!config_path.empty()) {
        inputs.emplace_back(config_path);
    }
    if (!converter_dir.empty()) {
        inputs.emplace_back(converter_dir);
    }
    checkpoint::write_manifest(checkpoint::make_manifest("finetune", cfg, inputs, out));

    Model model = Model::create(cfg.model, cfg.seed);
    model.load(bundle.weights);
    if (cfg.model.with_converter) {
        if (converter_dir.empty() && !bundle.weights.contains("converter.input_weight")) {
            throw ValidationError("finetune: model-based merging needs --converter weights");
        }
        if (!converter_dir.empty()) {
            model.load(checkpoint::read_tensors(converter_dir));
        }
    }
    trainer::StageOptions options;
    options.on_eval = log_row;
    const auto result = trainer::finetune_stage(model, ds.train, ds.validation, cfg.finetune, options);
    save_stage(out, result, cfg, ds.vocab);
    return 0;
}

trainer::ExternalScores read_bs_scores(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open BS score file " + path.string());
    }
    trainer::ExternalScores scores;
    try {
        for (const auto& [id, value] : json::parse(in).items()) {
            scores.emplace(id, value.get<double>());
        }
    } catch (const json::exception& e) {
        throw ParseError("BS score file: " + std::string(e.what()));
    }
    return scores;
}

struct EvalInputs {
    checkpoint::Bundle bundle;
    Model model;
    corpus::Corpus data;
    trainer::TrainConfig cfg;
};

EvalInputs prepare_eval(const fs::path& ckpt, const std::string& data_path, const std::string& split,
                        const Overrides& ov) {
    EvalInputs e{checkpoint::load(ckpt), {}, {}, {}};
    auto& cfg = e.bundle.config;
    ov.apply(cfg, cfg.finetune);
    if (!e.bundle.vocab) {
        throw ValidationError("evaluate: " + ckpt.string() + " has no vocab.txt");
    }
    cfg.model.with_converter = e.bundle.weights.contains("converter.input_weight");
    e.model = Model::create(cfg.model, cfg.seed);
    e.model.load(e.bundle.weights, true);
    if (!data_path.empty()) {
        e.data = config::load_split(data_path, corpus::Split::test, cfg, *e.bundle.vocab);
    } else {
        auto ds = config::load_datasets(cfg, &*e.bundle.vocab);
        const auto which = corpus::parse_split(split);
        e.data = which == corpus::Split::train ? ds.train : which == corpus::Split::validation ? ds.validation : ds.test;
    }
    if (e.data.documents.empty()) {
        throw ValidationError("evaluate: the " + split + " split is empty; pass --data");
    }
    e.cfg = cfg.finetune;
    return e;
}

std::string join_indices(const std::vector<int>& idx) {
    std::string s;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        s += (i == 0 ? "" : " ") + std::to_string(idx[i]);
    }
    return s;
}

int cmd_evaluate(const fs::path& ckpt, const std::string& data_path, const std::string& split,
                 const std::string& bs_path, const fs::path& out, const Overrides& ov) {
    auto e = prepare_eval(ckpt, data_path, split, ov);
    std::vector<fs::path> inputs{ckpt};
    if (!data_path.empty()) {
        inputs.emplace_back(data_path);
    }
    if (!bs_path.empty()) {
        inputs.emplace_back(bs_path);
    }
    checkpoint::write_manifest(checkpoint::make_manifest("evaluate", e.bundle.config, inputs, out));

    std::optional<trainer::ExternalScores> bs;
    if (!bs_path.empty()) {
        bs = read_bs_scores(bs_path);
    }
    const auto result = trainer::evaluate(e.model, e.data, e.cfg, bs ? &*bs : nullptr);
    const auto& r = result.report;
    const json metrics{{"r1", r.r1},
                       {"r2", r.r2},
                       {"rl", r.rl},
                       {"bs", r.bs ? json(*r.bs) : json(nullptr)},
                       {"cons_prop", r.cons_prop},
                       {"alpha", r.alpha},
                       {"s_score", r.s_score},
                       {"l_ext", result.l_ext},
                       {"l_dis", result.l_dis},
                       {"l_cohe", result.l_cohe},
                       {"documents", e.data.documents.size()},
                       {"checkpoint", ckpt.string()},
                       {"step", e.bundle.step}};
    std::ofstream(out / "metrics.json") << metrics.dump(2) << "\n";
    std::ofstream docs(out / "documents.csv");
    docs << "id,selected,rouge_l,cons_prop\n";
    for (std::size_t i = 0; i < e.data.documents.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", result.rouge_l[i], result.cons_prop[i]);
        docs << e.data.documents[i].id << "," << join_indices(result.predictions[i]) << "," << buf << "\n";
    }
    if (!docs) {
        throw TrainingError("cannot write " + (out / "documents.csv").string());
    }
    std::printf("R1 %.2f R2 %.2f RL %.2f%s ConsProp %.2f S(alpha=%g) %.2f over %zu documents\n", r.r1, r.r2, r.rl,
                r.bs ? (" BS " + std::to_string(*r.bs)).c_str() : "", r.cons_prop, r.alpha, r.s_score,
                e.data.documents.size());
    return 0;
}

int cmd_augment(const std::string& config_path, const std::string& data_path, double lambda, std::uint64_t seed,
                const fs::path& out) {
    config::RunConfig cfg = load_config(config_path);
    cfg.seed = seed;
    std::vector<fs::path> inputs;
    if (!data_path.empty()) {
        inputs.emplace_back(data_path);
    }
    if (!config_path.empty()) {
        inputs.emplace_back(config_path);
    }
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    checkpoint::write_manifest(checkpoint::make_manifest("augment", cfg, inputs, dir), out.filename().string() + ".run.json");
    corpus::Corpus data;
    if (!data_path.empty()) {
        if (!fs::exists(data_path)) {
            throw ValidationError("dataset file not found: " + data_path);
        }
        data = corpus::load_jsonl(data_path, corpus::Split::train);
    } else {
        data = config::load_datasets(cfg).train;
    }
    if (!(lambda >= 0.0)) {
        throw ValidationError("augment: --lambda must be non-negative");
    }
    auto rng = trainer::make_stream(seed, trainer::Stream::augment);
    std::vector<augment::ShuffledDocument> shuffled;
    shuffled.reserve(data.documents.size());
    for (const auto& doc : data.documents) {
        const int switches = augment::sample_num_switches(lambda, doc.size(), rng);
        shuffled.push_back(augment::shuffle_document(doc, switches, rng));
    }
    augment::save_shuffled_jsonl(shuffled, out);
    std::printf("wrote %zu shuffled documents to %s\n", shuffled.size(), out.string().c_str());
    return 0;
}

int cmd_pretrain_converter(const std::string& config_path, std::optional<int> steps, std::optional<std::uint64_t> seed,
                           std::optional<double> lambda_len, const fs::path& out) {
    config::RunConfig cfg = load_config(config_path);
    if (seed) {
        cfg.seed = *seed;
    }
    if (steps) {
        cfg.converter_training.steps = *steps;
    }
    if (lambda_len) {
        cfg.model.converter.lambda_len = *lambda_len;
    } else {
        // Lengths follow the sentence count of the training corpus within the encoder window.
        const auto ds = config::load_datasets(cfg);
        cfg.model.converter.lambda_len = corpus::mean_sentence_count(ds.train, cfg.model.encoder.max_tokens);
        spdlog::info("converter length mean {:.2f} from the training split", cfg.model.converter.lambda_len);
    }
    cfg.model.with_converter = true;
    cfg.resolve();
    cfg.validate();
    std::vector<fs::path> inputs;
    if (!config_path.empty()) {
        inputs.emplace_back(config_path);
    }
    checkpoint::write_manifest(checkpoint::make_manifest("pretrain-converter", cfg, inputs, out));

    std::mt19937_64 init_rng(cfg.seed);
    merging::Converter converter(cfg.model.converter, init_rng);
    const auto result = merging::pretrain_converter(converter, cfg.converter_training);
    std::mt19937_64 held_out = trainer::make_stream(cfg.seed, trainer::Stream::validation_shuffle);
    std::vector<std::vector<int>> samples;
    for (int i = 0; i < 1000; ++i) {
        samples.push_back(merging::sample_binary_vector(cfg.model.converter.lambda_len, cfg.model.converter.k_target,
                                                        cfg.model.converter.max_positions, held_out));
    }
    const double accuracy = merging::column_accuracy(converter, samples);

    nn::ParamList params;
    converter.collect(params);
    WeightMap weights;
    for (const auto& p : params) {
        weights.emplace(p.name, p.var.value());
    }
    checkpoint::save(out / "converter", weights, cfg, nullptr, cfg.converter_training.steps);
    std::ofstream loss(out / "loss.csv");
    loss << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", result.loss_history[i]);
        loss << i + 1 << "," << buf << "\n";
    }
    std::printf("converter column accuracy %.4f on %zu held-out vectors\n", accuracy, samples.size());
    return 0;
}

int cmd_report(const fs::path& ckpt, const std::string& data_path, const std::string& split, int bins,
               const fs::path& out, const Overrides& ov) {
    auto e = prepare_eval(ckpt, data_path, split, ov);
    if (bins < 1) {
        throw ValidationError("report: --bins must be >= 1");
    }
    std::vector<fs::path> inputs{ckpt};
    if (!data_path.empty()) {
        inputs.emplace_back(data_path);
    }
    checkpoint::write_manifest(checkpoint::make_manifest("report", e.bundle.config, inputs, out));
    const auto result = trainer::evaluate(e.model, e.data, e.cfg);
    std::vector<int> lengths;
    for (const auto& doc : e.data.documents) {
        lengths.push_back(doc.size());
    }
    const auto freq = metrics::position_distribution(result.predictions, lengths, bins);
    std::ofstream positions(out / "positions.csv");
    positions << "bin,lower,upper,frequency\n";
    for (int b = 0; b < bins; ++b) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f", b, static_cast<double>(b) / bins,
                      static_cast<double>(b + 1) / bins, freq[static_cast<std::size_t>(b)]);
        positions << buf << "\n";
    }
    std::vector<trainer::LogRow> log;
    if (fs::exists(ckpt / "log.csv")) {
        log = trainer::read_log_csv(ckpt / "log.csv");
    }
    trainer::write_log_csv(log, out / "curves.csv");
    std::printf("wrote positions.csv (%d bins) and curves.csv (%zu rows) to %s\n", bins, log.size(),
                out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();
    CLI::App app{"Coherence-boosted extractive summarization"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::string init;
    std::string converter_dir;
    std::string checkpoint_dir;
    std::string data_path;
    std::string split = "test";
    std::string bs_path;
    double lambda = 2.0;
    std::uint64_t augment_seed = 0;
    std::optional<int> converter_steps;
    std::optional<std::uint64_t> converter_seed;
    std::optional<double> lambda_len;
    int bins = 20;
    Overrides train_ov;
    Overrides eval_ov;

    auto* synth = app.add_subcommand("synth", "Write the synthetic corpus as JSONL splits");
    synth->add_option("--config", config_path, "INI config")->check(CLI::ExistingFile);
    synth->add_option("--out", out, "Output directory")->required();

    auto* pretrain = app.add_subcommand("pretrain", "Stage 1: extractive pretraining");
    pretrain->add_option("--config", config_path, "INI config");
    pretrain->add_option("--out", out, "Run directory")->required();
    train_ov.attach(pretrain, true);

    auto* finetune = app.add_subcommand("finetune", "Stage 2: multitask fine-tuning");
    finetune->add_option("--config", config_path, "INI config (default: the init checkpoint's)");
    finetune->add_option("--init", init, "Stage-1 checkpoint directory")->required();
    finetune->add_option("--converter", converter_dir, "Pretrained converter checkpoint");
    finetune->add_option("--out", out, "Run directory")->required();
    train_ov.attach(finetune, true);

    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint");
    evaluate->add_option("--checkpoint", checkpoint_dir)->required();
    evaluate->add_option("--data", data_path, "JSONL file (default: a split of the checkpoint's data)");
    evaluate->add_option("--split", split, "train | validation | test");
    evaluate->add_option("--bs", bs_path, "JSON object mapping document id to an external score");
    evaluate->add_option("--out", out, "Output directory")->required();
    eval_ov.attach(evaluate, false);

    auto* augment = app.add_subcommand("augment", "Write shuffled copies of a corpus");
    augment->add_option("--config", config_path, "INI config used when --data is absent");
    augment->add_option("--data", data_path, "JSONL file");
    augment->add_option("--lambda", lambda, "Poisson mean of the switch count");
    augment->add_option("--seed", augment_seed);
    augment->add_option("--out", out, "Output JSONL file")->required();

    auto* converter = app.add_subcommand("pretrain-converter", "Pretrain the merging converter");
    converter->add_option("--config", config_path, "INI config");
    converter->add_option("--steps", converter_steps);
    converter->add_option("--seed", converter_seed);
    converter->add_option("--lambda-len", lambda_len, "Poisson mean of the vector length (default: from the corpus)");
    converter->add_option("--out", out, "Output directory")->required();

    auto* report = app.add_subcommand("report", "Positional distribution and learning curves");
    report->add_option("--checkpoint", checkpoint_dir)->required();
    report->add_option("--data", data_path, "JSONL file");
    report->add_option("--split", split, "train | validation | test");
    report->add_option("--bins", bins);
    report->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*synth) {
            return cmd_synth(config_path, out);
        }
        if (*pretrain) {
            return cmd_pretrain(config_path, out, train_ov);
        }
        if (*finetune) {
            return cmd_finetune(config_path, init, converter_dir, out, train_ov);
        }
        if (*evaluate) {
            return cmd_evaluate(checkpoint_dir, data_path, split, bs_path, out, eval_ov);
        }
        if (*augment) {
            return cmd_augment(config_path, data_path, lambda, augment_seed, out);
        }
        if (*converter) {
            return cmd_pretrain_converter(config_path, converter_steps, converter_seed, lambda_len, out);
        }
        if (*report) {
            return cmd_report(checkpoint_dir, data_path, split, bins, out, eval_ov);
        }
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return kUsageError;
    } catch (const ParseError& e) {
        spdlog::error("{}", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntimeError;
    }
    return kUsageError;
}
