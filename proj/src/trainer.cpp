#include "cohext/trainer.hpp"

#include "cohext/errors.hpp"
#include "cohext/optim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace cohext::trainer {

std::mt19937_64 make_stream(std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

namespace {

bool finite(double x) { return std::isfinite(x); }

void check_lambda(double v, const char* name) {
    if (!finite(v) || v < 0.0) {
        throw ValidationError(std::string("train config: ") + name + " must be a non-negative finite number");
    }
}

std::vector<int> padded(std::span<const int> values, int rows) {
    std::vector<int> out(values.begin(), values.end());
    out.resize(static_cast<size_t>(rows), 0);
    return out;
}

std::vector<std::string> reference_words(const corpus::Document& doc) {
    std::vector<std::string> words;
    if (doc.summary) {
        std::string joined;
        for (const auto& s : *doc.summary) {
            if (!joined.empty()) {
                joined.push_back(' ');
            }
            joined += s;
        }
        return corpus::tokenize(joined);
    }
    for (int idx : corpus::labelled_indices(doc)) {
        const auto& w = doc.sentences[static_cast<size_t>(idx)].words;
        words.insert(words.end(), w.begin(), w.end());
    }
    return words;
}

// Batches of document indices drawn epoch by epoch from a seeded permutation.
class BatchSampler {
public:
    BatchSampler(int n_docs, int batch_size, std::mt19937_64 rng)
        : order_(static_cast<size_t>(n_docs)), batch_size_(batch_size), rng_(std::move(rng)) {
        std::iota(order_.begin(), order_.end(), 0);
        reshuffle();
    }

    std::vector<int> next() {
        std::vector<int> batch;
        batch.reserve(static_cast<size_t>(batch_size_));
        while (static_cast<int>(batch.size()) < batch_size_) {
            if (cursor_ == order_.size()) {
                reshuffle();
            }
            batch.push_back(order_[cursor_++]);
        }
        return batch;
    }

private:
    void reshuffle() {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }

    std::vector<int> order_;
    size_t cursor_{0};
    int batch_size_;
    std::mt19937_64 rng_;
};

int max_size(const corpus::Corpus& data, std::span<const int> batch) {
    int n = 0;
    for (int i : batch) {
        n = std::max(n, data.documents[static_cast<size_t>(i)].size());
    }
    return n;
}

LogRow make_row(int step, const EvalResult& eval) {
    LogRow row;
    row.step = step;
    row.report = eval.report;
    row.l_ext = eval.l_ext;
    row.l_dis = eval.l_dis;
    row.l_cohe = eval.l_cohe;
    return row;
}

void record(StageResult& result, const Model& model, int step, const EvalResult& eval, const StageOptions& options,
            const char* stage) {
    LogRow row = make_row(step, eval);
    spdlog::info("{} step {}: R1 {:.2f} R2 {:.2f} RL {:.2f} ConsProp {:.2f} S {:.2f} Lext {:.4f} Ldis {:.4f} Lcohe {:.4f}",
                 stage, step, row.report.r1, row.report.r2, row.report.rl, row.report.cons_prop, row.report.s_score,
                 row.l_ext, row.l_dis, row.l_cohe);
    result.log.push_back(row);
    result.checkpoints.push_back(Checkpoint{step, eval.report, eval.report.s_score, model.snapshot()});
    if (options.on_eval) {
        options.on_eval(row);
    }
}

bool should_eval(int step, const TrainConfig& cfg) {
    return step == 0 || step % cfg.eval_every == 0 || step == cfg.max_steps;
}

void require_nonempty(const corpus::Corpus& data, const char* what) {
    if (data.documents.empty()) {
        throw ValidationError(std::string(what) + " corpus is empty");
    }
}

}  // namespace

void TrainConfig::validate() const {
    check_lambda(lambda_ext, "lambda_ext");
    check_lambda(lambda_dis, "lambda_dis");
    check_lambda(lambda_cohe, "lambda_cohe");
    if (lambda_ext == 0.0 && lambda_dis == 0.0 && lambda_cohe == 0.0) {
        throw ValidationError("train config: at least one loss weight must be positive");
    }
    if (!(lambda_shuffle > 0.0) || !(temperature > 0.0) || !(lr > 0.0) || !(eps > 0.0)) {
        throw ValidationError("train config: lambda_shuffle, temperature, lr and eps must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("train config: betas must lie in [0, 1)");
    }
    if (k < 1 || batch_size < 1 || max_steps < 0 || eval_every < 1) {
        throw ValidationError("train config: k, batch_size and eval_every must be >= 1, max_steps >= 0");
    }
    if (!finite(alpha) || alpha < 0.0) {
        throw ValidationError("train config: alpha must be non-negative");
    }
}

double total_loss(double l_ext, double l_dis, double l_cohe, const TrainConfig& cfg) {
    if (cfg.lambda_ext == 0.0 && cfg.lambda_dis == 0.0 && cfg.lambda_cohe == 0.0) {
        throw ValidationError("total_loss: all loss weights are zero");
    }
    if (!finite(l_ext) || !finite(l_dis) || !finite(l_cohe)) {
        throw TrainingError("total_loss: non-finite loss (ext " + std::to_string(l_ext) + ", dis " +
                            std::to_string(l_dis) + ", cohe " + std::to_string(l_cohe) + ")");
    }
    double total = 0.0;
    if (cfg.lambda_ext != 0.0) {
        total += cfg.lambda_ext * l_ext;
    }
    if (cfg.lambda_dis != 0.0) {
        total += cfg.lambda_dis * l_dis;
    }
    if (cfg.lambda_cohe != 0.0) {
        total += cfg.lambda_cohe * l_cohe;
    }
    return total;
}

ag::Var total_loss(const ag::Var& l_ext, const ag::Var& l_dis, const ag::Var& l_cohe, const TrainConfig& cfg) {
    const auto value = [](const ag::Var& v) { return v.defined() ? v.item() : 0.0; };
    if (cfg.lambda_ext != 0.0 && !l_ext.defined()) {
        throw ValidationError("total_loss: lambda_ext > 0 but the document has no extractive labels");
    }
    total_loss(value(l_ext), value(l_dis), value(l_cohe), cfg);

    ag::Var total;
    const auto accumulate = [&total](const ag::Var& term, double weight) {
        if (weight == 0.0) {
            return;
        }
        const ag::Var scaled = ag::scale(term, weight);
        total = total.defined() ? ag::add(total, scaled) : scaled;
    };
    accumulate(l_ext, cfg.lambda_ext);
    accumulate(l_dis, cfg.lambda_dis);
    accumulate(l_cohe, cfg.lambda_cohe);
    return total;
}

Forward forward_document(const Model& model, const augment::ShuffledDocument& sdoc, const TrainConfig& cfg,
                         std::mt19937_64& noise_rng, const ForwardOptions& options) {
    const corpus::Document doc = sdoc.shuffled();
    Forward f;
    f.embeddings = model.encoder.encode(doc, options.pad_to, options.dropout_rng);
    f.scores = model.head.score(f.embeddings, options.dropout_rng);
    const int rows = f.embeddings.rows();
    const int real = f.embeddings.real_count();

    if (doc.labels) {
        f.l_ext = extractor::extractive_loss(f.scores, *doc.labels);
    }

    const auto dis_scores = model.discriminator.forward(ag::detach(f.embeddings.vectors), f.embeddings.mask,
                                                        nn::Mode::trainable, options.dropout_rng);
    f.l_dis = discriminator::discriminator_loss(dis_scores, padded(sdoc.coherence_labels, rows), f.embeddings.mask);

    f.selection = selection::select(f.scores, {cfg.method, cfg.temperature, cfg.k}, noise_rng);
    const ag::Var s_hat = options.block_selection_path ? ag::detach(f.selection.s_hat) : f.selection.s_hat;
    f.e_prime = selection::apply_selection(s_hat, f.embeddings.vectors);
    const int m = static_cast<int>(f.selection.selected().size());
    if (cfg.merging == merging::Mode::mat) {
        f.merged = merging::merge(f.e_prime, merging::mat_converting_matrix(f.selection.s_tk, m));
    } else {
        if (!model.converter) {
            throw ValidationError("model-based merging needs a pretrained converter");
        }
        // Padding rows sit at the end; the converter only sees real sentences.
        const ag::Var s_real = real == rows ? s_hat : ag::slice_rows(s_hat, 0, real);
        const ag::Var e_real = real == rows ? f.e_prime : ag::slice_rows(f.e_prime, 0, real);
        f.merged = merging::merge(e_real, model.converter->forward(s_real, m));
    }
    const auto cohe_scores = model.discriminator.forward(f.merged, {}, nn::Mode::frozen, options.dropout_rng);
    f.l_cohe = discriminator::coherence_loss(cohe_scores, cfg.cohe_loss);
    return f;
}

double RoutingReport::max_leak() const {
    return std::max({ext_to_discriminator, dis_to_encoder, dis_to_head, cohe_to_discriminator, cohe_product_path});
}

RoutingReport routing_report(const Model& model, const augment::ShuffledDocument& doc, const TrainConfig& cfg,
                             std::uint64_t noise_seed) {
    const auto encoder = model.encoder_params();
    const auto head = model.head_params();
    const auto disc = model.discriminator_params();
    const auto all = model.all_params();
    nn::zero_grads(all);

    std::mt19937_64 noise(noise_seed);
    const Forward f = forward_document(model, doc, cfg, noise);
    RoutingReport r;
    const auto probe = [&](const ag::Var& loss, double& to_encoder, double& to_head, double& to_disc) {
        nn::zero_grads(all);
        if (loss.defined()) {
            ag::backward(loss);
        }
        to_encoder = nn::max_abs_grad(encoder);
        to_head = nn::max_abs_grad(head);
        to_disc = nn::max_abs_grad(disc);
    };
    probe(f.l_ext, r.ext_to_encoder, r.ext_to_head, r.ext_to_discriminator);
    probe(f.l_dis, r.dis_to_encoder, r.dis_to_head, r.dis_to_discriminator);
    probe(f.l_cohe, r.cohe_to_encoder, r.cohe_to_head, r.cohe_to_discriminator);

    std::mt19937_64 same_noise(noise_seed);
    const Forward blocked = forward_document(model, doc, cfg, same_noise, {.block_selection_path = true});
    nn::zero_grads(all);
    ag::backward(blocked.l_cohe);
    r.cohe_product_path = std::max({nn::max_abs_grad(encoder), nn::max_abs_grad(head),
                                    blocked.embeddings.vectors.grad().cwiseAbs().maxCoeff()});
    nn::zero_grads(all);
    return r;
}

EvalResult evaluate(const Model& model, const corpus::Corpus& data, const TrainConfig& cfg,
                    const ExternalScores* bs_scores) {
    require_nonempty(data, "evaluation");
    EvalResult out;
    std::mt19937_64 shuffle_rng = make_stream(cfg.seed, Stream::validation_shuffle);
    double r1 = 0.0;
    double r2 = 0.0;
    double rl = 0.0;
    double cp = 0.0;
    double bs = 0.0;
    int labelled = 0;
    for (const auto& doc : data.documents) {
        const auto emb = model.encoder.encode(doc);
        const auto scores = model.head.score(emb);
        auto pred = selection::select_for_inference(scores, cfg.k);

        std::vector<std::string> candidate;
        for (int idx : pred) {
            const auto& w = doc.sentences[static_cast<size_t>(idx)].words;
            candidate.insert(candidate.end(), w.begin(), w.end());
        }
        const auto reference = reference_words(doc);
        r1 += metrics::rouge_n(candidate, reference, 1).f1;
        r2 += metrics::rouge_n(candidate, reference, 2).f1;
        const double doc_rl = metrics::rouge_l(candidate, reference).f1;
        rl += doc_rl;
        const double doc_cp = metrics::consecutive_proportion(pred, cfg.start_pair);
        cp += doc_cp;
        out.rouge_l.push_back(100.0 * doc_rl);
        out.cons_prop.push_back(100.0 * doc_cp);

        if (doc.labels) {
            out.l_ext += extractor::extractive_loss(scores, *doc.labels).item();
            ++labelled;
        }
        const auto selected_rows = ag::gather_rows(ag::detach(emb.vectors), pred);
        out.l_cohe += discriminator::coherence_loss(
                          model.discriminator.forward(selected_rows, {}, nn::Mode::frozen), cfg.cohe_loss)
                          .item();

        const int switches = augment::sample_num_switches(cfg.lambda_shuffle, doc.size(), shuffle_rng);
        const auto sdoc = augment::shuffle_document(doc, switches, shuffle_rng);
        const auto shuffled_emb = model.encoder.encode(sdoc.shuffled());
        out.l_dis += discriminator::discriminator_loss(
                         model.discriminator.forward(ag::detach(shuffled_emb.vectors), {}, nn::Mode::frozen),
                         sdoc.coherence_labels)
                         .item();

        if (bs_scores != nullptr) {
            const auto it = bs_scores->find(doc.id);
            if (it == bs_scores->end()) {
                throw ValidationError("external score file has no entry for document '" + doc.id + "'");
            }
            bs += it->second;
        }
        out.predictions.push_back(std::move(pred));
    }
    const double n = static_cast<double>(data.documents.size());
    out.report.r1 = 100.0 * r1 / n;
    out.report.r2 = 100.0 * r2 / n;
    out.report.rl = 100.0 * rl / n;
    out.report.cons_prop = 100.0 * cp / n;
    if (bs_scores != nullptr) {
        out.report.bs = bs / n;
    }
    out.report.alpha = cfg.alpha;
    metrics::refresh_s_score(out.report);
    out.l_ext = labelled > 0 ? out.l_ext / labelled : 0.0;
    out.l_dis /= n;
    out.l_cohe /= n;
    return out;
}

std::size_t select_checkpoint_index(std::span<const metrics::MetricsReport> reports, double alpha) {
    if (reports.empty()) {
        throw ValidationError("select_checkpoint: empty log");
    }
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const double s = metrics::s_score(r.r1, r.r2, r.rl, r.bs, r.cons_prop, alpha);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

const Checkpoint& select_checkpoint(const std::vector<Checkpoint>& logs, double alpha) {
    std::vector<metrics::MetricsReport> reports;
    reports.reserve(logs.size());
    for (const auto& c : logs) {
        reports.push_back(c.report);
    }
    return logs[select_checkpoint_index(reports, alpha)];
}

StageResult pretrain_stage(Model& model, const corpus::Corpus& train, const corpus::Corpus& validation,
                           const TrainConfig& cfg_in, const StageOptions& options) {
    TrainConfig cfg = cfg_in;
    cfg.lambda_ext = 1.0;
    cfg.lambda_dis = 0.0;
    cfg.lambda_cohe = 0.0;
    cfg.validate();
    require_nonempty(train, "training");
    for (const auto& doc : train.documents) {
        if (!doc.labels) {
            throw ValidationError("pretraining needs extractive labels; document '" + doc.id + "' has none");
        }
    }

    optim::Adam adam(model.extractor_params(), {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
    adam.zero_grad();
    BatchSampler sampler(static_cast<int>(train.documents.size()), cfg.batch_size, make_stream(cfg.seed, Stream::data));
    std::mt19937_64 dropout_rng = make_stream(cfg.seed, Stream::dropout);

    StageResult result;
    for (int step = 0;; ++step) {
        if (should_eval(step, cfg)) {
            record(result, model, step, evaluate(model, validation, cfg, options.bs_scores), options, "pretrain");
        }
        if (step == cfg.max_steps) {
            break;
        }
        const auto batch = sampler.next();
        const int pad_to = max_size(train, batch);
        for (int i : batch) {
            const auto& doc = train.documents[static_cast<size_t>(i)];
            const auto emb = model.encoder.encode(doc, pad_to, &dropout_rng);
            const auto scores = model.head.score(emb, &dropout_rng);
            const ag::Var loss = extractor::extractive_loss(scores, *doc.labels);
            if (!finite(loss.item())) {
                throw TrainingError("pretrain step " + std::to_string(step) + ": non-finite extractive loss on '" +
                                    doc.id + "'");
            }
            ag::backward(ag::scale(loss, 1.0 / cfg.batch_size));
        }
        adam.step();
    }
    std::vector<metrics::MetricsReport> reports;
    for (const auto& c : result.checkpoints) {
        reports.push_back(c.report);
    }
    result.best = select_checkpoint_index(reports, cfg.alpha);
    return result;
}

StageResult finetune_stage(Model& model, const corpus::Corpus& train, const corpus::Corpus& validation,
                           const TrainConfig& cfg, const StageOptions& options) {
    cfg.validate();
    require_nonempty(train, "training");
    if (cfg.merging == merging::Mode::model && !model.converter) {
        throw ValidationError("model-based merging needs a pretrained converter");
    }

    nn::ParamList trainable = model.extractor_params();
    for (auto& p : model.discriminator_params()) {
        trainable.push_back(p);
    }
    const nn::ParamList converter = model.converter_params();
    optim::Adam adam(trainable, {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
    adam.zero_grad();
    BatchSampler sampler(static_cast<int>(train.documents.size()), cfg.batch_size, make_stream(cfg.seed, Stream::data));
    std::mt19937_64 augment_rng = make_stream(cfg.seed, Stream::augment);
    std::mt19937_64 noise_rng = make_stream(cfg.seed, Stream::noise);
    std::mt19937_64 dropout_rng = make_stream(cfg.seed, Stream::dropout);

    StageResult result;
    for (int step = 0;; ++step) {
        if (should_eval(step, cfg)) {
            record(result, model, step, evaluate(model, validation, cfg, options.bs_scores), options, "finetune");
        }
        if (step == cfg.max_steps) {
            break;
        }
        const auto batch = sampler.next();
        const int pad_to = max_size(train, batch);
        for (size_t b = 0; b < batch.size(); ++b) {
            const auto& doc = train.documents[static_cast<size_t>(batch[b])];
            const int switches = augment::sample_num_switches(cfg.lambda_shuffle, doc.size(), augment_rng);
            const auto sdoc = augment::shuffle_document(doc, switches, augment_rng);
            if (cfg.check_routing && b == 0) {
                const RoutingReport report = routing_report(model, sdoc, cfg, noise_rng());
                if (report.max_leak() != 0.0) {
                    throw TrainingError("gradient routing leak of " + std::to_string(report.max_leak()) +
                                        " at step " + std::to_string(step));
                }
            }
            const Forward f = forward_document(model, sdoc, cfg, noise_rng, {pad_to, &dropout_rng, false});
            const ag::Var loss = total_loss(f.l_ext, f.l_dis, f.l_cohe, cfg);
            ag::backward(ag::scale(loss, 1.0 / cfg.batch_size));
        }
        adam.step();
        nn::zero_grads(converter);
    }
    std::vector<metrics::MetricsReport> reports;
    for (const auto& c : result.checkpoints) {
        reports.push_back(c.report);
    }
    result.best = select_checkpoint_index(reports, cfg.alpha);
    return result;
}

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw TrainingError("cannot write " + path.string());
    }
    out << kLogHeader << '\n';
    char buf[512];
    for (const auto& row : log) {
        const auto& r = row.report;
        std::string bs;
        if (r.bs) {
            std::snprintf(buf, sizeof(buf), "%.6f", *r.bs);
            bs = buf;
        }
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.step, r.r1, r.r2, r.rl,
                      bs.c_str(), r.cons_prop, r.s_score, row.l_ext, row.l_dis, row.l_cohe);
        out << buf;
    }
}

std::vector<LogRow> read_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot read " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != kLogHeader) {
        throw ParseError(path.string() + ": unexpected header");
    }
    std::vector<LogRow> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        if (!line.empty() && line.back() == ',') {
            fields.emplace_back();
        }
        if (fields.size() != 10) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": expected 10 fields");
        }
        try {
            LogRow row;
            row.step = std::stoi(fields[0]);
            row.report.r1 = std::stod(fields[1]);
            row.report.r2 = std::stod(fields[2]);
            row.report.rl = std::stod(fields[3]);
            if (!fields[4].empty()) {
                row.report.bs = std::stod(fields[4]);
            }
            row.report.cons_prop = std::stod(fields[5]);
            row.report.s_score = std::stod(fields[6]);
            row.l_ext = std::stod(fields[7]);
            row.l_dis = std::stod(fields[8]);
            row.l_cohe = std::stod(fields[9]);
            out.push_back(row);
        } catch (const std::logic_error&) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": malformed number");
        }
    }
    return out;
}

metrics::MetricsReport median_report(std::span<const metrics::MetricsReport> runs) {
    if (runs.empty()) {
        throw ValidationError("median_report: no runs");
    }
    const auto median = [&runs](auto field) {
        std::vector<double> v;
        for (const auto& r : runs) {
            v.push_back(field(r));
        }
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    metrics::MetricsReport out;
    out.r1 = median([](const auto& r) { return r.r1; });
    out.r2 = median([](const auto& r) { return r.r2; });
    out.rl = median([](const auto& r) { return r.rl; });
    out.cons_prop = median([](const auto& r) { return r.cons_prop; });
    if (std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.bs.has_value(); })) {
        out.bs = median([](const auto& r) { return *r.bs; });
    }
    out.alpha = runs.front().alpha;
    metrics::refresh_s_score(out);
    return out;
}

}  // namespace cohext::trainer
