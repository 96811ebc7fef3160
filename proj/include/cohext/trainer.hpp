#pragma once

// Two-stage training: extractive pretraining, then multitask fine-tuning on
// shuffled documents with the extractive, discriminator and coherence losses.
//
// Gradient routing is structural. The discriminator loss sees detached
// sentence vectors; the coherence loss runs the discriminator with frozen
// weights over rows s_hat(i) * detach(e_i), so its only way back into the
// extractor is through the selection scores.

#include "cohext/augment.hpp"
#include "cohext/corpus.hpp"
#include "cohext/metrics.hpp"
#include "cohext/model.hpp"
#include "cohext/selection.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace cohext::trainer {

// Independent random streams derived from the run seed.
enum class Stream : std::uint64_t { data = 1, augment = 2, noise = 3, dropout = 4, validation_shuffle = 5 };

std::mt19937_64 make_stream(std::uint64_t seed, Stream stream);

struct TrainConfig {
    double lambda_ext{0.0};
    double lambda_dis{1.0};
    double lambda_cohe{1.0};
    double lambda_shuffle{2.0};  // Poisson mean of the switch count
    int k{3};
    double temperature{1.0};
    double lr{2e-5};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    int batch_size{8};
    int max_steps{1000};
    int eval_every{200};
    double alpha{1.0};
    std::uint64_t seed{0};
    selection::Method method{selection::Method::gumbel_softmax_topk};
    merging::Mode merging{merging::Mode::mat};
    discriminator::CoherenceLossKind cohe_loss{discriminator::CoherenceLossKind::negative_mean};
    metrics::StartPairRule start_pair{metrics::StartPairRule::always};
    // Recompute the routing report on every step and abort on a leak.
    bool check_routing{false};

    void validate() const;
};

// Weighted sum of the three losses. Throws TrainingError on non-finite input
// and ValidationError when every weight is zero.
double total_loss(double l_ext, double l_dis, double l_cohe, const TrainConfig& cfg);
ag::Var total_loss(const ag::Var& l_ext, const ag::Var& l_dis, const ag::Var& l_cohe, const TrainConfig& cfg);

// Everything built by one multitask forward pass over a shuffled document.
struct Forward {
    encoder::SentenceEmbeddings embeddings;
    extractor::ImportanceScores scores;
    selection::SelectionVector selection;
    ag::Var e_prime;  // n x d, rows s_hat(i) * detach(e_i)
    ag::Var merged;   // k x d
    ag::Var l_ext;
    ag::Var l_dis;
    ag::Var l_cohe;
};

struct ForwardOptions {
    int pad_to{0};
    std::mt19937_64* dropout_rng{nullptr};
    // Detaches s_hat as well, leaving only the sentence-vector factor of the
    // coherence path connected. Used to probe that factor.
    bool block_selection_path{false};
};

Forward forward_document(const Model& model, const augment::ShuffledDocument& doc, const TrainConfig& cfg,
                         std::mt19937_64& noise_rng, const ForwardOptions& options = {});

// Largest absolute gradient per (loss, module) pair for one document.
struct RoutingReport {
    double ext_to_encoder{0.0};
    double ext_to_head{0.0};
    double ext_to_discriminator{0.0};
    double dis_to_encoder{0.0};
    double dis_to_head{0.0};
    double dis_to_discriminator{0.0};
    double cohe_to_encoder{0.0};
    double cohe_to_head{0.0};
    double cohe_to_discriminator{0.0};
    // Coherence gradient reaching the encoder when only the e_i factor of
    // s_hat(i) * e_i is left connected.
    double cohe_product_path{0.0};

    // The four quantities that must be exactly zero.
    [[nodiscard]] double max_leak() const;
};

// Leaves every parameter gradient zeroed on return.
RoutingReport routing_report(const Model& model, const augment::ShuffledDocument& doc, const TrainConfig& cfg,
                             std::uint64_t noise_seed);

struct EvalResult {
    metrics::MetricsReport report;
    std::vector<std::vector<int>> predictions;  // ascending selected indices per document
    std::vector<double> rouge_l;                // per-document RL F1 percentage
    std::vector<double> cons_prop;              // per-document percentage
    double l_ext{0.0};
    double l_dis{0.0};   // on a fixed shuffled copy of the corpus
    double l_cohe{0.0};  // discriminator over the inference selection
};

using ExternalScores = std::unordered_map<std::string, double>;

// Inference over unshuffled documents. `bs_scores` maps document id to an
// external percentage score; when given, its mean enters the report.
EvalResult evaluate(const Model& model, const corpus::Corpus& data, const TrainConfig& cfg,
                    const ExternalScores* bs_scores = nullptr);

struct LogRow {
    int step{0};
    metrics::MetricsReport report;
    double l_ext{0.0};
    double l_dis{0.0};
    double l_cohe{0.0};
};

struct Checkpoint {
    int step{0};
    metrics::MetricsReport report;
    double s_score{0.0};
    WeightMap weights;
};

// Argmax of the S-score recomputed under `alpha`; the earliest step wins ties.
const Checkpoint& select_checkpoint(const std::vector<Checkpoint>& logs, double alpha);
std::size_t select_checkpoint_index(std::span<const metrics::MetricsReport> reports, double alpha);

struct StageResult {
    std::vector<LogRow> log;
    std::vector<Checkpoint> checkpoints;
    std::size_t best{0};  // index into checkpoints under cfg.alpha

    [[nodiscard]] const Checkpoint& best_checkpoint() const { return checkpoints.at(best); }
};

struct StageOptions {
    const ExternalScores* bs_scores{nullptr};
    // Called after every logged evaluation.
    std::function<void(const LogRow&)> on_eval;
};

// Stage 1: L = L_ext on unshuffled documents; only encoder and head update.
StageResult pretrain_stage(Model& model, const corpus::Corpus& train, const corpus::Corpus& validation,
                           const TrainConfig& cfg, const StageOptions& options = {});

// Stage 2: multitask training on freshly shuffled documents every step.
StageResult finetune_stage(Model& model, const corpus::Corpus& train, const corpus::Corpus& validation,
                           const TrainConfig& cfg, const StageOptions& options = {});

inline constexpr const char* kLogHeader = "step,R1,R2,RL,BS,ConsProp,Sscore,Lext,Ldis,Lcohe";

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path);
std::vector<LogRow> read_log_csv(const std::filesystem::path& path);

// Median of each metric across runs; the S-score is recomputed from the medians.
metrics::MetricsReport median_report(std::span<const metrics::MetricsReport> runs);

}  // namespace cohext::trainer
