#pragma once

// Run configuration (INI) and dataset assembly shared by the CLI, the tests
// and the acceptance driver.

#include "cohext/corpus.hpp"
#include "cohext/merging.hpp"
#include "cohext/model.hpp"
#include "cohext/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace cohext::config {

struct DataConfig {
    std::string source{"synthetic"};  // "synthetic" or "jsonl"
    // JSONL inputs; relative paths resolve against the config file's directory.
    std::string train;
    std::string validation;
    std::string test;
    int oracle_k{3};  // ORACLE labels for documents that carry only a summary
    int min_count{1};

    int synth_docs{500};
    int synth_min_sentences{8};
    int synth_max_sentences{20};
    int synth_vocab{300};
    std::uint64_t synth_seed{1000};
    int synth_train{400};
    int synth_validation{50};  // the remaining documents form the test split
    corpus::SynthOptions synth;
};

struct RunConfig {
    std::uint64_t seed{0};
    DataConfig data;
    ModelConfig model;
    trainer::TrainConfig pretrain;
    trainer::TrainConfig finetune;
    merging::PretrainOptions converter_training;

    // Copies the run seed into the stage and converter settings.
    void resolve();
    void validate() const;
};

// Toy defaults: d_model 64, two encoder layers, a two-layer discriminator.
RunConfig defaults();

// Unknown sections or keys are rejected so that typos surface as errors.
RunConfig load(const std::filesystem::path& path);
RunConfig parse(const std::string& text, const std::filesystem::path& base_dir = {});
void save(const RunConfig& config, const std::filesystem::path& path);
std::string to_ini(const RunConfig& config);

struct Datasets {
    corpus::Vocabulary vocab;
    corpus::Corpus train;
    corpus::Corpus validation;
    corpus::Corpus test;
};

// Builds, labels, truncates to the encoder budget and indexes every split.
// With `vocab` given, that vocabulary is reused instead of building one.
Datasets load_datasets(const RunConfig& config, const corpus::Vocabulary* vocab = nullptr);

// Reads a JSONL file, fills missing labels from summaries, truncates and indexes.
corpus::Corpus load_split(const std::filesystem::path& path, corpus::Split split, const RunConfig& config,
                          const corpus::Vocabulary& vocab);

}  // namespace cohext::config
