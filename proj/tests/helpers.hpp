#pragma once

#include "cohext/config.hpp"
#include "cohext/corpus.hpp"
#include "cohext/model.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline cohext::corpus::Document doc_of(std::vector<std::string> sentences, std::string id = "d") {
    return cohext::corpus::make_document(std::move(id), sentences);
}

// Small run config: synthetic corpus of `docs` documents, d_model `d`.
inline cohext::config::RunConfig tiny_config(int docs = 24, int d = 16) {
    auto c = cohext::config::defaults();
    c.data.synth_docs = docs;
    c.data.synth_train = docs - 8;
    c.data.synth_validation = 4;
    c.data.synth_min_sentences = 5;
    c.data.synth_max_sentences = 9;
    c.model.encoder.d_model = d;
    c.model.encoder.n_heads = 2;
    c.model.head.n_heads = 2;
    c.model.discriminator.d_model = d;
    c.model.discriminator.n_heads = 2;
    c.model.discriminator.n_layers = 1;
    c.pretrain.max_steps = 6;
    c.pretrain.eval_every = 3;
    c.pretrain.batch_size = 4;
    c.finetune.max_steps = 6;
    c.finetune.eval_every = 3;
    c.finetune.batch_size = 4;
    c.finetune.lr = 1e-3;
    c.resolve();
    return c;
}

inline cohext::Model tiny_model(cohext::config::RunConfig& c, const cohext::config::Datasets& ds,
                                std::uint64_t seed = 0) {
    c.model.encoder.vocab_size = ds.vocab.size();
    return cohext::Model::create(c.model, seed);
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cohext_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing
