#pragma once

// Sentence-switch augmentation and per-sentence coherence labels.

#include "cohext/corpus.hpp"

#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace cohext::augment {

struct ShuffledDocument {
    corpus::Document base;
    std::vector<int> permutation;       // shuffled position -> original index
    std::vector<int> coherence_labels;  // per shuffled position
    int n_switches{0};

    // The base document re-ordered by `permutation`; labels follow their sentences.
    [[nodiscard]] corpus::Document shuffled() const;
};

// Poisson(lambda) draw clamped to [0, 3 * n_sentences].
int sample_num_switches(double lambda, int n_sentences, std::mt19937_64& rng);

// Applies n_switches swaps of two distinct uniformly chosen positions.
// Documents with fewer than two sentences get the identity and zero switches.
ShuffledDocument shuffle_document(const corpus::Document& doc, int n_switches, std::mt19937_64& rng);

// label[j] = 1 iff permutation[j] == permutation[j-1] + 1 (j >= 1);
// label[0] = 1 iff permutation[0] == 0.
std::vector<int> coherence_labels(std::span<const int> permutation);

[[nodiscard]] bool is_bijection(std::span<const int> permutation);

// Same JSONL schema as the corpus plus "permutation" and "coherence_labels";
// sentences are written in shuffled order.
void save_shuffled_jsonl(std::span<const ShuffledDocument> docs, const std::filesystem::path& path);

}  // namespace cohext::augment
