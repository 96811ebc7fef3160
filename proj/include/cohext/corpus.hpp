#pragma once

// Documents, JSONL ingestion, tokenisation, truncation, ORACLE labelling and
// the deterministic synthetic corpus used for desk-scale experiments.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cohext::corpus {

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct Sentence {
    std::string text;
    std::vector<std::string> words;  // tokenizer output, used by Rouge
    std::vector<int> ids;            // vocabulary ids, filled by Vocabulary::index
};

struct Document {
    std::string id;
    std::vector<Sentence> sentences;
    std::optional<std::vector<int>> labels;
    std::optional<std::vector<std::string>> summary;

    [[nodiscard]] int size() const { return static_cast<int>(sentences.size()); }
    [[nodiscard]] int total_tokens() const;
    // Throws ValidationError naming the document id.
    void validate() const;
};

struct Corpus {
    std::vector<Document> documents;
    Split split{Split::train};

    void validate() const;
};

// Lowercases, splits on whitespace and emits each punctuation character as its own token.
std::vector<std::string> tokenize(std::string_view text);

// Builds a Document from raw sentence strings.
Document make_document(std::string id, std::span<const std::string> sentences,
                       std::optional<std::vector<int>> labels = std::nullopt,
                       std::optional<std::vector<std::string>> summary = std::nullopt);

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;

    Vocabulary();

    // Specials first, then words by descending frequency, ties lexicographic.
    static Vocabulary build(const Corpus& corpus, int min_count = 1);
    // Specials followed by w0 .. w{size-1}, the alphabet of synth_corpus.
    static Vocabulary synthetic(int word_count);
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    [[nodiscard]] int id(std::string_view word) const;
    [[nodiscard]] const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
    [[nodiscard]] int size() const { return static_cast<int>(tokens_.size()); }

    void index(Document& doc) const;
    void index(Corpus& corpus) const;

private:
    void add(std::string word);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Schema per line: {"id": str, "sentences": [str], "summary": [str]?, "labels": [0|1]?}.
// Ids are left empty; index the corpus with a Vocabulary before encoding.
Corpus load_jsonl(const std::filesystem::path& path, Split split);
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);

// Keeps the longest sentence prefix within max_tokens content tokens; the first
// sentence is always kept, cut to max_tokens if necessary.
Document truncate(const Document& doc, int max_tokens = 512);

// Greedy ORACLE: adds the sentence maximising mean(Rouge-1 F1, Rouge-2 F1) of
// the selection against the reference until k picks or no positive gain.
std::vector<int> oracle_labels(const Document& doc, std::span<const std::string> reference, int k);

// Indices of sentences with label 1, ascending.
std::vector<int> labelled_indices(const Document& doc);

struct SynthOptions {
    int k{3};
    std::pair<int, int> words_per_sentence{5, 8};
    // Length of the salient span whose sentences carry the document's topic words.
    std::pair<int, int> salient_span{4, 6};
    int topic_words_per_doc{6};
    std::pair<int, int> topic_words_per_salient_sentence{1, 3};
    // Size of a cyclic inventory of discourse markers taken from the top of
    // the vocabulary; sentence i opens with marker (b + i) mod size for a
    // per-document offset b. 0 disables markers.
    int discourse_markers{0};
};

// Deterministic for a fixed seed. Each document has a lexical chain (adjacent
// sentences share one link word), a salient span carrying topic words, and a
// reference that copies k sentences of the span; labels come from oracle_labels.
Corpus synth_corpus(int n_docs, std::pair<int, int> sentence_range, int vocab_size, uint64_t seed,
                    const SynthOptions& options = {});

// Copies the sentences at `indices` (ascending) as the document summary and
// labels it with oracle_labels(doc, summary, indices.size()).
void plant_reference(Document& doc, std::span<const int> indices);

// Mean sentence count after truncation to max_tokens.
double mean_sentence_count(const Corpus& corpus, int max_tokens = 512);

}  // namespace cohext::corpus
