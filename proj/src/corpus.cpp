#include "cohext/corpus.hpp"

#include "cohext/errors.hpp"
#include "cohext/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <unordered_set>

namespace cohext::corpus {

using nlohmann::json;

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train:
            return "train";
        case Split::validation:
            return "validation";
        case Split::test:
            return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") {
        return Split::train;
    }
    if (name == "validation" || name == "valid" || name == "val") {
        return Split::validation;
    }
    if (name == "test") {
        return Split::test;
    }
    throw ValidationError("unknown split '" + std::string(name) + "'");
}

int Document::total_tokens() const {
    int total = 0;
    for (const auto& s : sentences) {
        total += static_cast<int>(s.words.size());
    }
    return total;
}

void Document::validate() const {
    if (sentences.empty()) {
        throw ValidationError("document '" + id + "': sentence list is empty");
    }
    for (size_t i = 0; i < sentences.size(); ++i) {
        if (sentences[i].words.empty()) {
            throw ValidationError("document '" + id + "': sentence " + std::to_string(i) + " is empty");
        }
    }
    if (labels) {
        if (labels->size() != sentences.size()) {
            throw ValidationError("document '" + id + "': " + std::to_string(labels->size()) + " labels for " +
                                  std::to_string(sentences.size()) + " sentences");
        }
        for (int l : *labels) {
            if (l != 0 && l != 1) {
                throw ValidationError("document '" + id + "': labels must be 0 or 1");
            }
        }
    }
}

void Corpus::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& doc : documents) {
        doc.validate();
        if (!seen.insert(doc.id).second) {
            throw ValidationError("duplicate document id '" + doc.id + "'");
        }
    }
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    };
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc) != 0) {
            flush();
        } else if (uc < 0x80 && std::ispunct(uc) != 0) {
            flush();
            out.emplace_back(1, ch);
        } else {
            current.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : ch);
        }
    }
    flush();
    return out;
}

Document make_document(std::string id, std::span<const std::string> sentences, std::optional<std::vector<int>> labels,
                       std::optional<std::vector<std::string>> summary) {
    Document doc;
    doc.id = std::move(id);
    doc.sentences.reserve(sentences.size());
    for (const auto& text : sentences) {
        Sentence s;
        s.text = text;
        s.words = tokenize(text);
        doc.sentences.push_back(std::move(s));
    }
    doc.labels = std::move(labels);
    doc.summary = std::move(summary);
    return doc;
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary() {
    for (const char* special : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) {
        add(special);
    }
}

void Vocabulary::add(std::string word) {
    if (ids_.contains(word)) {
        return;
    }
    ids_.emplace(word, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(const Corpus& corpus, int min_count) {
    std::map<std::string, int> counts;
    for (const auto& doc : corpus.documents) {
        for (const auto& s : doc.sentences) {
            for (const auto& w : s.words) {
                ++counts[w];
            }
        }
    }
    std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary vocab;
    for (auto& [word, count] : ranked) {
        if (count >= min_count) {
            vocab.add(word);
        }
    }
    return vocab;
}

Vocabulary Vocabulary::synthetic(int word_count) {
    Vocabulary vocab;
    for (int i = 0; i < word_count; ++i) {
        vocab.add("w" + std::to_string(i));
    }
    return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open vocabulary file " + path.string());
    }
    Vocabulary vocab;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no <= 4) {
            if (line != vocab.tokens_[static_cast<size_t>(line_no - 1)]) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected special token " +
                                 vocab.tokens_[static_cast<size_t>(line_no - 1)]);
            }
            continue;
        }
        if (!line.empty()) {
            vocab.add(line);
        }
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    for (const auto& t : tokens_) {
        out << t << '\n';
    }
}

int Vocabulary::id(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::index(Document& doc) const {
    for (auto& s : doc.sentences) {
        s.ids.clear();
        s.ids.reserve(s.words.size());
        for (const auto& w : s.words) {
            s.ids.push_back(id(w));
        }
    }
}

void Vocabulary::index(Corpus& corpus) const {
    for (auto& doc : corpus.documents) {
        index(doc);
    }
}

// --------------------------------------------------------------------- JSONL

namespace {

std::vector<std::string> string_array(const json& value, const std::string& key, int line_no) {
    if (!value.is_array()) {
        throw ParseError("line " + std::to_string(line_no) + ": \"" + key + "\" must be an array of strings");
    }
    std::vector<std::string> out;
    for (const auto& item : value) {
        if (!item.is_string()) {
            throw ParseError("line " + std::to_string(line_no) + ": \"" + key + "\" must be an array of strings");
        }
        out.push_back(item.get<std::string>());
    }
    return out;
}

}  // namespace

Corpus load_jsonl(const std::filesystem::path& path, Split split) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open " + path.string());
    }
    Corpus corpus;
    corpus.split = split;
    std::unordered_set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected a JSON object");
        }
        if (!obj.contains("id") || !obj["id"].is_string()) {
            throw ParseError("line " + std::to_string(line_no) + ": missing string field \"id\"");
        }
        if (!obj.contains("sentences")) {
            throw ParseError("line " + std::to_string(line_no) + ": missing field \"sentences\"");
        }
        const auto sentences = string_array(obj["sentences"], "sentences", line_no);
        std::optional<std::vector<std::string>> summary;
        if (obj.contains("summary") && !obj["summary"].is_null()) {
            summary = string_array(obj["summary"], "summary", line_no);
        }
        std::optional<std::vector<int>> labels;
        if (obj.contains("labels") && !obj["labels"].is_null()) {
            if (!obj["labels"].is_array()) {
                throw ParseError("line " + std::to_string(line_no) + ": \"labels\" must be an array");
            }
            labels.emplace();
            for (const auto& l : obj["labels"]) {
                if (!l.is_number_integer()) {
                    throw ParseError("line " + std::to_string(line_no) + ": labels must be integers");
                }
                labels->push_back(l.get<int>());
            }
        }
        Document doc = make_document(obj["id"].get<std::string>(), sentences, std::move(labels), std::move(summary));
        doc.validate();
        if (!seen.insert(doc.id).second) {
            throw ValidationError("duplicate document id '" + doc.id + "' at line " + std::to_string(line_no));
        }
        corpus.documents.push_back(std::move(doc));
    }
    return corpus;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot write " + path.string());
    }
    for (const auto& doc : corpus.documents) {
        json obj;
        obj["id"] = doc.id;
        json sentences = json::array();
        for (const auto& s : doc.sentences) {
            sentences.push_back(s.text);
        }
        obj["sentences"] = std::move(sentences);
        if (doc.summary) {
            obj["summary"] = *doc.summary;
        }
        if (doc.labels) {
            obj["labels"] = *doc.labels;
        }
        out << obj.dump() << '\n';
    }
}

// ---------------------------------------------------------------- truncation

Document truncate(const Document& doc, int max_tokens) {
    if (max_tokens < 1) {
        throw ValidationError("truncate: max_tokens must be >= 1");
    }
    Document out;
    out.id = doc.id;
    out.summary = doc.summary;
    int used = 0;
    for (const auto& s : doc.sentences) {
        const int len = static_cast<int>(s.words.size());
        if (used + len > max_tokens) {
            break;
        }
        out.sentences.push_back(s);
        used += len;
    }
    if (out.sentences.empty() && !doc.sentences.empty()) {
        Sentence first = doc.sentences.front();
        first.words.resize(static_cast<size_t>(max_tokens));
        if (first.ids.size() > static_cast<size_t>(max_tokens)) {
            first.ids.resize(static_cast<size_t>(max_tokens));
        }
        std::string text;
        for (const auto& w : first.words) {
            if (!text.empty()) {
                text.push_back(' ');
            }
            text += w;
        }
        first.text = std::move(text);
        out.sentences.push_back(std::move(first));
    }
    if (doc.labels) {
        out.labels = std::vector<int>(doc.labels->begin(), doc.labels->begin() + out.size());
    }
    return out;
}

// -------------------------------------------------------------------- ORACLE

std::vector<int> oracle_labels(const Document& doc, std::span<const std::string> reference, int k) {
    if (doc.sentences.empty()) {
        throw ValidationError("oracle_labels: document has no sentences");
    }
    if (k < 1) {
        throw ValidationError("oracle_labels: k must be >= 1");
    }
    // Shared integer alphabet for the document and the reference.
    std::unordered_map<std::string, int> ids;
    auto intern = [&ids](const std::vector<std::string>& words, std::vector<int>& out) {
        for (const auto& w : words) {
            out.push_back(ids.try_emplace(w, static_cast<int>(ids.size())).first->second);
        }
    };
    std::vector<std::vector<int>> sentences(doc.sentences.size());
    for (size_t i = 0; i < doc.sentences.size(); ++i) {
        intern(doc.sentences[i].words, sentences[i]);
    }
    std::vector<int> ref;
    for (const auto& r : reference) {
        intern(tokenize(r), ref);
    }

    const int n = doc.size();
    std::vector<int> labels(static_cast<size_t>(n), 0);
    auto score_of = [&](const std::vector<int>& picked) {
        std::vector<int> cand;
        for (int i = 0; i < n; ++i) {
            if (picked[static_cast<size_t>(i)] != 0) {
                cand.insert(cand.end(), sentences[static_cast<size_t>(i)].begin(),
                            sentences[static_cast<size_t>(i)].end());
            }
        }
        const double r1 = metrics::rouge_n(std::span<const int>(cand), std::span<const int>(ref), 1).f1;
        const double r2 = metrics::rouge_n(std::span<const int>(cand), std::span<const int>(ref), 2).f1;
        return 0.5 * (r1 + r2);
    };

    double current = 0.0;
    for (int pick = 0; pick < k; ++pick) {
        int best = -1;
        double best_score = current;
        for (int i = 0; i < n; ++i) {
            if (labels[static_cast<size_t>(i)] != 0) {
                continue;
            }
            labels[static_cast<size_t>(i)] = 1;
            const double s = score_of(labels);
            labels[static_cast<size_t>(i)] = 0;
            if (s > best_score) {
                best_score = s;
                best = i;
            }
        }
        if (best < 0) {
            break;
        }
        labels[static_cast<size_t>(best)] = 1;
        current = best_score;
    }
    return labels;
}

std::vector<int> labelled_indices(const Document& doc) {
    std::vector<int> out;
    if (doc.labels) {
        for (int i = 0; i < doc.size(); ++i) {
            if ((*doc.labels)[static_cast<size_t>(i)] != 0) {
                out.push_back(i);
            }
        }
    }
    return out;
}

// ----------------------------------------------------------------- synthetic

void plant_reference(Document& doc, std::span<const int> indices) {
    std::vector<std::string> summary;
    for (int idx : indices) {
        if (idx < 0 || idx >= doc.size()) {
            throw ValidationError("plant_reference: index outside document '" + doc.id + "'");
        }
        summary.push_back(doc.sentences[static_cast<size_t>(idx)].text);
    }
    doc.labels = oracle_labels(doc, summary, static_cast<int>(std::max<size_t>(1, indices.size())));
    doc.summary = std::move(summary);
}

namespace {

// Draws `count` values from [lo, hi); without replacement when the range allows.
std::vector<int> draw_words(int lo, int hi, int count, std::mt19937_64& rng) {
    std::vector<int> out;
    const int width = hi - lo;
    if (width >= count) {
        std::vector<int> pool(static_cast<size_t>(width));
        std::iota(pool.begin(), pool.end(), lo);
        for (int i = 0; i < count; ++i) {
            std::uniform_int_distribution<int> pick(i, width - 1);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(rng))]);
            out.push_back(pool[static_cast<size_t>(i)]);
        }
    } else {
        std::uniform_int_distribution<int> pick(lo, hi - 1);
        for (int i = 0; i < count; ++i) {
            out.push_back(pick(rng));
        }
    }
    return out;
}

int uniform(std::pair<int, int> range, std::mt19937_64& rng) {
    const int lo = std::min(range.first, range.second);
    const int hi = std::max(range.first, range.second);
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

Corpus synth_corpus(int n_docs, std::pair<int, int> sentence_range, int vocab_size, uint64_t seed,
                    const SynthOptions& options) {
    if (n_docs < 1 || sentence_range.first < 1 || sentence_range.second < 1 || vocab_size < 1) {
        throw ValidationError("synth_corpus: all counts must be >= 1");
    }
    std::mt19937_64 rng(seed);
    // Vocabulary bands: topic words, chain links, filler.
    const int band = std::max(1, vocab_size * 3 / 10);
    const int topic_hi = std::min(vocab_size, band);
    const int link_lo = topic_hi < vocab_size ? topic_hi : 0;
    const int link_hi = std::min(vocab_size, link_lo + band);
    const int filler_lo = link_hi < vocab_size ? link_hi : 0;
    const int markers = options.discourse_markers;
    if (markers < 0 || markers >= vocab_size - filler_lo) {
        throw ValidationError("synth_corpus: discourse marker inventory does not fit the vocabulary");
    }
    const int marker_lo = vocab_size - markers;

    Corpus corpus;
    corpus.split = Split::train;
    corpus.documents.reserve(static_cast<size_t>(n_docs));
    for (int d = 0; d < n_docs; ++d) {
        const int n = uniform(sentence_range, rng);
        const int span_len = std::clamp(uniform(options.salient_span, rng), 1, n);
        const int span_start = std::uniform_int_distribution<int>(0, n - span_len)(rng);
        const auto topics = draw_words(0, topic_hi, options.topic_words_per_doc, rng);
        const auto links = draw_words(link_lo, link_hi, n + 1, rng);
        const int marker_offset = markers > 0 ? std::uniform_int_distribution<int>(0, markers - 1)(rng) : 0;

        std::vector<std::string> texts;
        texts.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            std::vector<int> words{links[static_cast<size_t>(i)], links[static_cast<size_t>(i + 1)]};
            if (i >= span_start && i < span_start + span_len) {
                const int t = std::min(uniform(options.topic_words_per_salient_sentence, rng),
                                       static_cast<int>(topics.size()));
                const auto picks = draw_words(0, static_cast<int>(topics.size()), t, rng);
                for (int p : picks) {
                    words.push_back(topics[static_cast<size_t>(p)]);
                }
            }
            const int length = std::max(uniform(options.words_per_sentence, rng), static_cast<int>(words.size()));
            const auto filler = draw_words(filler_lo, marker_lo, length - static_cast<int>(words.size()), rng);
            words.insert(words.end(), filler.begin(), filler.end());
            std::shuffle(words.begin(), words.end(), rng);
            if (markers > 0) {
                // Markers open the sentence, like a connective.
                words.insert(words.begin(), marker_lo + (marker_offset + i) % markers);
            }
            std::string text;
            for (int w : words) {
                if (!text.empty()) {
                    text.push_back(' ');
                }
                text += "w" + std::to_string(w);
            }
            texts.push_back(std::move(text));
        }

        const int planted_count = std::min(options.k, span_len);
        auto offsets = draw_words(0, span_len, planted_count, rng);
        std::vector<int> planted;
        for (int o : offsets) {
            planted.push_back(span_start + o);
        }
        std::sort(planted.begin(), planted.end());

        char id[32];
        std::snprintf(id, sizeof(id), "synth-%05d", d);
        Document doc = make_document(id, texts);
        plant_reference(doc, planted);
        corpus.documents.push_back(std::move(doc));
    }
    return corpus;
}

double mean_sentence_count(const Corpus& corpus, int max_tokens) {
    if (corpus.documents.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& doc : corpus.documents) {
        total += truncate(doc, max_tokens).size();
    }
    return total / static_cast<double>(corpus.documents.size());
}

}  // namespace cohext::corpus
