#include "cohext/augment.hpp"

#include "cohext/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace cohext::augment {

corpus::Document ShuffledDocument::shuffled() const {
    corpus::Document out;
    out.id = base.id;
    out.summary = base.summary;
    out.sentences.reserve(permutation.size());
    for (int src : permutation) {
        out.sentences.push_back(base.sentences[static_cast<size_t>(src)]);
    }
    if (base.labels) {
        std::vector<int> labels;
        labels.reserve(permutation.size());
        for (int src : permutation) {
            labels.push_back((*base.labels)[static_cast<size_t>(src)]);
        }
        out.labels = std::move(labels);
    }
    return out;
}

int sample_num_switches(double lambda, int n_sentences, std::mt19937_64& rng) {
    if (!(lambda > 0.0)) {
        throw ValidationError("sample_num_switches: lambda must be positive");
    }
    const int draw = std::poisson_distribution<int>(lambda)(rng);
    return std::clamp(draw, 0, 3 * std::max(0, n_sentences));
}

ShuffledDocument shuffle_document(const corpus::Document& doc, int n_switches, std::mt19937_64& rng) {
    ShuffledDocument out;
    out.base = doc;
    const int n = doc.size();
    out.permutation.resize(static_cast<size_t>(n));
    std::iota(out.permutation.begin(), out.permutation.end(), 0);
    if (n >= 2) {
        out.n_switches = std::max(0, n_switches);
        std::uniform_int_distribution<int> first(0, n - 1);
        std::uniform_int_distribution<int> second(0, n - 2);
        for (int s = 0; s < out.n_switches; ++s) {
            const int i = first(rng);
            int j = second(rng);
            if (j >= i) {
                ++j;
            }
            std::swap(out.permutation[static_cast<size_t>(i)], out.permutation[static_cast<size_t>(j)]);
        }
    }
    out.coherence_labels = coherence_labels(out.permutation);
    return out;
}

std::vector<int> coherence_labels(std::span<const int> permutation) {
    if (!is_bijection(permutation)) {
        throw ValidationError("coherence_labels: input is not a permutation");
    }
    std::vector<int> labels(permutation.size(), 0);
    if (!permutation.empty()) {
        labels[0] = permutation[0] == 0 ? 1 : 0;
    }
    for (size_t j = 1; j < permutation.size(); ++j) {
        labels[j] = permutation[j] == permutation[j - 1] + 1 ? 1 : 0;
    }
    return labels;
}

bool is_bijection(std::span<const int> permutation) {
    std::vector<char> seen(permutation.size(), 0);
    for (int p : permutation) {
        if (p < 0 || static_cast<size_t>(p) >= permutation.size() || seen[static_cast<size_t>(p)] != 0) {
            return false;
        }
        seen[static_cast<size_t>(p)] = 1;
    }
    return true;
}

void save_shuffled_jsonl(std::span<const ShuffledDocument> docs, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot write " + path.string());
    }
    for (const auto& sd : docs) {
        const corpus::Document doc = sd.shuffled();
        nlohmann::json obj;
        obj["id"] = doc.id;
        nlohmann::json sentences = nlohmann::json::array();
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
        obj["permutation"] = sd.permutation;
        obj["coherence_labels"] = sd.coherence_labels;
        out << obj.dump() << '\n';
    }
}

}  // namespace cohext::augment
