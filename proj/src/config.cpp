#include "cohext/config.hpp"

#include "cohext/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cohext::config {

namespace pt = boost::property_tree;

namespace {

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
T parse_integer(const std::string& key, const std::string& text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw ValidationError("config: " + key + " expects an integer, got '" + text + "'");
    }
    return value;
}

void parse_value(const std::string& key, const std::string& text, int& out) { out = parse_integer<int>(key, text); }
void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
    out = parse_integer<std::uint64_t>(key, text);
}
void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }

void parse_value(const std::string& key, const std::string& text, double& out) {
    std::size_t used = 0;
    try {
        out = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw ValidationError("config: " + key + " expects a number, got '" + text + "'");
    }
}

void parse_value(const std::string& key, const std::string& text, bool& out) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
        out = true;
    } else if (text == "false" || text == "0" || text == "no" || text == "off") {
        out = false;
    } else {
        throw ValidationError("config: " + key + " expects true or false, got '" + text + "'");
    }
}

std::string_view cohe_loss_name(discriminator::CoherenceLossKind kind) {
    return kind == discriminator::CoherenceLossKind::negative_mean ? "negative_mean" : "bce_to_one";
}

discriminator::CoherenceLossKind parse_cohe_loss(std::string_view name) {
    if (name == "negative_mean") {
        return discriminator::CoherenceLossKind::negative_mean;
    }
    if (name == "bce_to_one") {
        return discriminator::CoherenceLossKind::bce_to_one;
    }
    throw ValidationError("unknown coherence loss '" + std::string(name) + "'");
}

std::string_view start_pair_name(metrics::StartPairRule rule) {
    return rule == metrics::StartPairRule::always ? "always" : "first_sentence";
}

metrics::StartPairRule parse_start_pair(std::string_view name) {
    if (name == "always") {
        return metrics::StartPairRule::always;
    }
    if (name == "first_sentence") {
        return metrics::StartPairRule::first_sentence;
    }
    throw ValidationError("unknown start pair rule '" + std::string(name) + "'");
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

// Ordered "section.key" -> accessor table; the order is also the save order.
using FieldTable = std::vector<std::pair<std::string, Field>>;

template <class Access>
void plain(FieldTable& table, const std::string& name, Access access) {
    table.emplace_back(name, Field{[access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); },
                                   [access, name](RunConfig& c, const std::string& text) {
                                       parse_value(name, text, access(c));
                                   }});
}

template <class Access, class Name, class Parse>
void named(FieldTable& table, const std::string& name, Access access, Name to_name, Parse from_name) {
    table.emplace_back(name, Field{[access, to_name](const RunConfig& c) {
                                       return std::string(to_name(access(const_cast<RunConfig&>(c))));
                                   },
                                   [access, from_name](RunConfig& c, const std::string& text) {
                                       access(c) = from_name(text);
                                   }});
}

void add_stage(FieldTable& t, const std::string& s, trainer::TrainConfig RunConfig::* stage) {
    plain(t, s + ".lambda_ext", [stage](RunConfig& c) -> double& { return (c.*stage).lambda_ext; });
    plain(t, s + ".lambda_dis", [stage](RunConfig& c) -> double& { return (c.*stage).lambda_dis; });
    plain(t, s + ".lambda_cohe", [stage](RunConfig& c) -> double& { return (c.*stage).lambda_cohe; });
    plain(t, s + ".lambda_shuffle", [stage](RunConfig& c) -> double& { return (c.*stage).lambda_shuffle; });
    plain(t, s + ".k", [stage](RunConfig& c) -> int& { return (c.*stage).k; });
    plain(t, s + ".temperature", [stage](RunConfig& c) -> double& { return (c.*stage).temperature; });
    plain(t, s + ".lr", [stage](RunConfig& c) -> double& { return (c.*stage).lr; });
    plain(t, s + ".beta1", [stage](RunConfig& c) -> double& { return (c.*stage).beta1; });
    plain(t, s + ".beta2", [stage](RunConfig& c) -> double& { return (c.*stage).beta2; });
    plain(t, s + ".eps", [stage](RunConfig& c) -> double& { return (c.*stage).eps; });
    plain(t, s + ".batch_size", [stage](RunConfig& c) -> int& { return (c.*stage).batch_size; });
    plain(t, s + ".max_steps", [stage](RunConfig& c) -> int& { return (c.*stage).max_steps; });
    plain(t, s + ".eval_every", [stage](RunConfig& c) -> int& { return (c.*stage).eval_every; });
    plain(t, s + ".alpha", [stage](RunConfig& c) -> double& { return (c.*stage).alpha; });
    named(t, s + ".selection_method", [stage](RunConfig& c) -> selection::Method& { return (c.*stage).method; },
          selection::to_string, selection::parse_method);
    named(t, s + ".merging_mode", [stage](RunConfig& c) -> merging::Mode& { return (c.*stage).merging; },
          merging::to_string, merging::parse_mode);
    named(t, s + ".cohe_loss",
          [stage](RunConfig& c) -> discriminator::CoherenceLossKind& { return (c.*stage).cohe_loss; }, cohe_loss_name,
          parse_cohe_loss);
    named(t, s + ".start_pair", [stage](RunConfig& c) -> metrics::StartPairRule& { return (c.*stage).start_pair; },
          start_pair_name, parse_start_pair);
    plain(t, s + ".check_routing", [stage](RunConfig& c) -> bool& { return (c.*stage).check_routing; });
}

const FieldTable& fields() {
    static const FieldTable table = [] {
        FieldTable t;
        plain(t, "run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });

        plain(t, "data.source", [](RunConfig& c) -> std::string& { return c.data.source; });
        plain(t, "data.train", [](RunConfig& c) -> std::string& { return c.data.train; });
        plain(t, "data.validation", [](RunConfig& c) -> std::string& { return c.data.validation; });
        plain(t, "data.test", [](RunConfig& c) -> std::string& { return c.data.test; });
        plain(t, "data.oracle_k", [](RunConfig& c) -> int& { return c.data.oracle_k; });
        plain(t, "data.min_count", [](RunConfig& c) -> int& { return c.data.min_count; });
        plain(t, "data.synth_docs", [](RunConfig& c) -> int& { return c.data.synth_docs; });
        plain(t, "data.synth_min_sentences", [](RunConfig& c) -> int& { return c.data.synth_min_sentences; });
        plain(t, "data.synth_max_sentences", [](RunConfig& c) -> int& { return c.data.synth_max_sentences; });
        plain(t, "data.synth_vocab", [](RunConfig& c) -> int& { return c.data.synth_vocab; });
        plain(t, "data.synth_seed", [](RunConfig& c) -> std::uint64_t& { return c.data.synth_seed; });
        plain(t, "data.synth_train", [](RunConfig& c) -> int& { return c.data.synth_train; });
        plain(t, "data.synth_validation", [](RunConfig& c) -> int& { return c.data.synth_validation; });
        plain(t, "data.synth_k", [](RunConfig& c) -> int& { return c.data.synth.k; });
        plain(t, "data.synth_min_words", [](RunConfig& c) -> int& { return c.data.synth.words_per_sentence.first; });
        plain(t, "data.synth_max_words", [](RunConfig& c) -> int& { return c.data.synth.words_per_sentence.second; });
        plain(t, "data.synth_min_span", [](RunConfig& c) -> int& { return c.data.synth.salient_span.first; });
        plain(t, "data.synth_max_span", [](RunConfig& c) -> int& { return c.data.synth.salient_span.second; });
        plain(t, "data.synth_topic_words", [](RunConfig& c) -> int& { return c.data.synth.topic_words_per_doc; });
        plain(t, "data.synth_min_topic_per_sentence",
              [](RunConfig& c) -> int& { return c.data.synth.topic_words_per_salient_sentence.first; });
        plain(t, "data.synth_max_topic_per_sentence",
              [](RunConfig& c) -> int& { return c.data.synth.topic_words_per_salient_sentence.second; });
        plain(t, "data.synth_discourse_markers", [](RunConfig& c) -> int& { return c.data.synth.discourse_markers; });

        plain(t, "encoder.d_model", [](RunConfig& c) -> int& { return c.model.encoder.d_model; });
        plain(t, "encoder.n_layers", [](RunConfig& c) -> int& { return c.model.encoder.n_layers; });
        plain(t, "encoder.n_heads", [](RunConfig& c) -> int& { return c.model.encoder.n_heads; });
        plain(t, "encoder.ff_dim", [](RunConfig& c) -> int& { return c.model.encoder.ff_dim; });
        plain(t, "encoder.max_tokens", [](RunConfig& c) -> int& { return c.model.encoder.max_tokens; });
        plain(t, "encoder.vocab_size", [](RunConfig& c) -> int& { return c.model.encoder.vocab_size; });
        plain(t, "encoder.dropout", [](RunConfig& c) -> double& { return c.model.encoder.dropout; });
        plain(t, "encoder.segment_embeddings", [](RunConfig& c) -> bool& { return c.model.encoder.segment_embeddings; });
        plain(t, "encoder.position_init_scale",
              [](RunConfig& c) -> double& { return c.model.encoder.position_init_scale; });

        plain(t, "head.n_layers", [](RunConfig& c) -> int& { return c.model.head.n_layers; });
        plain(t, "head.n_heads", [](RunConfig& c) -> int& { return c.model.head.n_heads; });
        plain(t, "head.ff_dim", [](RunConfig& c) -> int& { return c.model.head.ff_dim; });
        plain(t, "head.max_sentences", [](RunConfig& c) -> int& { return c.model.head.max_sentences; });
        plain(t, "head.dropout", [](RunConfig& c) -> double& { return c.model.head.dropout; });

        plain(t, "discriminator.d_model", [](RunConfig& c) -> int& { return c.model.discriminator.d_model; });
        plain(t, "discriminator.n_layers", [](RunConfig& c) -> int& { return c.model.discriminator.n_layers; });
        plain(t, "discriminator.n_heads", [](RunConfig& c) -> int& { return c.model.discriminator.n_heads; });
        plain(t, "discriminator.ff_dim", [](RunConfig& c) -> int& { return c.model.discriminator.ff_dim; });
        plain(t, "discriminator.max_positions", [](RunConfig& c) -> int& { return c.model.discriminator.max_positions; });
        plain(t, "discriminator.dropout", [](RunConfig& c) -> double& { return c.model.discriminator.dropout; });
        plain(t, "discriminator.pre_norm", [](RunConfig& c) -> bool& { return c.model.discriminator.pre_norm; });
        plain(t, "discriminator.position_init_scale",
              [](RunConfig& c) -> double& { return c.model.discriminator.position_init_scale; });

        plain(t, "converter.enabled", [](RunConfig& c) -> bool& { return c.model.with_converter; });
        plain(t, "converter.n_layers", [](RunConfig& c) -> int& { return c.model.converter.n_layers; });
        plain(t, "converter.n_heads", [](RunConfig& c) -> int& { return c.model.converter.n_heads; });
        plain(t, "converter.d_hidden", [](RunConfig& c) -> int& { return c.model.converter.d_hidden; });
        plain(t, "converter.k_target", [](RunConfig& c) -> int& { return c.model.converter.k_target; });
        plain(t, "converter.lambda_len", [](RunConfig& c) -> double& { return c.model.converter.lambda_len; });
        plain(t, "converter.max_positions", [](RunConfig& c) -> int& { return c.model.converter.max_positions; });
        plain(t, "converter.steps", [](RunConfig& c) -> int& { return c.converter_training.steps; });
        plain(t, "converter.batch_size", [](RunConfig& c) -> int& { return c.converter_training.batch_size; });
        plain(t, "converter.lr", [](RunConfig& c) -> double& { return c.converter_training.lr; });

        add_stage(t, "pretrain", &RunConfig::pretrain);
        add_stage(t, "finetune", &RunConfig::finetune);
        return t;
    }();
    return table;
}

std::filesystem::path resolve_path(const std::string& value, const std::filesystem::path& base) {
    std::filesystem::path p(value);
    if (p.is_relative() && !base.empty()) {
        p = base / p;
    }
    return p.lexically_normal();
}

}  // namespace

void RunConfig::resolve() {
    pretrain.seed = seed;
    finetune.seed = seed;
    converter_training.seed = seed;
    model.resolve();
}

void RunConfig::validate() const {
    if (data.source != "synthetic" && data.source != "jsonl") {
        throw ValidationError("config: data.source must be 'synthetic' or 'jsonl'");
    }
    if (data.source == "jsonl" && (data.train.empty() || data.validation.empty())) {
        throw ValidationError("config: data.train and data.validation are required for jsonl data");
    }
    if (data.source == "synthetic") {
        if (data.synth_train < 1 || data.synth_validation < 1 || data.synth_train + data.synth_validation > data.synth_docs) {
            throw ValidationError("config: synthetic split sizes must be positive and fit synth_docs");
        }
    }
    if (data.oracle_k < 1 || data.min_count < 1) {
        throw ValidationError("config: data.oracle_k and data.min_count must be >= 1");
    }
    ModelConfig probe = model;
    if (probe.encoder.vocab_size == 0) {
        probe.encoder.vocab_size = 5;  // filled from the data at load time
    }
    probe.resolve();
    probe.validate();
    pretrain.validate();
    finetune.validate();
    if (converter_training.steps < 0 || converter_training.batch_size < 1 || !(converter_training.lr > 0.0)) {
        throw ValidationError("config: converter steps, batch_size and lr must be positive");
    }
}

RunConfig defaults() {
    RunConfig c;
    c.model.encoder.d_model = 64;
    c.model.encoder.n_layers = 2;
    c.model.encoder.n_heads = 4;
    c.model.head.n_layers = 1;
    c.model.head.n_heads = 4;
    c.model.discriminator.d_model = 64;
    c.model.discriminator.n_layers = 2;
    c.model.discriminator.n_heads = 4;

    c.pretrain.lambda_ext = 1.0;
    c.pretrain.lambda_dis = 0.0;
    c.pretrain.lambda_cohe = 0.0;
    c.pretrain.lr = 1e-3;
    c.pretrain.max_steps = 800;
    c.pretrain.eval_every = 200;

    c.finetune.lambda_ext = 0.0;
    c.finetune.lambda_dis = 1.0;
    c.finetune.lambda_cohe = 1.0;
    c.finetune.lr = 1e-4;
    c.finetune.max_steps = 1000;
    c.finetune.eval_every = 200;
    c.resolve();
    return c;
}

RunConfig parse(const std::string& text, const std::filesystem::path& base_dir) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError("config: " + std::string(e.what()));
    }
    std::map<std::string, const Field*> index;
    for (const auto& [name, field] : fields()) {
        index.emplace(name, &field);
    }
    RunConfig config = defaults();
    for (const auto& [section, keys] : tree) {
        if (keys.empty() && !keys.data().empty()) {
            throw ValidationError("config: key '" + section + "' must live inside a section");
        }
        for (const auto& [key, value] : keys) {
            const std::string name = section + "." + key;
            const auto it = index.find(name);
            if (it == index.end()) {
                throw ValidationError("config: unknown key '" + name + "'");
            }
            it->second->set(config, value.data());
        }
    }
    for (std::string* path : {&config.data.train, &config.data.validation, &config.data.test}) {
        if (!path->empty()) {
            *path = resolve_path(*path, base_dir).string();
        }
    }
    config.resolve();
    config.validate();
    return config;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("config: cannot open " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.parent_path());
}

std::string to_ini(const RunConfig& config) {
    std::string out;
    std::string current;
    for (const auto& [name, field] : fields()) {
        const auto dot = name.find('.');
        const std::string section = name.substr(0, dot);
        if (section != current) {
            out += (current.empty() ? "[" : "\n[") + section + "]\n";
            current = section;
        }
        out += name.substr(dot + 1) + " = " + field.get(config) + "\n";
    }
    return out;
}

void save(const RunConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw TrainingError("cannot write " + path.string());
    }
    out << to_ini(config);
}

corpus::Corpus load_split(const std::filesystem::path& path, corpus::Split split, const RunConfig& config,
                          const corpus::Vocabulary& vocab) {
    if (!std::filesystem::exists(path)) {
        throw ValidationError("dataset file not found: " + path.string());
    }
    corpus::Corpus raw = corpus::load_jsonl(path, split);
    corpus::Corpus out;
    out.split = split;
    for (const auto& doc : raw.documents) {
        corpus::Document d = corpus::truncate(doc, config.model.encoder.max_tokens);
        if (!d.labels && d.summary) {
            d.labels = corpus::oracle_labels(d, *d.summary, config.data.oracle_k);
        }
        vocab.index(d);
        out.documents.push_back(std::move(d));
    }
    return out;
}

Datasets load_datasets(const RunConfig& config, const corpus::Vocabulary* vocab) {
    config.validate();
    Datasets ds;
    if (config.data.source == "synthetic") {
        const auto& d = config.data;
        corpus::Corpus all = corpus::synth_corpus(d.synth_docs, {d.synth_min_sentences, d.synth_max_sentences},
                                                  d.synth_vocab, d.synth_seed, d.synth);
        ds.vocab = vocab != nullptr ? *vocab : corpus::Vocabulary::synthetic(d.synth_vocab);
        ds.train.split = corpus::Split::train;
        ds.validation.split = corpus::Split::validation;
        ds.test.split = corpus::Split::test;
        for (std::size_t i = 0; i < all.documents.size(); ++i) {
            corpus::Document doc = corpus::truncate(all.documents[i], config.model.encoder.max_tokens);
            ds.vocab.index(doc);
            const auto n = static_cast<int>(i);
            auto& target = n < d.synth_train ? ds.train
                           : n < d.synth_train + d.synth_validation ? ds.validation
                                                                    : ds.test;
            target.documents.push_back(std::move(doc));
        }
        return ds;
    }
    const auto& d = config.data;
    if (vocab != nullptr) {
        ds.vocab = *vocab;
    } else {
        if (!std::filesystem::exists(d.train)) {
            throw ValidationError("dataset file not found: " + d.train);
        }
        ds.vocab = corpus::Vocabulary::build(corpus::load_jsonl(d.train, corpus::Split::train), d.min_count);
    }
    ds.train = load_split(d.train, corpus::Split::train, config, ds.vocab);
    ds.validation = load_split(d.validation, corpus::Split::validation, config, ds.vocab);
    if (!d.test.empty()) {
        ds.test = load_split(d.test, corpus::Split::test, config, ds.vocab);
    }
    return ds;
}

}  // namespace cohext::config
