#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cohext/checkpoint.hpp"
#include "cohext/config.hpp"
#include "cohext/errors.hpp"
#include "helpers.hpp"

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

using namespace cohext;
namespace fs = std::filesystem;

namespace {

const char* const kTinyIni = R"([run]
seed = 7
[data]
synth_docs = 30
synth_train = 20
synth_validation = 5
synth_min_sentences = 5
synth_max_sentences = 9
[encoder]
d_model = 16
n_heads = 2
[head]
n_heads = 2
[discriminator]
d_model = 16
n_heads = 2
n_layers = 1
[converter]
n_layers = 1
n_heads = 2
d_hidden = 12
[pretrain]
max_steps = 6
eval_every = 3
batch_size = 4
[finetune]
max_steps = 4
eval_every = 2
batch_size = 4
)";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the CLI with `args`, discarding output; returns the exit status.
int run(const std::string& args) {
    const std::string cmd = std::string(COHEXT_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Workspace {
    fs::path dir;
    fs::path ini;

    explicit Workspace(const std::string& name) : dir(testing::scratch_dir(name)), ini(dir / "tiny.ini") {
        std::ofstream(ini) << kTinyIni;
    }
    [[nodiscard]] std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

}  // namespace

TEST_CASE("config files parse, reject unknown keys and round-trip") {
    const auto cfg = config::parse(kTinyIni);
    CHECK(cfg.seed == 7);
    CHECK(cfg.model.encoder.d_model == 16);
    CHECK(cfg.model.discriminator.input_dim == 16);
    CHECK(cfg.pretrain.seed == 7);
    CHECK(cfg.finetune.lambda_ext == 0.0);
    CHECK(cfg.finetune.lambda_dis == 1.0);
    CHECK(cfg.finetune.lambda_cohe == 1.0);

    CHECK_THROWS_AS((void)config::parse("[encoder]\nwidth = 3\n"), ValidationError);
    CHECK_THROWS_AS((void)config::parse("[nonsense]\nx = 1\n"), ValidationError);
    CHECK_THROWS_AS((void)config::parse("[encoder\nd_model = 3\n"), ParseError);
    CHECK_THROWS_AS((void)config::parse("[encoder]\nd_model = abc\n"), ValidationError);
    CHECK_THROWS_AS((void)config::parse("[pretrain]\nlambda_ext = 0\n"), ValidationError);

    const auto again = config::parse(config::to_ini(cfg));
    CHECK(config::to_ini(again) == config::to_ini(cfg));

    const auto rel = config::parse("[data]\nsource = jsonl\ntrain = data/t.jsonl\nvalidation = v.jsonl\n", "/base");
    CHECK(fs::path(rel.data.train) == fs::path("/base/data/t.jsonl"));
    CHECK(fs::path(rel.data.validation) == fs::path("/base/v.jsonl"));
}

TEST_CASE("checkpoint tensors and bundles round-trip") {
    const auto dir = testing::scratch_dir("cli_ckpt");
    auto cfg = testing::tiny_config();
    const auto ds = config::load_datasets(cfg);
    const auto model = testing::tiny_model(cfg, ds, 3);
    const auto weights = model.snapshot();
    checkpoint::save(dir / "c", weights, cfg, &ds.vocab, 42);

    const auto back = checkpoint::load(dir / "c");
    CHECK(back.step == 42);
    CHECK(back.weights == weights);
    REQUIRE(back.vocab.has_value());
    CHECK(back.vocab->size() == ds.vocab.size());
    CHECK(config::to_ini(back.config) == config::to_ini(cfg));

    const auto manifest = nlohmann::json::parse(slurp(dir / "c" / "manifest.json"));
    CHECK(manifest.at("format") == "cohext-checkpoint");
    CHECK(manifest.at("tensors").size() == weights.size());
    CHECK_THROWS_AS((void)checkpoint::load(dir / "missing"), ValidationError);
}

TEST_CASE("git-style blob hashes") {
    CHECK(checkpoint::git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(checkpoint::git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("usage and configuration errors exit with 2") {
    Workspace w("cli_errors");
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("pretrain") == 2);
    CHECK(run("evaluate --checkpoint " + w.path("nope") + " --out " + w.path("ev")) == 2);

    std::ofstream(w.dir / "missing.ini") << "[data]\nsource = jsonl\ntrain = nowhere.jsonl\n";
    CHECK(run("pretrain --config " + w.path("missing.ini") + " --out " + w.path("p")) == 2);
    std::ofstream(w.dir / "unknown.ini") << "[encoder]\ncolour = blue\n";
    CHECK(run("pretrain --config " + w.path("unknown.ini") + " --out " + w.path("p")) == 2);
}

TEST_CASE("pretrain, finetune, evaluate and report end to end") {
    Workspace w("cli_pipeline");
    const std::string cfg = " --config " + w.ini.string();
    REQUIRE(run("pretrain" + cfg + " --seed 7 --out " + w.path("a")) == 0);
    REQUIRE(run("pretrain" + cfg + " --seed 7 --out " + w.path("b")) == 0);
    CHECK(fs::exists(w.dir / "a" / "run.json"));
    CHECK(fs::exists(w.dir / "a" / "checkpoint" / "tensors.bin"));
    CHECK(slurp(w.dir / "a" / "log.csv") == slurp(w.dir / "b" / "log.csv"));
    CHECK(slurp(w.dir / "a" / "checkpoint" / "tensors.bin") == slurp(w.dir / "b" / "checkpoint" / "tensors.bin"));

    REQUIRE(run("finetune --init " + w.path("a/checkpoint") + " --out " + w.path("f1")) == 0);
    REQUIRE(run("finetune --init " + w.path("a/checkpoint") + " --out " + w.path("f2")) == 0);
    CHECK(slurp(w.dir / "f1" / "log.csv") == slurp(w.dir / "f2" / "log.csv"));

    REQUIRE(run("evaluate --checkpoint " + w.path("f1/checkpoint") + " --alpha 0 --out " + w.path("e0")) == 0);
    REQUIRE(run("evaluate --checkpoint " + w.path("f1/checkpoint") + " --alpha 5 --out " + w.path("e5")) == 0);
    const auto m0 = nlohmann::json::parse(slurp(w.dir / "e0" / "metrics.json"));
    const auto m5 = nlohmann::json::parse(slurp(w.dir / "e5" / "metrics.json"));
    for (const char* key : {"r1", "r2", "rl", "cons_prop", "l_ext"}) {
        CHECK(m0.at(key) == m5.at(key));
    }
    CHECK(m0.at("bs").is_null());
    CHECK(m5.at("s_score").get<double>() - m0.at("s_score").get<double>() ==
          doctest::Approx(5.0 * m0.at("cons_prop").get<double>()));
    CHECK(fs::exists(w.dir / "e0" / "documents.csv"));

    REQUIRE(run("report --checkpoint " + w.path("f1/checkpoint") + " --out " + w.path("rep")) == 0);
    const auto positions = slurp(w.dir / "rep" / "positions.csv");
    CHECK(positions.rfind("bin,lower,upper,frequency\n", 0) == 0);
    CHECK(std::count(positions.begin(), positions.end(), '\n') == 21);
    CHECK(slurp(w.dir / "rep" / "curves.csv") == slurp(w.dir / "f1" / "checkpoint" / "log.csv"));

    // A stage-1 checkpoint of another width cannot initialise this config.
    auto wide = config::parse(kTinyIni);
    wide.model.encoder.d_model = 32;
    wide.model.discriminator.d_model = 32;
    config::save(wide, w.dir / "wide.ini");
    CHECK(run("finetune --init " + w.path("a/checkpoint") + " --config " + w.path("wide.ini") + " --out " +
              w.path("bad")) == 2);
}

TEST_CASE("augment is reproducible for a fixed seed") {
    Workspace w("cli_augment");
    const std::string base = "augment --config " + w.ini.string() + " --lambda 2 --seed 1 --out ";
    REQUIRE(run(base + w.path("x.jsonl")) == 0);
    REQUIRE(run(base + w.path("y.jsonl")) == 0);
    CHECK(slurp(w.dir / "x.jsonl") == slurp(w.dir / "y.jsonl"));
    CHECK(fs::exists(w.dir / "x.jsonl.run.json"));
    CHECK(run("augment --config " + w.ini.string() + " --lambda 0 --out " + w.path("z.jsonl")) == 2);
}

TEST_CASE("converter weights feed the model merging mode") {
    Workspace w("cli_converter");
    const std::string cfg = " --config " + w.ini.string();
    REQUIRE(run("pretrain-converter" + cfg + " --steps 30 --out " + w.path("conv")) == 0);
    CHECK(fs::exists(w.dir / "conv" / "converter" / "tensors.bin"));
    CHECK(fs::exists(w.dir / "conv" / "loss.csv"));
    REQUIRE(run("pretrain" + cfg + " --out " + w.path("p")) == 0);
    CHECK(run("finetune --init " + w.path("p/checkpoint") + " --merging-mode model --out " + w.path("nf")) == 2);
    CHECK(run("finetune --init " + w.path("p/checkpoint") + " --merging-mode model --converter " +
              w.path("conv/converter") + " --out " + w.path("f")) == 0);
    CHECK(fs::exists(w.dir / "f" / "checkpoint" / "tensors.bin"));
}

TEST_CASE("run manifests hash their inputs") {
    Workspace w("cli_manifest");
    std::ofstream(w.dir / "input.txt") << "hello\n";
    const std::vector<fs::path> inputs{w.dir / "input.txt"};
    const auto cfg = config::parse(kTinyIni);
    const auto m = checkpoint::make_manifest("test", cfg, inputs, w.dir / "out");
    REQUIRE(m.inputs.size() == 1);
    CHECK(m.inputs[0].second == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(m.seed == 7);
    checkpoint::write_manifest(m);
    const auto j = nlohmann::json::parse(slurp(w.dir / "out" / "run.json"));
    CHECK(j.at("seed") == 7);
    CHECK(j.at("inputs_hash") == m.inputs_hash);
    CHECK(checkpoint::make_manifest("test", cfg, inputs, w.dir / "out").inputs_hash == m.inputs_hash);
}
