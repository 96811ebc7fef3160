#include "cohext/checkpoint.hpp"

#include "cohext/errors.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cohext::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensors.bin is written in native little-endian order");

namespace {

constexpr const char* kFormat = "cohext-checkpoint";
constexpr int kVersion = 1;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot read " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw TrainingError("cannot create " + dir.string() + ": " + ec.message());
    }
}

}  // namespace

void write_tensors(const WeightMap& weights, const fs::path& dir) {
    ensure_dir(dir);
    json manifest;
    manifest["format"] = kFormat;
    manifest["version"] = kVersion;
    manifest["dtype"] = "float64";
    json tensors = json::array();
    std::ofstream bin(dir / "tensors.bin", std::ios::binary);
    if (!bin) {
        throw TrainingError("cannot write " + (dir / "tensors.bin").string());
    }
    std::uint64_t offset = 0;
    for (const auto& [name, m] : weights) {
        // Row-major on disk regardless of Eigen's storage order.
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
        const auto bytes = static_cast<std::streamsize>(rm.size() * sizeof(double));
        bin.write(reinterpret_cast<const char*>(rm.data()), bytes);
        tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(bytes);
    }
    if (!bin) {
        throw TrainingError("short write to " + (dir / "tensors.bin").string());
    }
    manifest["tensors"] = std::move(tensors);
    manifest["bytes"] = offset;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) {
        throw TrainingError("cannot write " + (dir / "manifest.json").string());
    }
}

WeightMap read_tensors(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw ValidationError("checkpoint not found: " + dir.string());
    }
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw ParseError("checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != kFormat || manifest.value("dtype", "") != "float64") {
        throw ParseError("checkpoint manifest: unsupported format in " + dir.string());
    }
    const std::string blob = read_file(dir / "tensors.bin");
    WeightMap out;
    try {
        for (const auto& t : manifest.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const auto rows = t.at("shape").at(0).get<ag::Index>();
            const auto cols = t.at("shape").at(1).get<ag::Index>();
            const auto offset = t.at("offset").get<std::uint64_t>();
            const auto bytes = static_cast<std::uint64_t>(rows * cols) * sizeof(double);
            if (rows < 0 || cols < 0 || offset + bytes > blob.size()) {
                throw ParseError("checkpoint tensor '" + name + "' lies outside tensors.bin");
            }
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
            std::copy_n(blob.data() + offset, bytes, reinterpret_cast<char*>(rm.data()));
            out.emplace(name, rm);
        }
    } catch (const json::exception& e) {
        throw ParseError("checkpoint manifest: " + std::string(e.what()));
    }
    return out;
}

void save(const fs::path& dir, const WeightMap& weights, const config::RunConfig& config,
          const corpus::Vocabulary* vocab, int step) {
    write_tensors(weights, dir);
    config::save(config, dir / "config.ini");
    if (vocab != nullptr) {
        vocab->save(dir / "vocab.txt");
    }
    std::ofstream(dir / "step.txt") << step << "\n";
}

Bundle load(const fs::path& dir) {
    Bundle b;
    b.weights = read_tensors(dir);
    if (!fs::exists(dir / "config.ini")) {
        throw ValidationError("checkpoint " + dir.string() + " has no config.ini");
    }
    b.config = config::load(dir / "config.ini");
    if (fs::exists(dir / "vocab.txt")) {
        b.vocab = corpus::Vocabulary::load(dir / "vocab.txt");
    }
    if (std::ifstream in(dir / "step.txt"); in) {
        in >> b.step;
    }
    return b;
}

std::string git_blob_hash(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &length) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) {
        throw TrainingError("SHA-1 digest failed");
    }
    std::string hex;
    hex.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        char buf[3];
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

std::string git_blob_hash_file(const fs::path& path) { return git_blob_hash(read_file(path)); }

RunManifest make_manifest(std::string command, const config::RunConfig& config, std::span<const fs::path> inputs,
                          const fs::path& output_dir) {
    RunManifest m;
    m.command = std::move(command);
    m.config_ini = config::to_ini(config);
    m.seed = config.seed;
    m.output_dir = output_dir;
    for (const auto& p : inputs) {
        if (fs::is_regular_file(p)) {
            m.inputs.emplace_back(p.string(), git_blob_hash_file(p));
        } else if (fs::is_directory(p)) {
            // Checkpoint directories hash through their tensors and config.
            for (const char* name : {"manifest.json", "tensors.bin", "config.ini"}) {
                if (fs::exists(p / name)) {
                    m.inputs.emplace_back((p / name).string(), git_blob_hash_file(p / name));
                }
            }
        }
    }
    std::vector<std::string> lines;
    lines.push_back(git_blob_hash(m.config_ini) + " config");
    for (const auto& [path, hash] : m.inputs) {
        lines.push_back(hash + " " + path);
    }
    std::sort(lines.begin(), lines.end());
    std::string joined;
    for (const auto& l : lines) {
        joined += l + "\n";
    }
    m.inputs_hash = git_blob_hash(joined);
    return m;
}

void write_manifest(const RunManifest& m, const std::string& file_name) {
    ensure_dir(m.output_dir);
    json inputs = json::array();
    for (const auto& [path, hash] : m.inputs) {
        inputs.push_back({{"path", path}, {"hash", hash}});
    }
    const json j{{"command", m.command},   {"seed", m.seed},
                 {"config", m.config_ini}, {"inputs", inputs},
                 {"inputs_hash", m.inputs_hash}, {"output_dir", m.output_dir.string()}};
    std::ofstream out(m.output_dir / file_name);
    out << j.dump(2) << "\n";
    if (!out) {
        throw TrainingError("cannot write " + (m.output_dir / file_name).string());
    }
}

}  // namespace cohext::checkpoint
