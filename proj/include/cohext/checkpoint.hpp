#pragma once

// Named-tensor checkpoints and run manifests.
//
// A checkpoint is a directory holding manifest.json (names, shapes, byte
// offsets, dtype), tensors.bin (float64, row-major, little-endian),
// config.ini and vocab.txt.

#include "cohext/config.hpp"
#include "cohext/corpus.hpp"
#include "cohext/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cohext::checkpoint {

void write_tensors(const WeightMap& weights, const std::filesystem::path& dir);
WeightMap read_tensors(const std::filesystem::path& dir);

struct Bundle {
    config::RunConfig config;
    std::optional<corpus::Vocabulary> vocab;
    WeightMap weights;
    int step{0};
};

void save(const std::filesystem::path& dir, const WeightMap& weights, const config::RunConfig& config,
          const corpus::Vocabulary* vocab, int step);
// Throws ValidationError when the directory or one of its files is missing.
Bundle load(const std::filesystem::path& dir);

// SHA-1 of "blob <size>\0" followed by the bytes, as git computes object ids.
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::string config_ini;
    std::uint64_t seed{0};
    std::vector<std::pair<std::string, std::string>> inputs;  // path, blob hash
    std::string inputs_hash;  // blob hash over the sorted "hash path" lines
    std::filesystem::path output_dir;
};

RunManifest make_manifest(std::string command, const config::RunConfig& config,
                          std::span<const std::filesystem::path> inputs, const std::filesystem::path& output_dir);
// Written to output_dir / file_name before any other artifact of the run.
void write_manifest(const RunManifest& manifest, const std::string& file_name = "run.json");

}  // namespace cohext::checkpoint
