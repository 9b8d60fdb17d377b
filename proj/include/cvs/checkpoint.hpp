#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "cvs/model.hpp"
#include "cvs/network.hpp"

namespace cvs {

inline constexpr const char* kCheckpointFormat = "cvs-checkpoint/1";

/// Everything needed to rebuild a model and continue training it.
struct Checkpoint {
  NetworkSpec network;
  ModelParams params;                              // weights, epoch, config hash
  std::map<std::string, Tensor<float>> velocity;  // optimizer state keyed like the parameters
  double best_metric = 0.0;                        // best validation accuracy seen so far
  nlohmann::json train_config;                     // resolved training settings
};

/// Directory layout: graph.json, params.bin, optimizer.bin, meta.json. Every file is written to
/// a temporary name and renamed into place.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
bool checkpoint_exists(const std::filesystem::path& dir);

/// Binary tensor archive: magic, count, then (name, rank, dims, float32 data) records.
void write_tensor_archive(const std::filesystem::path& path, const std::map<std::string, Tensor<float>>& tensors);
std::map<std::string, Tensor<float>> read_tensor_archive(const std::filesystem::path& path);

/// Writes `text` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cvs
