#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctrl/model.hpp"

namespace ctrl {

/// On-disk model: config echo, vocabulary and every parameter record.
///
/// Byte layout (all integers little-endian):
///
///   "CTRLCKPT"                       8-byte magic
///   u32 version                      currently 1
///   u64 n, n bytes                   ModelConfig::to_text()
///   u64 vocab count, then per token  u32 length, bytes
///   u64 record count, then per record:
///       u32 name length, name bytes
///       u8 group (0 EMB, 1 CNN, 2 CTRL, 3 FC), u8 trainable
///       u32 rank, rank x u64 dims, prod(dims) x f64 values
///   u64 FNV-1a 64 checksum of every preceding byte
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocab;
  Model model;
};

std::string encode_checkpoint(const Model& model, const std::vector<std::string>& vocab);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Model& model, const std::vector<std::string>& vocab, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Overwrites the parameters of `model` with those stored in `bytes`. Names,
/// order, shapes and groups must match; otherwise throws CheckpointError
/// naming the first mismatched tensor.
void load_params_into(Model& model, const std::string& bytes);

/// Record encoding of the parameters in `groups` only, in registry order.
/// Used to assert that frozen groups are bit-identical across training.
std::string serialize_groups(const Model& model, GroupSet groups);

}  // namespace ctrl
