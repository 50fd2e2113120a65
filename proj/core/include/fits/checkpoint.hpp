#pragma once

#include <cstdint>
#include <string>

#include "fits/encoder.hpp"
#include "fits/optim.hpp"

namespace fits::checkpoint {

enum class Stage : int { kInit = 0, kPost = 1, kFinetune = 2 };

std::string stage_name(Stage s);

struct Checkpoint {
  Stage stage = Stage::kInit;
  std::uint64_t config_hash = 0;
  encoder::ModelState model;
  Adam optimizer;
};

// Tensor dump: magic "FITS1", then per-tensor records
// (u32 name length, name bytes, u32 rank, u32 dims..., doubles LE).
// Model config, stage, and optimizer state ride along as reserved-name
// tensors so the container stays a plain tensor dump.
void save(const Checkpoint& ckpt, const std::string& path);
Checkpoint load(const std::string& path);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace fits::checkpoint
