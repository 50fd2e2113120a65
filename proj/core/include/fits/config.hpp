#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fits/corpus.hpp"
#include "fits/optim.hpp"

namespace fits::config {

// Flat `key = value` UTF-8 text, `#` comments. Later keys win.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_file(const std::string& path);
KeyValues parse_text(const std::string& text);
void apply_overrides(KeyValues& kv,
                     const std::vector<std::pair<std::string, std::string>>& ov);
std::string render(const KeyValues& kv);  // sorted, for snapshots/hashing

enum class Stage { kPost, kFinetune };

struct TrainConfig {
  Stage stage = Stage::kFinetune;
  int epochs = 60;
  int post_epochs = -1;  // epochs for the post stage in `ablate`; -1 = epochs
  int batch_size = 4;
  int k = 4;
  int k_irr = 2;
  int k_reg = 4;
  bool loss_mlm = true;
  bool loss_ka = true;
  bool loss_ksd = true;
  bool loss_kbr = true;
  AdamConfig optim;
  std::uint64_t seed = 42;
  std::string data_kg;
  std::string data_train, data_dev, data_test;
  std::string checkpoint_in, checkpoint_out;
  bool eval_inject = false;  // inject irrelevant entities at eval time too

  // model dims; defaults are the desk-scale configuration
  int d_l = 32, d_g = 16, n_unimodal = 1, m_fusion = 2;
  int text_heads = 2, gat_heads = 2, max_seq = 64, ff_width = 64;
  int hops = 2;  // retrieval/injection neighborhood radius
};

// Strict schema: unknown keys are a hard error (ConfigError).
TrainConfig parse_train_config(const KeyValues& kv);

struct GenFileConfig {
  corpus::GenConfig gen;
};

GenFileConfig parse_gen_config(const KeyValues& kv);

}  // namespace fits::config
