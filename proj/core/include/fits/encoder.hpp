#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fits/autograd.hpp"
#include "fits/corpus.hpp"
#include "fits/kg.hpp"

namespace fits::encoder {

struct EncoderConfig {
  int d_l = 32;
  int d_g = 16;
  int n_unimodal = 1;  // N
  int m_fusion = 2;    // M
  int text_heads = 2;
  int gat_heads = 2;
  int max_seq = 64;
  int vocab_size = 0;
  int relation_count = 0;  // real relations; an extra row serves interaction
  int entity_count = 0;
  int ff_width = 64;

  void validate() const;
};

// All trainable tensors (encoder + loss heads) plus the config they were
// built for. Head parameters live here so checkpoints capture everything.
struct ModelState {
  EncoderConfig cfg;
  ParamStore params;

  static ModelState init(const EncoderConfig& cfg, std::uint64_t seed);
};

// Per-fusion-layer graph attention, averaged over heads: weight of each
// in-edge (src local index -> tgt local index).
struct GatAttention {
  struct EdgeWeight {
    int src;
    int tgt;
    double weight;
  };
  std::vector<EdgeWeight> edges;
};

struct EncodedPair {
  Var text;   // [T+1, d_l], row 0 = interaction token
  Var graph;  // [J+1, d_g], row 0 = interaction node
  std::vector<Var> text_entities;          // pooled rows, one per mention
  std::vector<int> graph_row_of_node;      // subgraph local idx -> graph row
  std::vector<GatAttention> attention;     // one per fusion layer
};

Var embed_text(Tape& tape, ModelState& model, const std::vector<int>& token_ids);

Var lm_layer(Tape& tape, ModelState& model, int layer, Var h,
             const std::vector<std::uint8_t>& attend_mask);

Var gnn_layer(Tape& tape, ModelState& model, int layer, Var e,
              const std::vector<kg::SubGraphEdge>& edges, int n_rows,
              GatAttention* record);

std::pair<Var, Var> fuse_interaction(Tape& tape, ModelState& model, int layer,
                                     Var h_int, Var e_int);

Var pool_text_entities_one(Tape& tape, Var h, const kg::Mention& mention);

// Full cross-modality encoding of one candidate. Mention spans index the
// merged token sequence; token row i+1 corresponds to merged token i.
EncodedPair encode(Tape& tape, ModelState& model,
                   const std::vector<int>& token_ids,
                   const std::vector<kg::Mention>& mentions,
                   const kg::SubGraph& sub);

// relation embedding row for a relation id (interaction relation maps to
// the extra last row)
int relation_row(const EncoderConfig& cfg, int rel);

}  // namespace fits::encoder
