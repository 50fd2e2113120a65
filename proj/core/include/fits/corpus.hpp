#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fits/kg.hpp"

namespace fits::corpus {

// Reserved vocabulary ids.
enum SpecialToken : int {
  kPad = 0,
  kMask = 1,
  kSep = 2,
  kInt = 3,  // interaction token
  kUnk = 4,
  kNumSpecials = 5,
};

extern const char* const kSpecialSurfaces[kNumSpecials];

class Vocab {
 public:
  // frequency-sorted ids after the reserved block; ties by token asc
  static Vocab build(const std::vector<std::string>& token_stream);

  int encode(const std::string& token) const;  // kUnk when unseen
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  const std::string& decode(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct Candidate {
  std::vector<std::string> tokens;
  kg::SubGraph subgraph;
};

struct McqaExample {
  int id = 0;
  std::vector<std::string> context;
  std::vector<std::string> question;
  std::vector<Candidate> candidates;
  int correct = 0;
};

// context (+) SEP (+) question (+) SEP (+) candidate
std::vector<std::string> merged_tokens(const McqaExample& ex, int candidate);

using Dataset = std::vector<McqaExample>;

struct MaskedBatch {
  std::vector<int> input_ids;  // with MASK substitutions
  std::vector<int> positions;
  std::vector<int> originals;
};

// Masks max(1, round(0.15 * maskable)) positions, uniformly without
// replacement; substitution is always the MASK id.
MaskedBatch mask_tokens(const std::vector<int>& merged_ids, std::uint64_t seed);

struct EntityPairBatch {
  // (mention index into the example's mention list, subgraph local index)
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> labels;  // 1 positive, 0 negative; exactly k each
};

// k positives over (text mention, kg node) alignments plus one forced
// negative per positive (same mention, different node).
EntityPairBatch sample_entity_pairs(const std::vector<kg::Mention>& mentions,
                                    const kg::SubGraph& sub, int k,
                                    std::uint64_t seed);

// Operation A: all candidate texts become the correct answer's; subgraphs
// untouched. Operation B: all subgraphs become the correct candidate's;
// texts untouched. Both idempotent.
Dataset apply_operation_a(const Dataset& ds);
Dataset apply_operation_b(const Dataset& ds);

struct GenConfig {
  int n_entities = 60;
  int n_relations = 6;
  int n_examples = 300;
  int n_candidates = 4;
  int chain_hops = 2;
  std::uint64_t seed = 42;
  kg::RetrievalConfig retrieval;
};

struct SyntheticData {
  kg::KnowledgeGraph graph;
  Dataset train, dev, test;  // 80/10/10, disjoint by construction
};

SyntheticData generate_synthetic_dataset(const GenConfig& cfg);

// JSONL: one example per line,
// {id, context, question, candidates:[string], correct,
//  subgraphs:[{nodes:[{entity,label}], edges:[[h,r,t]]}]}
void write_jsonl(const Dataset& ds, const std::string& path);
Dataset read_jsonl(const std::string& path);

}  // namespace fits::corpus
