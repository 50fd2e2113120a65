#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fits/errors.hpp"

namespace fits::kg {

// Reserved relation id connecting the interaction node; never present in a
// KnowledgeGraph's relation table.
constexpr int kInteractionRelation = -1;

// Node source labels (Eq. 11 classes). The interaction node carries none.
enum SourceLabel : int {
  kNoLabel = 0,
  kQuestionLinked = 1,
  kAnswerLinked = 2,
  kNeighbor = 3,
  kIrrelevant = 4,
};

struct Triplet {
  int head = 0;
  int rel = 0;
  int tail = 0;
  bool operator==(const Triplet&) const = default;
};

struct Mention {
  int begin = 0;  // token index range [begin, end)
  int end = 0;
  int entity = 0;
};

struct SubGraphNode {
  int entity = -1;  // -1 for the interaction node
  int label = kNoLabel;
  double relevance = 0.0;
};

struct SubGraphEdge {
  int head = 0;  // local node indices
  int rel = 0;
  int tail = 0;
};

struct SubGraph {
  std::vector<SubGraphNode> nodes;
  std::vector<SubGraphEdge> edges;
  int interaction_index = -1;

  int entity_node_count() const {
    return static_cast<int>(nodes.size()) - (interaction_index >= 0 ? 1 : 0);
  }
  // local index of an entity, -1 if absent
  int find_entity(int entity_id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].entity == entity_id) return static_cast<int>(i);
    return -1;
  }
};

// Immutable after construction; retrieval operations are pure.
class KnowledgeGraph {
 public:
  int add_entity(const std::string& surface);
  int add_relation(const std::string& name);
  void add_triplet(int head, int rel, int tail);

  int entity_count() const { return static_cast<int>(surfaces_.size()); }
  int relation_count() const { return static_cast<int>(rel_names_.size()); }
  const std::string& surface(int entity) const;
  const std::string& relation_name(int rel) const;
  int entity_by_surface(const std::string& surface) const;  // -1 if absent
  const std::vector<Triplet>& triplets() const { return triplets_; }
  int degree(int entity) const;
  const std::vector<std::pair<int, int>>& out_edges(int entity) const;
  const std::vector<std::pair<int, int>>& in_edges(int entity) const;
  bool has_entity(int id) const {
    return id >= 0 && id < entity_count();
  }

  // TSV: head_surface \t relation_name \t tail_surface, one triplet per
  // line; entities/relations registered in first-appearance order.
  static KnowledgeGraph from_tsv(const std::string& path);
  void to_tsv(const std::string& path) const;

 private:
  void require_entity(int id) const;
  std::vector<std::string> surfaces_;
  std::vector<std::string> rel_names_;
  std::unordered_map<std::string, int> by_surface_;  // case-folded
  std::unordered_map<std::string, int> by_rel_name_;
  std::vector<Triplet> triplets_;
  std::unordered_set<std::uint64_t> triplet_keys_;
  std::vector<std::vector<std::pair<int, int>>> out_;  // (rel, tail)
  std::vector<std::vector<std::pair<int, int>>> in_;   // (rel, head)
};

std::string case_fold(const std::string& s);

// Longest-match, non-overlapping, left-to-right greedy linking of entity
// surfaces against token n-grams (surfaces may span several tokens).
std::vector<Mention> link_entities(const KnowledgeGraph& kg,
                                   const std::vector<std::string>& tokens);

// Structural stand-in for an LM relevance scorer:
//   2^(-hop) + 0.1 * ln(1 + degree)
double relevance_score(const KnowledgeGraph& kg, int entity, int hop_distance);

// BFS hop distances from the given seeds, up to max_hops; unreachable
// entities are absent from the map.
std::unordered_map<int, int> hop_distances(const KnowledgeGraph& kg,
                                           const std::vector<int>& seeds,
                                           int max_hops);

struct RetrievalConfig {
  int hops = 2;
  int max_nodes = 12;
};

SubGraph retrieve_subgraph(const KnowledgeGraph& kg,
                           const std::vector<int>& question_entities,
                           const std::vector<int>& answer_entities,
                           const RetrievalConfig& cfg);

// Assigns labels 1..3 in place (label 4 is reserved for injected nodes).
// A node linked to both question and answer gets kAnswerLinked.
void label_sources(SubGraph& sub, const KnowledgeGraph& kg,
                   const std::vector<int>& question_entities,
                   const std::vector<int>& answer_entities);

// Appends k_irr entities sampled outside the <=hops neighborhood of the
// subgraph's question/answer-linked nodes, labeled kIrrelevant and wired to
// the interaction node only.
SubGraph inject_irrelevant(const SubGraph& sub, const KnowledgeGraph& kg,
                           int hops, int k_irr, std::uint64_t seed);

// Training-time variant: when the <=hops neighborhood swallows the whole
// graph, the exclusion radius is relaxed toward 0; if even then no k_irr
// strangers exist, the subgraph is returned unchanged.
SubGraph inject_irrelevant_relaxed(const SubGraph& sub,
                                   const KnowledgeGraph& kg, int hops,
                                   int k_irr, std::uint64_t seed);

}  // namespace fits::kg
