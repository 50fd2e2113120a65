#include "fits/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fits/rng.hpp"

namespace fits::corpus {

const char* const kSpecialSurfaces[kNumSpecials] = {"<pad>", "<mask>", "<sep>",
                                                    "<int>", "<unk>"};

// ---------------------------------------------------------------------- Vocab

Vocab Vocab::build(const std::vector<std::string>& token_stream) {
  if (token_stream.empty()) throw ShapeError("build_vocab on empty stream");
  std::map<std::string, int> freq;
  for (const auto& t : token_stream) ++freq[t];
  for (int s = 0; s < kNumSpecials; ++s) freq.erase(kSpecialSurfaces[s]);

  std::vector<std::pair<std::string, int>> order(freq.begin(), freq.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  for (int s = 0; s < kNumSpecials; ++s) {
    v.tokens_.emplace_back(kSpecialSurfaces[s]);
    v.ids_[kSpecialSurfaces[s]] = s;
  }
  for (auto& [tok, n] : order) {
    v.ids_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

int Vocab::encode(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(encode(t));
  return out;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || id >= size()) throw IdNotFound("vocab id out of range");
  return tokens_[id];
}

// ------------------------------------------------------------------- examples

std::vector<std::string> merged_tokens(const McqaExample& ex, int candidate) {
  std::vector<std::string> out = ex.context;
  out.emplace_back(kSpecialSurfaces[kSep]);
  out.insert(out.end(), ex.question.begin(), ex.question.end());
  out.emplace_back(kSpecialSurfaces[kSep]);
  const auto& cand = ex.candidates.at(candidate).tokens;
  out.insert(out.end(), cand.begin(), cand.end());
  return out;
}

MaskedBatch mask_tokens(const std::vector<int>& merged_ids, std::uint64_t seed) {
  std::vector<int> maskable;
  for (std::size_t i = 0; i < merged_ids.size(); ++i) {
    int id = merged_ids[i];
    if (id != kPad && id != kMask && id != kSep && id != kInt)
      maskable.push_back(static_cast<int>(i));
  }
  if (maskable.empty()) throw NothingToMask("no maskable token");
  int count = std::max<int>(
      1, static_cast<int>(std::lround(0.15 * static_cast<double>(maskable.size()))));

  Rng rng(seed);
  std::vector<int> picks =
      rng.sample_without_replacement(static_cast<int>(maskable.size()), count);
  std::sort(picks.begin(), picks.end());

  MaskedBatch out;
  out.input_ids = merged_ids;
  for (int p : picks) {
    int pos = maskable[p];
    out.positions.push_back(pos);
    out.originals.push_back(merged_ids[pos]);
    out.input_ids[pos] = kMask;
  }
  return out;
}

EntityPairBatch sample_entity_pairs(const std::vector<kg::Mention>& mentions,
                                    const kg::SubGraph& sub, int k,
                                    std::uint64_t seed) {
  // entity node local indices (everything but the interaction node)
  std::vector<int> entity_nodes;
  for (std::size_t i = 0; i < sub.nodes.size(); ++i)
    if (sub.nodes[i].entity >= 0) entity_nodes.push_back(static_cast<int>(i));

  std::vector<std::pair<int, int>> aligned;
  for (std::size_t mi = 0; mi < mentions.size(); ++mi) {
    int local = sub.find_entity(mentions[mi].entity);
    if (local >= 0) aligned.emplace_back(static_cast<int>(mi), local);
  }
  if (aligned.empty() || entity_nodes.size() < 2)
    throw NoAlignablePair("no (mention, node) alignment with a valid negative");

  Rng rng(seed);
  std::vector<std::pair<int, int>> positives;
  if (static_cast<int>(aligned.size()) >= k) {
    auto idx = rng.sample_without_replacement(static_cast<int>(aligned.size()), k);
    for (int i : idx) positives.push_back(aligned[i]);
  } else {
    for (int i = 0; i < k; ++i)
      positives.push_back(aligned[rng.next_below(aligned.size())]);
  }

  EntityPairBatch out;
  for (auto& [mi, node] : positives) {
    out.pairs.emplace_back(mi, node);
    out.labels.push_back(1);
  }
  for (auto& [mi, node] : positives) {
    int other = node;
    while (other == node) {
      other = entity_nodes[rng.next_below(entity_nodes.size())];
    }
    out.pairs.emplace_back(mi, other);
    out.labels.push_back(0);
  }
  return out;
}

Dataset apply_operation_a(const Dataset& ds) {
  Dataset out = ds;
  for (auto& ex : out) {
    const auto correct_tokens = ex.candidates.at(ex.correct).tokens;
    for (auto& cand : ex.candidates) cand.tokens = correct_tokens;
  }
  return out;
}

Dataset apply_operation_b(const Dataset& ds) {
  Dataset out = ds;
  for (auto& ex : out) {
    const auto correct_sub = ex.candidates.at(ex.correct).subgraph;
    for (auto& cand : ex.candidates) cand.subgraph = correct_sub;
  }
  return out;
}

// ------------------------------------------------------------------ generator

namespace {

// all entities reachable from src following the exact relation sequence
std::set<int> chain_endpoints(const kg::KnowledgeGraph& g, int src,
                              const std::vector<int>& rels) {
  std::set<int> frontier{src};
  for (int r : rels) {
    std::set<int> next;
    for (int u : frontier)
      for (auto& [rel, t] : g.out_edges(u))
        if (rel == r) next.insert(t);
    frontier = std::move(next);
    if (frontier.empty()) break;
  }
  return frontier;
}

const std::vector<std::string> kContextTokens = {"use", "the",   "facts",
                                                 "of",  "the",   "graph"};

}  // namespace

SyntheticData generate_synthetic_dataset(const GenConfig& cfg) {
  if (cfg.n_entities < 4 * cfg.n_candidates)
    throw ConfigError("n_entities must be >= 4 * n_candidates");
  if (cfg.n_relations < 2) throw ConfigError("n_relations must be >= 2");

  SyntheticData out;
  kg::KnowledgeGraph& g = out.graph;
  for (int i = 0; i < cfg.n_entities; ++i)
    g.add_entity("item" + std::to_string(i));
  for (int r = 0; r < cfg.n_relations; ++r)
    g.add_relation("rel" + std::to_string(r));

  Rng rng(derive_seed(cfg.seed, 0));
  // one guaranteed out-edge per entity, then extras up to 2 per entity
  for (int e = 0; e < cfg.n_entities; ++e) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      int r = static_cast<int>(rng.next_below(cfg.n_relations));
      int t = static_cast<int>(rng.next_below(cfg.n_entities));
      if (t == e) continue;
      try {
        g.add_triplet(e, r, t);
        break;
      } catch (const DuplicateTriplet&) {
      }
    }
  }
  int extra = cfg.n_entities;
  for (int i = 0; i < extra; ++i) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      int h = static_cast<int>(rng.next_below(cfg.n_entities));
      int r = static_cast<int>(rng.next_below(cfg.n_relations));
      int t = static_cast<int>(rng.next_below(cfg.n_entities));
      if (t == h) continue;
      try {
        g.add_triplet(h, r, t);
        break;
      } catch (const DuplicateTriplet&) {
      }
    }
  }

  // Re-intern in triplet order so entity/relation ids survive the TSV round
  // trip (from_tsv registers by first appearance in the file).
  {
    kg::KnowledgeGraph canon;
    auto intern = [&canon](const std::string& s) {
      int id = canon.entity_by_surface(s);
      return id >= 0 ? id : canon.add_entity(s);
    };
    std::vector<int> rmap(g.relation_count(), -1);
    for (const auto& t : g.triplets()) {
      int h = intern(g.surface(t.head));
      int tl = intern(g.surface(t.tail));
      if (rmap[t.rel] < 0) rmap[t.rel] = canon.add_relation(g.relation_name(t.rel));
      canon.add_triplet(h, rmap[t.rel], tl);
    }
    if (canon.entity_count() != g.entity_count())
      throw GenerationFailed("an entity ended up with no triplets");
    g = std::move(canon);
  }

  Dataset all;
  for (int idx = 0; idx < cfg.n_examples; ++idx) {
    Rng ex_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(idx) + 1));
    McqaExample ex;
    ex.id = idx;
    ex.context = kContextTokens;

    bool built = false;
    for (int attempt = 0; attempt < 500 && !built; ++attempt) {
      int src = static_cast<int>(ex_rng.next_below(cfg.n_entities));
      // random walk to propose a relation sequence
      std::vector<int> rels;
      int cur = src;
      bool dead = false;
      for (int h = 0; h < cfg.chain_hops; ++h) {
        const auto& outs = g.out_edges(cur);
        if (outs.empty()) {
          dead = true;
          break;
        }
        auto [r, t] = outs[ex_rng.next_below(outs.size())];
        rels.push_back(r);
        cur = t;
      }
      if (dead) continue;
      int target = cur;
      if (target == src) continue;
      std::set<int> ends = chain_endpoints(g, src, rels);
      if (ends.size() != 1 || *ends.begin() != target) continue;

      ex.question = {"which", "entity", "is", "reached", "from",
                     g.surface(src), "via"};
      for (int r : rels) ex.question.push_back(g.relation_name(r));

      int correct = static_cast<int>(ex_rng.next_below(cfg.n_candidates));
      std::set<int> used{target};
      for (int c = 0; c < cfg.n_candidates; ++c) {
        int entity;
        if (c == correct) {
          entity = target;
        } else {
          // Near-miss distractors: walk the same number of hops from the
          // same source but along a different relation sequence, so the
          // candidates can only be separated by checking the path relations
          // rather than mere connectivity to the source.
          entity = -1;
          for (int walk = 0; walk < 32 && entity < 0; ++walk) {
            int cur2 = src;
            bool ok = true;
            for (int h = 0; h < cfg.chain_hops; ++h) {
              const auto& outs2 = g.out_edges(cur2);
              if (outs2.empty()) {
                ok = false;
                break;
              }
              cur2 = outs2[ex_rng.next_below(outs2.size())].second;
            }
            if (ok && cur2 != src && !used.count(cur2)) entity = cur2;
          }
          while (entity < 0) {
            int cand = static_cast<int>(ex_rng.next_below(cfg.n_entities));
            if (!used.count(cand) && cand != src) entity = cand;
          }
          used.insert(entity);
        }
        Candidate cand;
        cand.tokens = {g.surface(entity)};
        cand.subgraph = kg::retrieve_subgraph(g, {src}, {entity}, cfg.retrieval);
        ex.candidates.push_back(std::move(cand));
      }
      ex.correct = correct;
      built = true;
    }
    if (!built)
      throw GenerationFailed("could not build a unique-answer example " +
                             std::to_string(idx));
    all.push_back(std::move(ex));
  }

  int n_train = cfg.n_examples * 8 / 10;
  int n_dev = cfg.n_examples / 10;
  for (int i = 0; i < cfg.n_examples; ++i) {
    if (i < n_train)
      out.train.push_back(all[i]);
    else if (i < n_train + n_dev)
      out.dev.push_back(all[i]);
    else
      out.test.push_back(all[i]);
  }
  return out;
}

// ----------------------------------------------------------------------- jsonl

namespace {
using nlohmann::json;

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

json subgraph_to_json(const kg::SubGraph& sub) {
  json nodes = json::array();
  for (const auto& n : sub.nodes)
    nodes.push_back({{"entity", n.entity}, {"label", n.label}});
  json edges = json::array();
  for (const auto& e : sub.edges)
    edges.push_back(json::array({e.head, e.rel, e.tail}));
  return {{"nodes", nodes}, {"edges", edges}};
}

kg::SubGraph subgraph_from_json(const json& j) {
  kg::SubGraph sub;
  for (const auto& n : j.at("nodes")) {
    kg::SubGraphNode node;
    node.entity = n.at("entity").get<int>();
    node.label = n.at("label").get<int>();
    if (node.entity < 0) sub.interaction_index = static_cast<int>(sub.nodes.size());
    sub.nodes.push_back(node);
  }
  for (const auto& e : j.at("edges"))
    sub.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()});
  return sub;
}
}  // namespace

void write_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write dataset: " + path);
  for (const auto& ex : ds) {
    json candidates = json::array();
    json subgraphs = json::array();
    for (const auto& c : ex.candidates) {
      candidates.push_back(join(c.tokens));
      subgraphs.push_back(subgraph_to_json(c.subgraph));
    }
    json j = {{"id", ex.id},
              {"context", join(ex.context)},
              {"question", join(ex.question)},
              {"candidates", candidates},
              {"correct", ex.correct},
              {"subgraphs", subgraphs}};
    f << j.dump() << '\n';
  }
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read dataset: " + path);
  Dataset ds;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    McqaExample ex;
    ex.id = j.at("id").get<int>();
    ex.context = split(j.at("context").get<std::string>());
    ex.question = split(j.at("question").get<std::string>());
    ex.correct = j.at("correct").get<int>();
    const auto& cands = j.at("candidates");
    const auto& subs = j.at("subgraphs");
    if (cands.size() != subs.size())
      throw ConfigError("candidates/subgraphs length mismatch in " + path);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      Candidate c;
      c.tokens = split(cands[i].get<std::string>());
      c.subgraph = subgraph_from_json(subs[i]);
      ex.candidates.push_back(std::move(c));
    }
    ds.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace fits::corpus
