#include "fits/kg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "fits/rng.hpp"

namespace fits::kg {

namespace {
std::uint64_t triplet_key(int h, int r, int t) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(h)) << 42) ^
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(r)) << 21) ^
         static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
}
}  // namespace

std::string case_fold(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int KnowledgeGraph::add_entity(const std::string& surface) {
  std::string key = case_fold(surface);
  if (by_surface_.count(key))
    throw DuplicateTriplet("entity surface not unique after case-folding: " + surface);
  int id = entity_count();
  surfaces_.push_back(surface);
  by_surface_[key] = id;
  out_.emplace_back();
  in_.emplace_back();
  return id;
}

int KnowledgeGraph::add_relation(const std::string& name) {
  if (by_rel_name_.count(name))
    throw DuplicateTriplet("relation name not unique: " + name);
  int id = relation_count();
  rel_names_.push_back(name);
  by_rel_name_[name] = id;
  return id;
}

void KnowledgeGraph::require_entity(int id) const {
  if (!has_entity(id)) throw IdNotFound("unknown entity id " + std::to_string(id));
}

void KnowledgeGraph::add_triplet(int head, int rel, int tail) {
  require_entity(head);
  require_entity(tail);
  if (rel < 0 || rel >= relation_count())
    throw IdNotFound("unknown relation id " + std::to_string(rel));
  std::uint64_t key = triplet_key(head, rel, tail);
  bool dup = triplet_keys_.count(key) &&
             std::find(triplets_.begin(), triplets_.end(),
                       Triplet{head, rel, tail}) != triplets_.end();
  if (dup) throw DuplicateTriplet("duplicate triplet");
  triplet_keys_.insert(key);
  triplets_.push_back({head, rel, tail});
  out_[head].emplace_back(rel, tail);
  in_[tail].emplace_back(rel, head);
}

const std::string& KnowledgeGraph::surface(int entity) const {
  require_entity(entity);
  return surfaces_[entity];
}

const std::string& KnowledgeGraph::relation_name(int rel) const {
  if (rel < 0 || rel >= relation_count())
    throw IdNotFound("unknown relation id " + std::to_string(rel));
  return rel_names_[rel];
}

int KnowledgeGraph::entity_by_surface(const std::string& surface) const {
  auto it = by_surface_.find(case_fold(surface));
  return it == by_surface_.end() ? -1 : it->second;
}

int KnowledgeGraph::degree(int entity) const {
  require_entity(entity);
  return static_cast<int>(out_[entity].size() + in_[entity].size());
}

const std::vector<std::pair<int, int>>& KnowledgeGraph::out_edges(int e) const {
  require_entity(e);
  return out_[e];
}

const std::vector<std::pair<int, int>>& KnowledgeGraph::in_edges(int e) const {
  require_entity(e);
  return in_[e];
}

KnowledgeGraph KnowledgeGraph::from_tsv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open kg tsv: " + path);
  KnowledgeGraph kg;
  std::string line;
  auto intern_entity = [&kg](const std::string& s) {
    int id = kg.entity_by_surface(s);
    return id >= 0 ? id : kg.add_entity(s);
  };
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string h, r, t;
    if (!std::getline(ss, h, '\t') || !std::getline(ss, r, '\t') ||
        !std::getline(ss, t, '\t'))
      throw ConfigError("malformed kg tsv line: " + line);
    int hid = intern_entity(h);
    int tid = intern_entity(t);
    auto it = kg.by_rel_name_.find(r);
    int rid = it == kg.by_rel_name_.end() ? kg.add_relation(r) : it->second;
    kg.add_triplet(hid, rid, tid);
  }
  return kg;
}

void KnowledgeGraph::to_tsv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write kg tsv: " + path);
  for (const auto& t : triplets_)
    f << surfaces_[t.head] << '\t' << rel_names_[t.rel] << '\t'
      << surfaces_[t.tail] << '\n';
}

std::vector<Mention> link_entities(const KnowledgeGraph& kg,
                                   const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw ShapeError("link_entities on empty tokens");
  // longest surface measured in tokens; surfaces are whitespace-joined
  int max_ngram = 1;
  for (int e = 0; e < kg.entity_count(); ++e) {
    int words = 1 + static_cast<int>(
        std::count(kg.surface(e).begin(), kg.surface(e).end(), ' '));
    max_ngram = std::max(max_ngram, words);
  }
  std::vector<Mention> out;
  int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    int matched = -1, match_len = 0;
    for (int len = std::min(max_ngram, n - i); len >= 1; --len) {
      std::string joined = tokens[i];
      for (int j = 1; j < len; ++j) joined += " " + tokens[i + j];
      int id = kg.entity_by_surface(joined);
      if (id >= 0) {
        matched = id;
        match_len = len;
        break;
      }
    }
    if (matched >= 0) {
      out.push_back({i, i + match_len, matched});
      i += match_len;
    } else {
      ++i;
    }
  }
  return out;
}

double relevance_score(const KnowledgeGraph& kg, int entity, int hop_distance) {
  if (hop_distance < 0) throw ShapeError("negative hop distance");
  double deg = static_cast<double>(kg.degree(entity));
  return std::pow(2.0, -hop_distance) + 0.1 * std::log(1.0 + deg);
}

std::unordered_map<int, int> hop_distances(const KnowledgeGraph& kg,
                                           const std::vector<int>& seeds,
                                           int max_hops) {
  std::unordered_map<int, int> dist;
  std::deque<int> frontier;
  for (int s : seeds) {
    if (!kg.has_entity(s)) throw IdNotFound("unknown seed entity");
    if (!dist.count(s)) {
      dist[s] = 0;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop_front();
    int d = dist[u];
    if (d >= max_hops) continue;
    auto visit = [&](int v) {
      if (!dist.count(v)) {
        dist[v] = d + 1;
        frontier.push_back(v);
      }
    };
    for (auto& [r, t] : kg.out_edges(u)) visit(t);
    for (auto& [r, h] : kg.in_edges(u)) visit(h);
  }
  return dist;
}

SubGraph retrieve_subgraph(const KnowledgeGraph& kg,
                           const std::vector<int>& question_entities,
                           const std::vector<int>& answer_entities,
                           const RetrievalConfig& cfg) {
  std::vector<int> mentioned = question_entities;
  mentioned.insert(mentioned.end(), answer_entities.begin(),
                   answer_entities.end());
  std::sort(mentioned.begin(), mentioned.end());
  mentioned.erase(std::unique(mentioned.begin(), mentioned.end()),
                  mentioned.end());

  auto dist = hop_distances(kg, mentioned, cfg.hops);

  struct Ranked {
    int entity;
    double score;
    bool is_mention;
  };
  std::vector<Ranked> ranked;
  for (auto& [e, d] : dist) {
    bool is_mention =
        std::binary_search(mentioned.begin(), mentioned.end(), e);
    ranked.push_back({e, relevance_score(kg, e, d), is_mention});
  }
  // mentions first, then score desc, entity id asc; a stable total order
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.is_mention != b.is_mention) return a.is_mention;
    if (a.score != b.score) return a.score > b.score;
    return a.entity < b.entity;
  });
  if (static_cast<int>(ranked.size()) > cfg.max_nodes)
    ranked.resize(cfg.max_nodes);
  // deterministic node order within the subgraph: entity id asc
  std::sort(ranked.begin(), ranked.end(),
            [](const Ranked& a, const Ranked& b) { return a.entity < b.entity; });

  SubGraph sub;
  std::unordered_map<int, int> local;
  for (const auto& r : ranked) {
    local[r.entity] = static_cast<int>(sub.nodes.size());
    sub.nodes.push_back({r.entity, kNoLabel, r.score});
  }
  for (const auto& t : kg.triplets()) {
    auto hi = local.find(t.head);
    auto ti = local.find(t.tail);
    if (hi != local.end() && ti != local.end())
      sub.edges.push_back({hi->second, t.rel, ti->second});
  }

  label_sources(sub, kg, question_entities, answer_entities);

  // interaction node appended last, wired both ways to label-1/2 nodes
  sub.interaction_index = static_cast<int>(sub.nodes.size());
  sub.nodes.push_back({-1, kNoLabel, 0.0});
  for (int i = 0; i < sub.interaction_index; ++i) {
    if (sub.nodes[i].label == kQuestionLinked ||
        sub.nodes[i].label == kAnswerLinked) {
      sub.edges.push_back({i, kInteractionRelation, sub.interaction_index});
      sub.edges.push_back({sub.interaction_index, kInteractionRelation, i});
    }
  }
  return sub;
}

void label_sources(SubGraph& sub, const KnowledgeGraph& kg,
                   const std::vector<int>& question_entities,
                   const std::vector<int>& answer_entities) {
  std::unordered_set<int> qset(question_entities.begin(), question_entities.end());
  std::unordered_set<int> aset(answer_entities.begin(), answer_entities.end());
  auto adjacent_to = [&kg](int e, const std::unordered_set<int>& set) {
    for (auto& [r, t] : kg.out_edges(e))
      if (set.count(t)) return true;
    for (auto& [r, h] : kg.in_edges(e))
      if (set.count(h)) return true;
    return false;
  };
  for (auto& node : sub.nodes) {
    if (node.entity < 0 || node.label == kIrrelevant) continue;
    bool ans = aset.count(node.entity) || adjacent_to(node.entity, aset);
    bool que = qset.count(node.entity) || adjacent_to(node.entity, qset);
    if (ans)
      node.label = kAnswerLinked;  // answer wins when both apply
    else if (que)
      node.label = kQuestionLinked;
    else
      node.label = kNeighbor;
  }
}

SubGraph inject_irrelevant(const SubGraph& sub, const KnowledgeGraph& kg,
                           int hops, int k_irr, std::uint64_t seed) {
  if (k_irr == 0) return sub;
  // neighborhood of whatever is question/answer-linked; a superset of the
  // true mention neighborhood, so sampled entities are genuinely irrelevant
  std::vector<int> linked;
  for (const auto& n : sub.nodes)
    if (n.label == kQuestionLinked || n.label == kAnswerLinked)
      linked.push_back(n.entity);
  std::unordered_map<int, int> near =
      linked.empty() ? std::unordered_map<int, int>{}
                     : hop_distances(kg, linked, hops);
  std::unordered_set<int> excluded;
  for (auto& [e, d] : near) excluded.insert(e);
  for (const auto& n : sub.nodes)
    if (n.entity >= 0) excluded.insert(n.entity);

  std::vector<int> candidates;
  for (int e = 0; e < kg.entity_count(); ++e)
    if (!excluded.count(e)) candidates.push_back(e);
  if (static_cast<int>(candidates.size()) < k_irr)
    throw NotEnoughIrrelevant("need " + std::to_string(k_irr) + " but only " +
                              std::to_string(candidates.size()) + " available");

  Rng rng(seed);
  std::vector<int> picks =
      rng.sample_without_replacement(static_cast<int>(candidates.size()), k_irr);
  std::sort(picks.begin(), picks.end());

  SubGraph out = sub;
  for (int p : picks) {
    int local = static_cast<int>(out.nodes.size());
    out.nodes.push_back({candidates[p], kIrrelevant, 0.0});
    out.edges.push_back({local, kInteractionRelation, out.interaction_index});
    out.edges.push_back({out.interaction_index, kInteractionRelation, local});
  }
  return out;
}

SubGraph inject_irrelevant_relaxed(const SubGraph& sub,
                                   const KnowledgeGraph& kg, int hops,
                                   int k_irr, std::uint64_t seed) {
  for (int h = hops; h >= 0; --h) {
    try {
      return inject_irrelevant(sub, kg, h, k_irr, seed);
    } catch (const NotEnoughIrrelevant&) {
    }
  }
  return sub;
}

}  // namespace fits::kg
