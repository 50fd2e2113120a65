// Vocabulary, masking, pair sampling, dataset transforms, JSONL, generator.

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "doctest.h"
#include "fits/corpus.hpp"
#include "test_support.hpp"

using namespace fits;
using namespace fits::corpus;

namespace {
std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("vocab reserves specials and orders by frequency then token") {
  Vocab v = Vocab::build({"bb", "aa", "bb", "cc", "aa", "bb"});
  CHECK(v.size() == kNumSpecials + 3);
  for (int s = 0; s < kNumSpecials; ++s)
    CHECK(v.decode(s) == std::string(kSpecialSurfaces[s]));
  CHECK(v.encode("bb") == kNumSpecials);        // most frequent first
  CHECK(v.encode("aa") == kNumSpecials + 1);    // tie of 2 broken by token asc
  CHECK(v.encode("cc") == kNumSpecials + 2);
  CHECK(v.encode("zz") == kUnk);
  CHECK(v.encode(std::vector<std::string>{"aa", "zz"}) ==
        std::vector<int>{kNumSpecials + 1, kUnk});
  CHECK(Vocab::is_special(kMask));
  CHECK(!Vocab::is_special(kNumSpecials));
}

TEST_CASE("merged tokens join context, question, candidate with separators") {
  McqaExample ex;
  ex.context = {"c1", "c2"};
  ex.question = {"q"};
  ex.candidates.resize(2);
  ex.candidates[0].tokens = {"a0"};
  ex.candidates[1].tokens = {"a1", "a1b"};
  CHECK(merged_tokens(ex, 0) ==
        std::vector<std::string>{"c1", "c2", "<sep>", "q", "<sep>", "a0"});
  CHECK(merged_tokens(ex, 1).size() == 7);
}

TEST_CASE("masking count, determinism, and substitution") {
  // 20 maskable positions (specials excluded): expect round(0.15*20) = 3
  std::vector<int> ids;
  for (int i = 0; i < 20; ++i) ids.push_back(kNumSpecials + i);
  ids.push_back(kSep);  // specials are never masked
  MaskedBatch mb = mask_tokens(ids, 11);
  CHECK(mb.positions.size() == 3);
  CHECK(mb.input_ids.size() == ids.size());
  std::set<int> seen;
  for (std::size_t i = 0; i < mb.positions.size(); ++i) {
    int p = mb.positions[i];
    CHECK(seen.insert(p).second);  // without replacement
    CHECK(mb.input_ids[p] == kMask);
    CHECK(mb.originals[i] == ids[p]);
    CHECK(ids[p] >= kNumSpecials);
  }
  // untouched elsewhere
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!seen.count(static_cast<int>(i))) CHECK(mb.input_ids[i] == ids[i]);
  // at least one position even for tiny inputs: round(0.15*2) = 0 -> max(1, .)
  MaskedBatch tiny = mask_tokens({kNumSpecials, kNumSpecials + 1, kSep}, 5);
  CHECK(tiny.positions.size() == 1);
  // seeded determinism
  MaskedBatch mb2 = mask_tokens(ids, 11);
  CHECK(mb2.positions == mb.positions);
  CHECK(mb2.input_ids == mb.input_ids);
}

TEST_CASE("entity pair sampling is balanced with forced negatives") {
  kg::SubGraph sub = testsup::manual_subgraph(5);
  std::vector<kg::Mention> mentions = {{0, 1, 0}, {2, 3, 1}, {4, 5, 2}};
  EntityPairBatch b = sample_entity_pairs(mentions, sub, 2, 9);
  REQUIRE(b.pairs.size() == 4);
  REQUIRE(b.labels.size() == 4);
  CHECK(std::count(b.labels.begin(), b.labels.end(), 1) == 2);
  CHECK(std::count(b.labels.begin(), b.labels.end(), 0) == 2);
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    auto [mi, node] = b.pairs[i];
    REQUIRE(mi >= 0);
    REQUIRE(mi < 3);
    REQUIRE(node >= 0);
    REQUIRE(node < static_cast<int>(sub.nodes.size()));
    CHECK(node != sub.interaction_index);
    bool matches = sub.nodes[node].entity == mentions[mi].entity;
    CHECK(matches == (b.labels[i] == 1));
  }
  // negatives reuse the positive's mention with a different node
  // (checked pairwise: for every negative there is a positive on the
  // same mention)
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    if (b.labels[i] != 0) continue;
    bool partner = false;
    for (std::size_t j = 0; j < b.pairs.size(); ++j)
      if (b.labels[j] == 1 && b.pairs[j].first == b.pairs[i].first)
        partner = true;
    CHECK(partner);
  }
  // deterministic
  EntityPairBatch b2 = sample_entity_pairs(mentions, sub, 2, 9);
  CHECK(b2.pairs == b.pairs);
  CHECK(b2.labels == b.labels);
}

namespace {
Dataset tiny_dataset() {
  Dataset ds;
  for (int id = 0; id < 3; ++id) {
    McqaExample ex;
    ex.id = id;
    ex.context = {"ctx" + std::to_string(id)};
    ex.question = {"what"};
    for (int c = 0; c < 3; ++c) {
      Candidate cand;
      cand.tokens = {"ans" + std::to_string(id) + std::to_string(c)};
      cand.subgraph = testsup::manual_subgraph(2 + c);
      ex.candidates.push_back(cand);
    }
    ex.correct = id % 3;
    ds.push_back(ex);
  }
  return ds;
}

bool same_subgraph(const kg::SubGraph& a, const kg::SubGraph& b) {
  if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size())
    return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i)
    if (a.nodes[i].entity != b.nodes[i].entity ||
        a.nodes[i].label != b.nodes[i].label)
      return false;
  for (std::size_t i = 0; i < a.edges.size(); ++i)
    if (a.edges[i].head != b.edges[i].head || a.edges[i].rel != b.edges[i].rel ||
        a.edges[i].tail != b.edges[i].tail)
      return false;
  return a.interaction_index == b.interaction_index;
}
}  // namespace

TEST_CASE("operation A copies the correct text, operation B the subgraph") {
  Dataset ds = tiny_dataset();
  Dataset a = apply_operation_a(ds);
  REQUIRE(a.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& gold = ds[i].candidates[ds[i].correct];
    for (std::size_t c = 0; c < ds[i].candidates.size(); ++c) {
      CHECK(a[i].candidates[c].tokens == gold.tokens);
      CHECK(same_subgraph(a[i].candidates[c].subgraph,
                          ds[i].candidates[c].subgraph));
    }
    CHECK(a[i].correct == ds[i].correct);
    CHECK(a[i].context == ds[i].context);
  }
  Dataset b = apply_operation_b(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& gold = ds[i].candidates[ds[i].correct];
    for (std::size_t c = 0; c < ds[i].candidates.size(); ++c) {
      CHECK(same_subgraph(b[i].candidates[c].subgraph, gold.subgraph));
      CHECK(b[i].candidates[c].tokens == ds[i].candidates[c].tokens);
    }
  }
}

TEST_CASE("operations are idempotent and commute on this data") {
  Dataset ds = tiny_dataset();
  Dataset a1 = apply_operation_a(ds);
  Dataset a2 = apply_operation_a(a1);
  Dataset b1 = apply_operation_b(ds);
  Dataset b2 = apply_operation_b(b1);
  Dataset ab = apply_operation_b(a1);
  Dataset ba = apply_operation_a(b1);
  auto same_ds = [&](const Dataset& x, const Dataset& y) {
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].context == y[i].context);
      CHECK(x[i].question == y[i].question);
      CHECK(x[i].correct == y[i].correct);
      REQUIRE(x[i].candidates.size() == y[i].candidates.size());
      for (std::size_t c = 0; c < x[i].candidates.size(); ++c) {
        CHECK(x[i].candidates[c].tokens == y[i].candidates[c].tokens);
        CHECK(same_subgraph(x[i].candidates[c].subgraph,
                            y[i].candidates[c].subgraph));
      }
    }
  };
  same_ds(a2, a1);
  same_ds(b2, b1);
  same_ds(ab, ba);
}

TEST_CASE("jsonl round trip") {
  auto dir = testsup::scratch_dir("corpus_jsonl");
  Dataset ds = tiny_dataset();
  std::string path = (dir / "ds.jsonl").string();
  write_jsonl(ds, path);
  Dataset back = read_jsonl(path);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(back[i].context == ds[i].context);
    CHECK(back[i].question == ds[i].question);
    CHECK(back[i].correct == ds[i].correct);
    REQUIRE(back[i].candidates.size() == ds[i].candidates.size());
    for (std::size_t c = 0; c < ds[i].candidates.size(); ++c) {
      CHECK(back[i].candidates[c].tokens == ds[i].candidates[c].tokens);
      CHECK(same_subgraph(back[i].candidates[c].subgraph,
                          ds[i].candidates[c].subgraph));
    }
  }
  // a second write of the reread data is byte-identical
  std::string path2 = (dir / "ds2.jsonl").string();
  write_jsonl(back, path2);
  CHECK(slurp(path) == slurp(path2));
  CHECK_THROWS_AS(read_jsonl((dir / "missing.jsonl").string()), ConfigError);
}

TEST_CASE("synthetic generator shape, splits, and determinism") {
  GenConfig cfg;
  cfg.n_entities = 20;
  cfg.n_relations = 3;
  cfg.n_examples = 40;
  cfg.n_candidates = 3;
  cfg.chain_hops = 2;
  cfg.seed = 5;
  cfg.retrieval = {2, 8};
  SyntheticData d = generate_synthetic_dataset(cfg);
  CHECK(d.graph.entity_count() == 20);
  CHECK(d.graph.relation_count() == 3);
  CHECK(d.train.size() == 32);
  CHECK(d.dev.size() == 4);
  CHECK(d.test.size() == 4);

  // split ids are disjoint
  std::set<int> ids;
  for (const auto* split : {&d.train, &d.dev, &d.test})
    for (const auto& ex : *split) CHECK(ids.insert(ex.id).second);

  for (const auto& ex : d.train) {
    REQUIRE(static_cast<int>(ex.candidates.size()) == cfg.n_candidates);
    CHECK(ex.correct >= 0);
    CHECK(ex.correct < cfg.n_candidates);
    std::set<std::vector<std::string>> texts;
    for (const auto& c : ex.candidates) {
      CHECK(!c.tokens.empty());
      texts.insert(c.tokens);
      CHECK(c.subgraph.interaction_index >= 0);
      CHECK(c.subgraph.entity_node_count() <= cfg.retrieval.max_nodes);
    }
    CHECK(texts.size() == ex.candidates.size());  // candidates are distinct
  }

  // byte-identical determinism across separate invocations
  auto dir = testsup::scratch_dir("corpus_gen");
  SyntheticData d2 = generate_synthetic_dataset(cfg);
  write_jsonl(d.train, (dir / "a.jsonl").string());
  write_jsonl(d2.train, (dir / "b.jsonl").string());
  CHECK(slurp((dir / "a.jsonl").string()) == slurp((dir / "b.jsonl").string()));
  d.graph.to_tsv((dir / "a.tsv").string());
  d2.graph.to_tsv((dir / "b.tsv").string());
  CHECK(slurp((dir / "a.tsv").string()) == slurp((dir / "b.tsv").string()));

  // a different seed changes the corpus
  cfg.seed = 6;
  SyntheticData d3 = generate_synthetic_dataset(cfg);
  write_jsonl(d3.train, (dir / "c.jsonl").string());
  CHECK(slurp((dir / "a.jsonl").string()) != slurp((dir / "c.jsonl").string()));
}
