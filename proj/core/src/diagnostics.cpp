#include "fits/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fits/numerics.hpp"
#include "fits/rng.hpp"

namespace fits::diagnostics {

namespace {

std::vector<double> row_of(const Tensor& m, int r, int width) {
  std::vector<double> out(width);
  for (int c = 0; c < width; ++c) out[c] = m.at(r, c);
  return out;
}

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - ms.mean) * (x - ms.mean);
  ms.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return ms;
}

struct RowPair {
  int entity;
  std::vector<double> text;   // truncated pooled mention row
  std::vector<double> graph;  // truncated node row
};

// every (mention, node) alignment in the sample, rows truncated to width
std::vector<RowPair> collect_aligned(
    encoder::ModelState& model,
    const std::vector<trainer::PreparedExample>& sample, int width) {
  std::vector<RowPair> pairs;
  for (const auto& ex : sample) {
    for (const auto& cand : ex.candidates) {
      Tape tape;
      auto enc = encoder::encode(tape, model, cand.token_ids, cand.mentions,
                                 cand.subgraph);
      const Tensor& graph = tape.val(enc.graph);
      for (std::size_t mi = 0; mi < cand.mentions.size(); ++mi) {
        int node = cand.subgraph.find_entity(cand.mentions[mi].entity);
        if (node < 0) continue;
        int grow = enc.graph_row_of_node[node];
        const Tensor& text = tape.val(enc.text_entities[mi]);
        RowPair p;
        p.entity = cand.mentions[mi].entity;
        p.text.assign(text.data.begin(), text.data.begin() + width);
        p.graph = row_of(graph, grow, width);
        pairs.push_back(std::move(p));
      }
    }
  }
  return pairs;
}

}  // namespace

AlignmentReport entity_alignment_correlation(
    encoder::ModelState& model,
    const std::vector<trainer::PreparedExample>& sample, std::uint64_t seed) {
  int width = std::min(model.cfg.d_l, model.cfg.d_g);
  auto pairs = collect_aligned(model, sample, width);
  if (pairs.empty())
    throw EmptyReport("no aligned (mention, node) pairs in the sample");

  std::vector<double> same, mismatched;
  Rng rng(seed);
  for (const auto& p : pairs) {
    double r;
    try {
      r = pearson_r(p.text, p.graph);
    } catch (const DegenerateInput&) {
      continue;  // constant row; correlation undefined
    }
    same.push_back(r);

    // one uniformly drawn partner with a different entity id
    std::vector<int> others;
    for (std::size_t j = 0; j < pairs.size(); ++j)
      if (pairs[j].entity != p.entity) others.push_back(static_cast<int>(j));
    if (others.empty()) continue;
    const auto& q = pairs[others[rng.next_below(others.size())]];
    try {
      mismatched.push_back(pearson_r(p.text, q.graph));
    } catch (const DegenerateInput&) {
    }
  }
  if (same.empty())
    throw EmptyReport("all aligned pairs were degenerate");

  AlignmentReport rep;
  auto s = mean_std(same);
  auto m = mean_std(mismatched);
  rep.same_mean = s.mean;
  rep.same_stddev = s.stddev;
  rep.mismatched_mean = m.mean;
  rep.mismatched_stddev = m.stddev;
  rep.sample_count = static_cast<int>(same.size());
  rep.common_width = width;
  return rep;
}

ModalityPca modality_pca(encoder::ModelState& model,
                         const std::vector<trainer::PreparedExample>& sample) {
  int width = std::min(model.cfg.d_l, model.cfg.d_g);
  auto pairs = collect_aligned(model, sample, width);
  if (static_cast<int>(pairs.size()) < 3)
    throw DegenerateInput("need at least 3 aligned entities for PCA");

  int n = static_cast<int>(pairs.size());
  Tensor stacked{{2 * n, width}, std::vector<double>(2 * n * width)};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < width; ++c) {
      stacked.at(i, c) = pairs[i].text[c];
      stacked.at(n + i, c) = pairs[i].graph[c];
    }

  auto pca = pca_project(stacked, 2);
  ModalityPca out;
  out.points.reserve(2 * n);
  for (int i = 0; i < 2 * n; ++i)
    out.points.push_back({i < n ? 'L' : 'G', pca.projected.at(i, 0),
                          pca.projected.at(i, 1)});

  double gap = 0.0;
  for (int c = 0; c < width; ++c) {
    double cl = 0.0, cg = 0.0;
    for (int i = 0; i < n; ++i) {
      cl += stacked.at(i, c);
      cg += stacked.at(n + i, c);
    }
    double d = (cl - cg) / n;
    gap += d * d;
  }
  out.centroid_gap = std::sqrt(gap);
  return out;
}

void write_pca_tsv(const ModalityPca& pca, const std::string& path) {
  std::ofstream f(path);
  f << "modality\tx\ty\n";
  for (const auto& p : pca.points)
    f << p.modality << '\t' << p.x << '\t' << p.y << '\n';
}

AttentionReport attention_report(encoder::ModelState& model,
                                 const trainer::PreparedExample& ex,
                                 const kg::KnowledgeGraph& graph) {
  AttentionReport rep;
  for (const auto& cand : ex.candidates) {
    Tape tape;
    auto enc = encoder::encode(tape, model, cand.token_ids, cand.mentions,
                               cand.subgraph);
    // graph row -> subgraph node index
    std::vector<int> node_of_row(cand.subgraph.nodes.size() + 1, -1);
    for (std::size_t i = 0; i < enc.graph_row_of_node.size(); ++i)
      node_of_row[enc.graph_row_of_node[i]] = static_cast<int>(i);

    std::vector<AttentionReport::Entry> entries;
    for (const auto& ew : enc.attention.back().edges) {
      if (ew.tgt != 0 || ew.src == 0) continue;  // only node -> interaction
      const auto& node = cand.subgraph.nodes[node_of_row[ew.src]];
      if (node.entity < 0 || node.label == kg::kIrrelevant) continue;
      entries.push_back({graph.surface(node.entity), ew.weight});
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.surface < b.surface;
    });
    rep.per_candidate.push_back(std::move(entries));
  }
  return rep;
}

double evaluate_accuracy(encoder::ModelState& model,
                         const std::vector<trainer::PreparedExample>& split) {
  return trainer::evaluate_accuracy(model, split);
}

}  // namespace fits::diagnostics
