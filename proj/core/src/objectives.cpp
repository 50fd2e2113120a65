#include "fits/objectives.hpp"

#include <algorithm>

#include "fits/rng.hpp"

namespace fits::objectives {

Var ka_pair_score(Tape& tape, ModelState& model, Var e_text, Var e_graph) {
  auto& p = model.params;
  Var x = tape.concat_vec(e_text, e_graph);
  Var hidden = tape.relu(tape.add(tape.matvec(tape.param(p, "ka.w0"), x),
                                  tape.param(p, "ka.b0")));
  return tape.sigmoid(tape.dot(tape.param(p, "ka.w1"), hidden));
}

Var ka_loss(Tape& tape, const std::vector<Var>& scores,
            const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ShapeError("ka_loss score/label length mismatch");
  Var s = tape.stack_scalars(scores);
  int n = static_cast<int>(scores.size());
  Tensor y({n}), yneg({n});
  for (int i = 0; i < n; ++i) {
    y.at(i) = labels[i];
    yneg.at(i) = 1.0 - labels[i];
  }
  Var pos = tape.dot(tape.constant(std::move(y)), tape.log_clamped(s));
  Var one = tape.constant(Tensor({n}, std::vector<double>(n, 1.0)));
  Var neg = tape.dot(tape.constant(std::move(yneg)),
                     tape.log_clamped(tape.sub(one, s)));
  return tape.scale(tape.add(pos, neg), -1.0 / n);
}

Var mlm_loss(Tape& tape, ModelState& model, Var text,
             const std::vector<int>& positions,
             const std::vector<int>& target_ids) {
  if (positions.empty()) throw NothingToScore("mlm_loss with no positions");
  if (positions.size() != target_ids.size())
    throw ShapeError("mlm positions/targets mismatch");
  Var w = tape.param(model.params, "mlm.w");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    // merged token t sits at text row t+1
    Var logits = tape.matvec(w, tape.row(text, positions[i] + 1));
    terms.push_back(tape.cross_entropy_logits(logits, target_ids[i]));
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
  return tape.scale(total, 1.0 / static_cast<double>(terms.size()));
}

Var post_loss(Tape& tape, Var ka, Var mlm) { return tape.add(ka, mlm); }

Var attentive_pool(Tape& tape, ModelState& model, Var graph, Var h_int) {
  int rows = tape.val(graph).shape[0];
  if (rows <= 1) return tape.constant(Tensor({model.cfg.d_g}));
  Var q = tape.matvec(tape.param(model.params, "qa.attn_q"), h_int);  // d_g
  Var nodes = tape.slice_rows(graph, 1, rows);  // entity rows only
  Var logits = tape.matvec(nodes, q);
  Var alpha = tape.softmax_vec(logits);
  return tape.vecmat(alpha, nodes);
}

Var qa_candidate_score(Tape& tape, ModelState& model, Var h_int, Var e_int,
                       Var pooled) {
  auto& p = model.params;
  Var x = tape.concat_vec(tape.concat_vec(h_int, e_int), pooled);
  Var hidden = tape.relu(tape.add(tape.matvec(tape.param(p, "qa.w1"), x),
                                  tape.param(p, "qa.b1")));
  Var y = tape.add(tape.matvec(tape.param(p, "qa.w2"), hidden),
                   tape.param(p, "qa.b2"));
  return tape.slice_vec(y, 0, 1);  // scalar
}

Var qa_score(Tape& tape, ModelState& model, const EncodedPair& enc) {
  Var h_int = tape.row(enc.text, 0);
  Var e_int = tape.row(enc.graph, 0);
  Var pooled = attentive_pool(tape, model, enc.graph, h_int);
  return qa_candidate_score(tape, model, h_int, e_int, pooled);
}

Var qa_probabilities(Tape& tape, const std::vector<Var>& logits) {
  return tape.softmax_vec(tape.stack_scalars(logits));
}

Var qa_loss(Tape& tape, Var probabilities, int correct_index) {
  const Tensor& p = tape.val(probabilities);
  if (correct_index < 0 || correct_index >= p.shape[0])
    throw ShapeError("qa_loss correct index out of range");
  return tape.scale(
      tape.log_clamped(tape.slice_vec(probabilities, correct_index,
                                      correct_index + 1)),
      -1.0);
}

int predict(const std::vector<double>& probabilities) {
  if (probabilities.empty()) throw ShapeError("predict on empty candidates");
  int best = 0;
  for (std::size_t i = 1; i < probabilities.size(); ++i)
    if (probabilities[i] > probabilities[best]) best = static_cast<int>(i);
  return best;
}

Var ksd_loss(Tape& tape, ModelState& model, const EncodedPair& enc,
             const kg::SubGraph& sub) {
  auto& p = model.params;
  Var w2 = tape.param(p, "ksd.w2");
  Var b1 = tape.param(p, "ksd.b1");
  Var w3 = tape.param(p, "ksd.w3");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < sub.nodes.size(); ++i) {
    if (static_cast<int>(i) == sub.interaction_index) continue;
    int label = sub.nodes[i].label;
    if (label < kg::kQuestionLinked || label > kg::kIrrelevant)
      throw LabelMissing("node without source label in ksd_loss");
    Var e = tape.row(enc.graph, enc.graph_row_of_node[i]);
    Var hidden = tape.relu(tape.add(tape.matvec(w2, e), b1));
    Var logits = tape.matvec(w3, hidden);
    terms.push_back(tape.cross_entropy_logits(logits, label - 1));
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  Var total = terms[0];  // Eq. 10 is a plain sum, no normalization
  for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
  return total;
}

Var kbr_loss(Tape& tape, ModelState& model, const EncodedPair& enc,
             const kg::SubGraph& sub, int k_reg, std::uint64_t seed) {
  std::vector<int> kg_edges;
  for (std::size_t i = 0; i < sub.edges.size(); ++i)
    if (sub.edges[i].rel != kg::kInteractionRelation)
      kg_edges.push_back(static_cast<int>(i));
  if (kg_edges.empty() || k_reg == 0) return tape.constant(Tensor::scalar(0.0));

  std::vector<int> chosen;
  if (static_cast<int>(kg_edges.size()) > k_reg) {
    Rng rng(seed);
    auto idx = rng.sample_without_replacement(static_cast<int>(kg_edges.size()),
                                              k_reg);
    std::sort(idx.begin(), idx.end());
    for (int i : idx) chosen.push_back(kg_edges[i]);
  } else {
    chosen = kg_edges;  // fewer than k_reg: use all, no rescaling
  }

  Var rel_table = tape.param(model.params, "embed.relation");
  std::vector<Var> terms;
  for (int ei : chosen) {
    const auto& ed = sub.edges[ei];
    Var eh = tape.row(enc.graph, enc.graph_row_of_node[ed.head]);
    Var et = tape.row(enc.graph, enc.graph_row_of_node[ed.tail]);
    Var er = tape.row(rel_table, encoder::relation_row(model.cfg, ed.rel));
    Var c = tape.cosine(tape.add(eh, er), et);
    terms.push_back(tape.sub(tape.constant(Tensor::scalar(1.0)), c));
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
  return total;
}

Var finetune_loss(Tape& tape, Var sup, Var ksd, Var kbr) {
  return tape.add(tape.add(sup, ksd), kbr);
}

}  // namespace fits::objectives
