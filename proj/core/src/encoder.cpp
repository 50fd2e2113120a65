#include "fits/encoder.hpp"

#include <cmath>

#include "fits/rng.hpp"

namespace fits::encoder {

void EncoderConfig::validate() const {
  if (d_l <= 0 || d_g <= 0) throw ConfigError("widths must be positive");
  if (d_l % text_heads != 0) throw ConfigError("d_l not divisible by text_heads");
  if (d_g % gat_heads != 0) throw ConfigError("d_g not divisible by gat_heads");
  if (n_unimodal < 0) throw ConfigError("N must be >= 0");
  if (m_fusion < 1) throw ConfigError("M must be >= 1");
  if (vocab_size <= 0 || entity_count <= 0)
    throw ConfigError("vocab and entity table sizes required");
}

int relation_row(const EncoderConfig& cfg, int rel) {
  if (rel == kg::kInteractionRelation) return cfg.relation_count;
  if (rel < 0 || rel >= cfg.relation_count)
    throw IdNotFound("relation id out of range: " + std::to_string(rel));
  return rel;
}

ModelState ModelState::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState m;
  m.cfg = cfg;
  Rng rng(seed);
  auto normal = [&rng](std::vector<int> shape, double std_dev) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = std_dev * rng.next_normal();
    return t;
  };
  auto ones = [](std::vector<int> shape) {
    Tensor t(std::move(shape));
    t.fill(1.0);
    return t;
  };
  constexpr double kStd = 0.08;
  auto& p = m.params;

  p.add("embed.token", normal({cfg.vocab_size, cfg.d_l}, kStd));
  p.add("embed.pos", normal({cfg.max_seq, cfg.d_l}, kStd));
  // Entity embeddings start at a larger scale than the rest so entities are
  // immediately distinguishable; with near-zero starts the alignment head can
  // only separate pairs through a shared offset, which skews both modality
  // centroids apart during post-training.
  p.add("embed.entity", normal({cfg.entity_count, cfg.d_g}, 0.5));
  p.add("embed.src_label", normal({4, cfg.d_g}, kStd));
  p.add("embed.int_node", normal({cfg.d_g}, kStd));
  p.add("embed.relation", normal({cfg.relation_count + 1, cfg.d_g}, kStd));

  int text_layers = cfg.n_unimodal + cfg.m_fusion;
  for (int i = 0; i < text_layers; ++i) {
    std::string pre = "lm" + std::to_string(i) + ".";
    p.add(pre + "ln1.g", ones({cfg.d_l}));
    p.add(pre + "ln1.b", Tensor({cfg.d_l}));
    p.add(pre + "wq", normal({cfg.d_l, cfg.d_l}, kStd));
    p.add(pre + "wk", normal({cfg.d_l, cfg.d_l}, kStd));
    p.add(pre + "wv", normal({cfg.d_l, cfg.d_l}, kStd));
    p.add(pre + "wo", normal({cfg.d_l, cfg.d_l}, kStd));
    p.add(pre + "ln2.g", ones({cfg.d_l}));
    p.add(pre + "ln2.b", Tensor({cfg.d_l}));
    p.add(pre + "ff.w1", normal({cfg.ff_width, cfg.d_l}, kStd));
    p.add(pre + "ff.b1", Tensor({cfg.ff_width}));
    p.add(pre + "ff.w2", normal({cfg.d_l, cfg.ff_width}, kStd));
    p.add(pre + "ff.b2", Tensor({cfg.d_l}));
  }
  for (int i = 0; i < cfg.m_fusion; ++i) {
    std::string pre = "gat" + std::to_string(i) + ".";
    p.add(pre + "wq", normal({cfg.d_g, cfg.d_g}, kStd));
    p.add(pre + "wk", normal({cfg.d_g, cfg.d_g}, kStd));
    p.add(pre + "wv", normal({cfg.d_g, cfg.d_g}, kStd));
    p.add(pre + "wo", normal({cfg.d_g, cfg.d_g}, kStd));  // no bias: isolated
                                                          // nodes stay put
    int d = cfg.d_l + cfg.d_g;
    std::string fu = "fuse" + std::to_string(i) + ".";
    p.add(fu + "w1", normal({d, d}, kStd));
    p.add(fu + "b1", Tensor({d}));
    p.add(fu + "w2", normal({d, d}, kStd));
    p.add(fu + "b2", Tensor({d}));
  }

  // loss heads
  int d = cfg.d_l + cfg.d_g;
  {
    // The alignment head starts as a geometric comparator: the first
    // 2*min(d_l,d_g) hidden units read signed sums of matching text and
    // graph coordinates (plus small noise), the rest plain random, and the
    // output layer starts positive on the comparator units. |e_L[i]+e_G[i]|
    // grows under constructive interference, so raising the positive-pair
    // score rewards coordinate-wise correlation between the modalities
    // instead of the entity-identity memorization a free random MLP is
    // prone to at this scale.
    Tensor w0 = normal({d, d}, 0.1 * kStd);
    Tensor w1 = normal({d}, 0.1 * kStd);
    int common = std::min(cfg.d_l, cfg.d_g);
    for (int i = 0; i < common && 2 * i + 1 < d; ++i) {
      w0.at(2 * i, i) += 1.0;
      w0.at(2 * i, cfg.d_l + i) += 1.0;
      w0.at(2 * i + 1, i) -= 1.0;
      w0.at(2 * i + 1, cfg.d_l + i) -= 1.0;
      // Small enough that a typical pair starts below the constant unit's
      // negative output: matched pairs then carry the larger early
      // gradient, which pulls the modalities together rather than apart.
      w1.at(2 * i) += 0.15;
      w1.at(2 * i + 1) += 0.15;
    }
    // One constant unit (zero input weights, bias 1) with a negative
    // output weight acts as the output bias the head form lacks: unmatched
    // pairs start near score 0 instead of 0.5, so the early gradient is
    // dominated by pulling matched pairs together rather than by pushing
    // the graph common mode against the text common mode.
    Tensor b0({d});
    for (int j = 0; j < d; ++j) w0.at(d - 1, j) = 0.0;
    b0.at(d - 1) = 1.0;
    w1.at(d - 1) = -3.0;
    p.add("ka.w0", std::move(w0));
    p.add("ka.b0", std::move(b0));
    p.add("ka.w1", std::move(w1));
  }
  // closing layer norm of the pre-norm text stack
  p.add("final_ln.g", ones({cfg.d_l}));
  p.add("final_ln.b", Tensor({cfg.d_l}));
  p.add("final_ln_g.g", ones({cfg.d_g}));
  p.add("final_ln_g.b", Tensor({cfg.d_g}));
  p.add("mlm.w", normal({cfg.vocab_size, cfg.d_l}, kStd));
  p.add("qa.attn_q", normal({cfg.d_g, cfg.d_l}, kStd));
  int qa_in = cfg.d_l + 2 * cfg.d_g;
  p.add("qa.w1", normal({qa_in, qa_in}, kStd));
  p.add("qa.b1", Tensor({qa_in}));
  p.add("qa.w2", normal({1, qa_in}, kStd));
  p.add("qa.b2", Tensor({1}));
  p.add("ksd.w2", normal({cfg.d_g, cfg.d_g}, kStd));
  p.add("ksd.b1", Tensor({cfg.d_g}));
  p.add("ksd.w3", normal({4, cfg.d_g}, kStd));
  return m;
}

Var embed_text(Tape& tape, ModelState& model, const std::vector<int>& token_ids) {
  int t1 = static_cast<int>(token_ids.size()) + 1;
  if (t1 > model.cfg.max_seq)
    throw SequenceTooLong("sequence length " + std::to_string(t1) +
                          " exceeds max " + std::to_string(model.cfg.max_seq));
  std::vector<int> ids;
  ids.reserve(t1);
  ids.push_back(corpus::kInt);
  ids.insert(ids.end(), token_ids.begin(), token_ids.end());
  std::vector<int> positions(t1);
  for (int i = 0; i < t1; ++i) positions[i] = i;
  Var tok = tape.embedding_rows(tape.param(model.params, "embed.token"), ids);
  Var pos = tape.embedding_rows(tape.param(model.params, "embed.pos"), positions);
  return tape.add(tok, pos);
}

Var lm_layer(Tape& tape, ModelState& model, int layer, Var h,
             const std::vector<std::uint8_t>& attend_mask) {
  const auto& cfg = model.cfg;
  auto& p = model.params;
  std::string pre = "lm" + std::to_string(layer) + ".";
  int dh = cfg.d_l / cfg.text_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var a = tape.layer_norm_rows(h, tape.param(p, pre + "ln1.g"),
                               tape.param(p, pre + "ln1.b"));
  Var q = tape.matmul_nt(a, tape.param(p, pre + "wq"));
  Var k = tape.matmul_nt(a, tape.param(p, pre + "wk"));
  Var v = tape.matmul_nt(a, tape.param(p, pre + "wv"));
  std::vector<Var> heads;
  for (int hd = 0; hd < cfg.text_heads; ++hd) {
    Var qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
    Var kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
    Var vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
    Var scores = tape.scale(tape.matmul_nt(qh, kh), scale);
    Var attn = tape.masked_softmax_rows(scores, attend_mask);
    heads.push_back(tape.matmul(attn, vh));
  }
  Var ctx = cfg.text_heads == 1 ? heads[0] : tape.concat_cols(heads);
  Var o = tape.matmul_nt(ctx, tape.param(p, pre + "wo"));
  Var x = tape.add(h, o);

  Var b = tape.layer_norm_rows(x, tape.param(p, pre + "ln2.g"),
                               tape.param(p, pre + "ln2.b"));
  Var f = tape.relu(tape.linear(b, tape.param(p, pre + "ff.w1"),
                                tape.param(p, pre + "ff.b1")));
  Var f2 = tape.linear(f, tape.param(p, pre + "ff.w2"),
                       tape.param(p, pre + "ff.b2"));
  return tape.add(x, f2);
}

Var gnn_layer(Tape& tape, ModelState& model, int layer, Var e,
              const std::vector<kg::SubGraphEdge>& edges, int n_rows,
              GatAttention* record) {
  const auto& cfg = model.cfg;
  auto& p = model.params;
  std::string pre = "gat" + std::to_string(layer) + ".";

  if (edges.empty()) return e;

  std::vector<int> rel_rows;
  std::vector<std::pair<int, int>> ends;
  rel_rows.reserve(edges.size());
  ends.reserve(edges.size());
  for (const auto& ed : edges) {
    rel_rows.push_back(relation_row(cfg, ed.rel));
    ends.emplace_back(ed.head, ed.tail);
  }
  (void)n_rows;  // implied by e's row count
  Var rels =
      tape.embedding_rows(tape.param(p, "embed.relation"), rel_rows);
  std::vector<double> att;
  Var out = tape.gat_pass(e, rels, tape.param(p, pre + "wq"),
                          tape.param(p, pre + "wk"), tape.param(p, pre + "wv"),
                          tape.param(p, pre + "wo"), ends, cfg.gat_heads,
                          record ? &att : nullptr);
  if (record) {
    record->edges.resize(edges.size());
    for (std::size_t i = 0; i < edges.size(); ++i)
      record->edges[i] = {edges[i].head, edges[i].tail, att[i]};
  }
  return out;
}

std::pair<Var, Var> fuse_interaction(Tape& tape, ModelState& model, int layer,
                                     Var h_int, Var e_int) {
  auto& p = model.params;
  std::string pre = "fuse" + std::to_string(layer) + ".";
  Var x = tape.concat_vec(h_int, e_int);
  Var hidden = tape.relu(tape.add(tape.matvec(tape.param(p, pre + "w1"), x),
                                  tape.param(p, pre + "b1")));
  Var y = tape.add(tape.matvec(tape.param(p, pre + "w2"), hidden),
                   tape.param(p, pre + "b2"));
  int d_l = model.cfg.d_l;
  int d = d_l + model.cfg.d_g;
  return {tape.slice_vec(y, 0, d_l), tape.slice_vec(y, d_l, d)};
}

Var pool_text_entities_one(Tape& tape, Var h, const kg::Mention& mention) {
  if (mention.begin >= mention.end) throw SpanError("empty mention span");
  // token i sits at row i+1 (row 0 is the interaction token)
  return tape.mean_rows(tape.slice_rows(h, mention.begin + 1, mention.end + 1));
}

EncodedPair encode(Tape& tape, ModelState& model,
                   const std::vector<int>& token_ids,
                   const std::vector<kg::Mention>& mentions,
                   const kg::SubGraph& sub) {
  const auto& cfg = model.cfg;
  EncodedPair out;

  // ---- text stack
  Var h = embed_text(tape, model, token_ids);
  std::vector<std::uint8_t> mask(token_ids.size() + 1, 1);
  for (std::size_t i = 0; i < token_ids.size(); ++i)
    if (token_ids[i] == corpus::kPad) mask[i + 1] = 0;
  for (int i = 0; i < cfg.n_unimodal; ++i) h = lm_layer(tape, model, i, h, mask);

  // ---- graph rows: row 0 interaction, entity nodes follow in node order
  out.graph_row_of_node.assign(sub.nodes.size(), -1);
  std::vector<int> entity_ids;
  std::vector<int> label_rows;
  int next_row = 1;
  for (std::size_t i = 0; i < sub.nodes.size(); ++i) {
    if (static_cast<int>(i) == sub.interaction_index) {
      out.graph_row_of_node[i] = 0;
      continue;
    }
    const auto& n = sub.nodes[i];
    if (n.label < kg::kQuestionLinked || n.label > kg::kIrrelevant)
      throw LabelMissing("subgraph node without source label");
    entity_ids.push_back(n.entity);
    label_rows.push_back(n.label - 1);
    out.graph_row_of_node[i] = next_row++;
  }
  int n_rows = next_row;

  std::vector<Var> erow_vars;
  erow_vars.push_back(tape.param(model.params, "embed.int_node"));
  if (!entity_ids.empty()) {
    Var ent = tape.embedding_rows(tape.param(model.params, "embed.entity"),
                                  entity_ids);
    Var lab = tape.embedding_rows(tape.param(model.params, "embed.src_label"),
                                  label_rows);
    Var sum = tape.add(ent, lab);
    for (int i = 0; i < static_cast<int>(entity_ids.size()); ++i)
      erow_vars.push_back(tape.row(sum, i));
  }
  Var e = tape.stack_rows(erow_vars);

  // edges in graph-row coordinates
  std::vector<kg::SubGraphEdge> row_edges;
  row_edges.reserve(sub.edges.size());
  for (const auto& ed : sub.edges)
    row_edges.push_back({out.graph_row_of_node[ed.head], ed.rel,
                         out.graph_row_of_node[ed.tail]});

  // ---- fusion layers
  out.attention.resize(cfg.m_fusion);
  for (int l = 0; l < cfg.m_fusion; ++l) {
    Var ht = lm_layer(tape, model, cfg.n_unimodal + l, h, mask);
    Var et = gnn_layer(tape, model, l, e, row_edges, n_rows, &out.attention[l]);
    auto [h_int, e_int] =
        fuse_interaction(tape, model, l, tape.row(ht, 0), tape.row(et, 0));
    h = tape.replace_row(ht, 0, h_int);
    e = tape.replace_row(et, 0, e_int);
  }
  h = tape.layer_norm_rows(h, tape.param(model.params, "final_ln.g"),
                           tape.param(model.params, "final_ln.b"));
  e = tape.layer_norm_rows(e, tape.param(model.params, "final_ln_g.g"),
                           tape.param(model.params, "final_ln_g.b"));
  out.text = h;
  out.graph = e;

  for (const auto& m : mentions)
    out.text_entities.push_back(pool_text_entities_one(tape, h, m));
  return out;
}

}  // namespace fits::encoder
