#include "fits/trainer.hpp"

#include <algorithm>

#include "fits/rng.hpp"

namespace fits::trainer {

namespace {

void scale_grads(ParamStore& params, double factor) {
  for (const auto& name : params.names())
    for (double& g : params.at(name).grad.data) g *= factor;
}

// shared by fine_tune and evaluation: per-candidate probabilities plus the
// tape and encodings when auxiliary losses are needed
struct ExampleForward {
  std::vector<encoder::EncodedPair> encs;
  std::vector<kg::SubGraph> graphs;  // possibly with injected nodes
  Var probs;
};

ExampleForward forward_example(Tape& tape, encoder::ModelState& model,
                               const PreparedExample& ex,
                               const kg::KnowledgeGraph* kg_for_injection,
                               int k_irr, int hops, std::uint64_t seed) {
  ExampleForward fwd;
  std::vector<Var> logits;
  for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
    const auto& cand = ex.candidates[c];
    kg::SubGraph sub = cand.subgraph;
    if (kg_for_injection && k_irr > 0)
      sub = kg::inject_irrelevant_relaxed(sub, *kg_for_injection, hops, k_irr,
                                          derive_seed(seed, c + 1));
    auto enc = encoder::encode(tape, model, cand.token_ids, cand.mentions, sub);
    logits.push_back(objectives::qa_score(tape, model, enc));
    fwd.encs.push_back(std::move(enc));
    fwd.graphs.push_back(std::move(sub));
  }
  fwd.probs = objectives::qa_probabilities(tape, logits);
  return fwd;
}

}  // namespace

encoder::EncoderConfig make_encoder_config(const config::TrainConfig& cfg,
                                           int vocab_size, int entity_count,
                                           int relation_count) {
  encoder::EncoderConfig ec;
  ec.d_l = cfg.d_l;
  ec.d_g = cfg.d_g;
  ec.n_unimodal = cfg.n_unimodal;
  ec.m_fusion = cfg.m_fusion;
  ec.text_heads = cfg.text_heads;
  ec.gat_heads = cfg.gat_heads;
  ec.max_seq = cfg.max_seq;
  ec.ff_width = cfg.ff_width;
  ec.vocab_size = vocab_size;
  ec.entity_count = entity_count;
  ec.relation_count = relation_count;
  return ec;
}

corpus::Vocab build_vocab_for(const corpus::Dataset& train) {
  std::vector<std::string> stream;
  for (const auto& ex : train) {
    stream.insert(stream.end(), ex.context.begin(), ex.context.end());
    stream.insert(stream.end(), ex.question.begin(), ex.question.end());
    for (const auto& c : ex.candidates)
      stream.insert(stream.end(), c.tokens.begin(), c.tokens.end());
  }
  return corpus::Vocab::build(stream);
}

std::vector<PreparedExample> prepare_examples(const corpus::Dataset& ds,
                                              const kg::KnowledgeGraph& kg,
                                              const corpus::Vocab& vocab) {
  std::vector<PreparedExample> out;
  out.reserve(ds.size());
  for (const auto& ex : ds) {
    PreparedExample pe;
    pe.id = ex.id;
    pe.correct = ex.correct;
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      PreparedCandidate pc;
      pc.merged = corpus::merged_tokens(ex, static_cast<int>(c));
      pc.token_ids = vocab.encode(pc.merged);
      pc.mentions = kg::link_entities(kg, pc.merged);
      pc.subgraph = ex.candidates[c].subgraph;
      pe.candidates.push_back(std::move(pc));
    }
    out.push_back(std::move(pe));
  }
  return out;
}

Var example_post_loss(Tape& tape, encoder::ModelState& model,
                      const PreparedExample& ex,
                      const config::TrainConfig& cfg, std::uint64_t ex_seed,
                      PostLossStats* stats) {
  int n_cands = static_cast<int>(ex.candidates.size());
  std::vector<Var> terms;
  for (int c = 0; c < n_cands; ++c) {
    const auto& cand = ex.candidates[c];
    std::uint64_t sub_seed = derive_seed(ex_seed, c);

    corpus::MaskedBatch masked;
    if (cfg.loss_mlm) masked = corpus::mask_tokens(cand.token_ids, sub_seed);
    const std::vector<int>& input_ids =
        cfg.loss_mlm ? masked.input_ids : cand.token_ids;
    auto enc =
        encoder::encode(tape, model, input_ids, cand.mentions, cand.subgraph);

    if (cfg.loss_mlm) {
      Var lm = objectives::mlm_loss(tape, model, enc.text, masked.positions,
                                    masked.originals);
      if (stats) {
        stats->mlm += tape.scalar(lm);
        ++stats->n_mlm;
      }
      terms.push_back(lm);
    }
    if (cfg.loss_ka) {
      try {
        auto pairs = corpus::sample_entity_pairs(cand.mentions, cand.subgraph,
                                                 cfg.k,
                                                 derive_seed(sub_seed, 0x6b61));
        std::vector<Var> scores;
        for (auto& [mi, node] : pairs.pairs) {
          Var e_text = enc.text_entities[mi];
          Var e_graph = tape.row(enc.graph, enc.graph_row_of_node[node]);
          scores.push_back(
              objectives::ka_pair_score(tape, model, e_text, e_graph));
        }
        Var ka = objectives::ka_loss(tape, scores, pairs.labels);
        if (stats) {
          stats->ka += tape.scalar(ka);
          ++stats->n_ka;
        }
        terms.push_back(ka);
      } catch (const NoAlignablePair&) {
        if (stats) ++stats->skipped;
      }
    }
  }
  if (terms.empty()) return Var{};
  return tape.scale(tape.add_n(terms), 1.0 / n_cands);
}

Var example_finetune_loss(Tape& tape, encoder::ModelState& model,
                          const PreparedExample& ex,
                          const kg::KnowledgeGraph* kg_for_injection,
                          const config::TrainConfig& cfg,
                          std::uint64_t ex_seed, FinetuneLossStats* stats) {
  auto fwd = forward_example(tape, model, ex, kg_for_injection, cfg.k_irr,
                             cfg.hops, ex_seed);
  Var sup = objectives::qa_loss(tape, fwd.probs, ex.correct);
  Var ksd = tape.constant(Tensor::scalar(0.0));
  Var kbr = tape.constant(Tensor::scalar(0.0));
  if (cfg.loss_ksd) {
    std::vector<Var> terms;
    for (std::size_t c = 0; c < fwd.encs.size(); ++c)
      terms.push_back(
          objectives::ksd_loss(tape, model, fwd.encs[c], fwd.graphs[c]));
    ksd = tape.add_n(terms);
  }
  if (cfg.loss_kbr) {
    std::vector<Var> terms;
    for (std::size_t c = 0; c < fwd.encs.size(); ++c)
      terms.push_back(objectives::kbr_loss(
          tape, model, fwd.encs[c], fwd.graphs[c], cfg.k_reg,
          derive_seed(cfg.seed, 0x6272ULL ^ (ex.id * 16 + c))));
    kbr = tape.add_n(terms);
  }
  if (stats) {
    stats->sup = tape.scalar(sup);
    stats->ksd = tape.scalar(ksd);
    stats->kbr = tape.scalar(kbr);
  }
  return objectives::finetune_loss(tape, sup, ksd, kbr);
}

TrainResult post_train(encoder::ModelState& model,
                       const std::vector<PreparedExample>& train,
                       const config::TrainConfig& cfg) {
  if (!cfg.loss_ka && !cfg.loss_mlm)
    throw ConfigError("post-training with both MLM and KA disabled");
  if (train.empty()) throw ConfigError("empty training split");

  TrainResult result;
  result.optimizer = Adam(cfg.optim);
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x9050ULL + epoch));
    shuffle_rng.shuffle(order);

    EpochMetrics em;
    em.epoch = epoch;
    int n_terms_ka = 0, n_terms_mlm = 0;
    model.params.zero_grad();
    int in_batch = 0;

    for (int oi : order) {
      const PreparedExample& ex = train[oi];
      std::uint64_t ex_seed = derive_seed(
          cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^
                        static_cast<std::uint64_t>(ex.id));
      Tape tape;
      PostLossStats stats;
      Var loss = example_post_loss(tape, model, ex, cfg, ex_seed, &stats);
      em.loss_ka += stats.ka;
      em.loss_mlm += stats.mlm;
      n_terms_ka += stats.n_ka;
      n_terms_mlm += stats.n_mlm;
      em.ka_skipped += stats.skipped;
      if (loss.valid()) tape.backward(loss);
      if (++in_batch == cfg.batch_size) {
        scale_grads(model.params, 1.0 / in_batch);
        result.optimizer.step(model.params);
        model.params.zero_grad();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      scale_grads(model.params, 1.0 / in_batch);
      result.optimizer.step(model.params);
      model.params.zero_grad();
    }

    if (n_terms_ka > 0) em.loss_ka /= n_terms_ka;
    if (n_terms_mlm > 0) em.loss_mlm /= n_terms_mlm;
    em.loss = em.loss_ka + em.loss_mlm;
    result.metrics.push_back(em);
  }
  return result;
}

std::vector<double> candidate_probabilities(encoder::ModelState& model,
                                            const PreparedExample& ex) {
  Tape tape;
  auto fwd = forward_example(tape, model, ex, nullptr, 0, 0, 0);
  return tape.val(fwd.probs).data;
}

double evaluate_accuracy(encoder::ModelState& model,
                         const std::vector<PreparedExample>& split) {
  if (split.empty()) return 0.0;
  int correct = 0;
  for (const auto& ex : split) {
    auto probs = candidate_probabilities(model, ex);
    if (objectives::predict(probs) == ex.correct) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

TrainResult fine_tune(encoder::ModelState& model,
                      const std::vector<PreparedExample>& train,
                      const std::vector<PreparedExample>& dev,
                      const kg::KnowledgeGraph& kg,
                      const config::TrainConfig& cfg) {
  if (train.empty()) throw ConfigError("empty training split");

  TrainResult result;
  result.optimizer = Adam(cfg.optim);
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double best_dev = -1.0;
  double best_dev_ce = 0.0;
  std::vector<std::pair<std::string, Tensor>> best_params;
  // mean -log p(correct) over the dev split; breaks dev-accuracy ties
  auto dev_cross_entropy = [&]() {
    double total = 0.0;
    for (const auto& ex : dev) {
      std::vector<double> p = candidate_probabilities(model, ex);
      total -= std::log(std::max(p[ex.correct], 1e-12));
    }
    return total / static_cast<double>(dev.size());
  };
  bool want_injection = cfg.loss_ksd && cfg.k_irr > 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0xf17eULL + epoch));
    shuffle_rng.shuffle(order);

    EpochMetrics em;
    em.epoch = epoch;
    int n_ex = 0;
    model.params.zero_grad();
    int in_batch = 0;

    for (int oi : order) {
      const PreparedExample& ex = train[oi];
      Tape tape;
      std::uint64_t ex_seed = derive_seed(
          cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^
                        static_cast<std::uint64_t>(ex.id));
      FinetuneLossStats stats;
      Var total = example_finetune_loss(
          tape, model, ex, want_injection ? &kg : nullptr, cfg, ex_seed,
          &stats);
      em.loss_sup += stats.sup;
      em.loss_ksd += stats.ksd;
      em.loss_kbr += stats.kbr;
      ++n_ex;
      tape.backward(total);

      if (++in_batch == cfg.batch_size) {
        scale_grads(model.params, 1.0 / in_batch);
        result.optimizer.step(model.params);
        model.params.zero_grad();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      scale_grads(model.params, 1.0 / in_batch);
      result.optimizer.step(model.params);
      model.params.zero_grad();
    }

    em.loss_sup /= n_ex;
    em.loss_ksd /= n_ex;
    em.loss_kbr /= n_ex;
    em.loss = em.loss_sup + em.loss_ksd + em.loss_kbr;
    if (!dev.empty()) {
      em.dev_acc = evaluate_accuracy(model, dev);
      // accuracy decides; ties go to the epoch with the more confident
      // (lower cross-entropy) dev predictions
      double ce = dev_cross_entropy();
      if (em.dev_acc > best_dev ||
          (em.dev_acc == best_dev && ce < best_dev_ce)) {
        best_dev = em.dev_acc;
        best_dev_ce = ce;
        best_params.clear();
        for (const auto& name : model.params.names())
          best_params.emplace_back(name, model.params.at(name).value);
      }
    }
    result.metrics.push_back(em);
  }

  if (!best_params.empty()) {
    for (auto& [name, value] : best_params)
      model.params.at(name).value = std::move(value);
  }
  return result;
}

}  // namespace fits::trainer
