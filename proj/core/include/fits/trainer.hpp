#pragma once

#include <cstdint>
#include <vector>

#include "fits/checkpoint.hpp"
#include "fits/config.hpp"
#include "fits/corpus.hpp"
#include "fits/encoder.hpp"
#include "fits/objectives.hpp"

namespace fits::trainer {

struct PreparedCandidate {
  std::vector<std::string> merged;  // token strings
  std::vector<int> token_ids;
  std::vector<kg::Mention> mentions;
  kg::SubGraph subgraph;
};

struct PreparedExample {
  int id = 0;
  int correct = 0;
  std::vector<PreparedCandidate> candidates;
};

// Tokenize, merge, link mentions, and encode token ids for every candidate.
std::vector<PreparedExample> prepare_examples(const corpus::Dataset& ds,
                                              const kg::KnowledgeGraph& kg,
                                              const corpus::Vocab& vocab);

// Vocabulary is always rebuilt from the training split's token stream so a
// config + data pair fully determines the model.
corpus::Vocab build_vocab_for(const corpus::Dataset& train);

encoder::EncoderConfig make_encoder_config(const config::TrainConfig& cfg,
                                           int vocab_size, int entity_count,
                                           int relation_count);

struct PostLossStats {
  double ka = 0.0, mlm = 0.0;
  int n_ka = 0, n_mlm = 0, skipped = 0;
};

// Stage-1 loss of one example (MLM + KA summed over candidates, divided by
// the candidate count). Invalid Var when every term was skipped. Public so
// the gradient-check harness exercises the exact training loss.
Var example_post_loss(Tape& tape, encoder::ModelState& model,
                      const PreparedExample& ex,
                      const config::TrainConfig& cfg, std::uint64_t ex_seed,
                      PostLossStats* stats = nullptr);

struct FinetuneLossStats {
  double sup = 0.0, ksd = 0.0, kbr = 0.0;
};

// Stage-2 loss of one example (Sup + enabled KSD/KBR); pass the graph for
// irrelevant-entity injection, nullptr to encode subgraphs as stored.
Var example_finetune_loss(Tape& tape, encoder::ModelState& model,
                          const PreparedExample& ex,
                          const kg::KnowledgeGraph* kg_for_injection,
                          const config::TrainConfig& cfg,
                          std::uint64_t ex_seed,
                          FinetuneLossStats* stats = nullptr);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double loss_ka = 0.0, loss_mlm = 0.0;
  double loss_sup = 0.0, loss_ksd = 0.0, loss_kbr = 0.0;
  int ka_skipped = 0;
  double dev_acc = -1.0;  // -1 when not evaluated
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  Adam optimizer;
};

// Stage 1: MLM + KA over every candidate's merged text and subgraph, no
// gold labels. Examples without an alignable pair keep their MLM term.
TrainResult post_train(encoder::ModelState& model,
                       const std::vector<PreparedExample>& train,
                       const config::TrainConfig& cfg);

// Stage 2: joint softmax over candidates + enabled KSD/KBR. Irrelevant
// entities are injected during training only (eval_inject overrides).
// The model is left at the best-dev-accuracy parameters.
TrainResult fine_tune(encoder::ModelState& model,
                      const std::vector<PreparedExample>& train,
                      const std::vector<PreparedExample>& dev,
                      const kg::KnowledgeGraph& kg,
                      const config::TrainConfig& cfg);

double evaluate_accuracy(encoder::ModelState& model,
                         const std::vector<PreparedExample>& split);

// per-candidate probabilities for one example
std::vector<double> candidate_probabilities(encoder::ModelState& model,
                                            const PreparedExample& ex);

}  // namespace fits::trainer
