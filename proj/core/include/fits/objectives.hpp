#pragma once

#include <cstdint>
#include <vector>

#include "fits/encoder.hpp"

namespace fits::objectives {

using encoder::EncodedPair;
using encoder::ModelState;

// sigmoid(W1 . ReLU(W0 [e_L; e_G] + b0)); the squashing makes the score a
// probability so the binary cross-entropy below is well defined
Var ka_pair_score(Tape& tape, ModelState& model, Var e_text, Var e_graph);

// -(1/2k) sum (1-y) log(1-p) + y log(p), logs clamped
Var ka_loss(Tape& tape, const std::vector<Var>& scores,
            const std::vector<int>& labels);

// mean cross-entropy of vocab logits at the masked positions
Var mlm_loss(Tape& tape, ModelState& model, Var text,
             const std::vector<int>& positions,
             const std::vector<int>& target_ids);

Var post_loss(Tape& tape, Var ka, Var mlm);

// attention over entity node rows with the interaction token as query;
// zero vector when the graph has no entity nodes
Var attentive_pool(Tape& tape, ModelState& model, Var graph, Var h_int);

Var qa_candidate_score(Tape& tape, ModelState& model, Var h_int, Var e_int,
                       Var pooled);

// convenience: score one encoded candidate
Var qa_score(Tape& tape, ModelState& model, const EncodedPair& enc);

Var qa_probabilities(Tape& tape, const std::vector<Var>& logits);
Var qa_loss(Tape& tape, Var probabilities, int correct_index);

// argmax, ties to the lowest index
int predict(const std::vector<double>& probabilities);

// 4-way source classification summed (not averaged) over entity nodes
Var ksd_loss(Tape& tape, ModelState& model, const EncodedPair& enc,
             const kg::SubGraph& sub);

// TransE-style cosine pull over k_reg kg triplets of the subgraph
// (interaction edges excluded); triplets sampled by seed when there are
// more than k_reg
Var kbr_loss(Tape& tape, ModelState& model, const EncodedPair& enc,
             const kg::SubGraph& sub, int k_reg, std::uint64_t seed);

Var finetune_loss(Tape& tape, Var sup, Var ksd, Var kbr);

}  // namespace fits::objectives
