#include <benchmark/benchmark.h>

#include "fits/corpus.hpp"
#include "fits/trainer.hpp"

namespace {

using namespace fits;

struct Fixture {
  corpus::SyntheticData data;
  corpus::Vocab vocab;
  std::vector<trainer::PreparedExample> train;
  encoder::ModelState model;

  Fixture() {
    corpus::GenConfig gc;
    gc.n_entities = 30;
    gc.n_relations = 4;
    gc.n_examples = 20;
    data = corpus::generate_synthetic_dataset(gc);
    vocab = trainer::build_vocab_for(data.train);
    train = trainer::prepare_examples(data.train, data.graph, vocab);
    config::TrainConfig tc;
    model = encoder::ModelState::init(
        trainer::make_encoder_config(tc, vocab.size(),
                                     data.graph.entity_count(),
                                     data.graph.relation_count()),
        7);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_EncodeForward(benchmark::State& state) {
  auto& f = fixture();
  const auto& cand = f.train.front().candidates.front();
  for (auto _ : state) {
    Tape tape;
    auto enc = encoder::encode(tape, f.model, cand.token_ids, cand.mentions,
                               cand.subgraph);
    benchmark::DoNotOptimize(tape.val(enc.text).data[0]);
  }
}

void BM_ExampleBackward(benchmark::State& state) {
  auto& f = fixture();
  config::TrainConfig tc;
  const auto& ex = f.train.front();
  for (auto _ : state) {
    Tape tape;
    Var loss =
        trainer::example_finetune_loss(tape, f.model, ex, nullptr, tc, 1);
    tape.backward(loss);
    f.model.params.zero_grad();
  }
}

void BM_Retrieval(benchmark::State& state) {
  auto& f = fixture();
  kg::RetrievalConfig rc;
  for (auto _ : state) {
    auto sub = kg::retrieve_subgraph(f.data.graph, {0, 1}, {2}, rc);
    benchmark::DoNotOptimize(sub.nodes.size());
  }
}

BENCHMARK(BM_EncodeForward);
BENCHMARK(BM_ExampleBackward);
BENCHMARK(BM_Retrieval);

}  // namespace

BENCHMARK_MAIN();
