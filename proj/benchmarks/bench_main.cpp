#include <benchmark/benchmark.h>

#include <vector>

#include "kbqa/decoder.hpp"
#include "kbqa/evalmetrics.hpp"
#include "kbqa/miloss.hpp"
#include "kbqa/synthgen.hpp"
#include "kbqa/trainer.hpp"
#include "kbqa/weights.hpp"

namespace {

using namespace kbqa;

// Synthetic corpus and 64/64/128 parameters shared by all benchmarks.
struct World {
  synth::GeneratedCorpus corpus;
  train::TrainConfig cfg;
  model::Lexicon lex;
  model::ModelParams params;
  std::vector<loss::PreparedBag> bags;

  World() {
    synth::GenConfig g;
    g.seed = 7;
    g.num_bags = 400;
    corpus = synth::generate(g);
    cfg.embed = 64;
    cfg.kb = 64;
    cfg.hidden = 128;
    lex = train::build_lexicon(cfg, corpus.kb, corpus.train);
    params = train::initial_params(cfg, lex);
    for (const auto& b : corpus.train) bags.push_back(loss::prepare(b, corpus.kb, lex));
  }

  std::vector<const loss::PreparedBag*> batch(std::size_t n) const {
    std::vector<const loss::PreparedBag*> v;
    for (std::size_t i = 0; i < n && i < bags.size(); ++i) v.push_back(&bags[i]);
    return v;
  }

  static const World& get() {
    static const World w;
    return w;
  }
};

void BM_NllForwardBackward(benchmark::State& state) {
  const auto& w = World::get();
  const auto batch = w.batch(static_cast<std::size_t>(state.range(0)));
  auto grads = model::ModelParams::zeros_like(w.params);
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss::nll_loss(w.params, batch, &grads).loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NllForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_SelForwardBackward(benchmark::State& state) {
  const auto& w = World::get();
  const auto batch = w.batch(static_cast<std::size_t>(state.range(0)));
  auto grads = model::ModelParams::zeros_like(w.params);
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss::sel_loss(w.params, batch, &grads).loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SelForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_SequenceLogprob(benchmark::State& state) {
  const auto& w = World::get();
  const auto& bag = w.bags.front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(model::sequence_logprob(bag.input, bag.answers.front(), w.params).total);
  }
}
BENCHMARK(BM_SequenceLogprob)->Unit(benchmark::kMicrosecond);

void BM_GreedyDecode(benchmark::State& state) {
  const auto& w = World::get();
  const auto& bag = w.bags.front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(model::greedy_decode(bag.input, w.params, 32));
  }
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMicrosecond);

void BM_KbWeights(benchmark::State& state) {
  const auto& w = World::get();
  for (auto _ : state) {
    for (const auto& b : w.corpus.train) benchmark::DoNotOptimize(loss::kb_weights(b).z);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.corpus.train.size()));
}
BENCHMARK(BM_KbWeights)->Unit(benchmark::kMicrosecond);

void BM_Evaluate(benchmark::State& state) {
  const auto& w = World::get();
  std::vector<eval::Tokens> preds;
  for (const auto& b : w.corpus.test) preds.push_back(b.answers.front().tokens);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::evaluate(preds, w.corpus.test).rougeL);
  }
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
