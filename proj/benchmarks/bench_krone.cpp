#include <benchmark/benchmark.h>

#include <random>

#include "krone/decompose.hpp"
#include "krone/detect.hpp"
#include "krone/synth.hpp"

using namespace krone;

namespace {

std::vector<TopicTriple> catalog(std::size_t n) {
  std::vector<TopicTriple> t;
  for (std::size_t i = 0; i < n; ++i)
    t.push_back({"k" + std::to_string(i), "E" + std::to_string(i / 10), "a" + std::to_string(i / 3),
                 "s" + std::to_string(i)});
  return t;
}

KeyList walk(std::size_t len, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::bernoulli_distribution stay(0.7);
  KeyList keys;
  std::size_t cur = pick(rng);
  for (std::size_t i = 0; i < len; ++i) {
    if (!stay(rng)) cur = pick(rng);
    keys.push_back("k" + std::to_string(cur));
  }
  return keys;
}

void BM_Decompose(benchmark::State& state) {
  const auto tree = KroneTree::build(catalog(50));
  const auto keys = walk(static_cast<std::size_t>(state.range(0)), 50, 1);
  for (auto _ : state) benchmark::DoNotOptimize(top_down_decompose(keys, tree));
  state.SetComplexityN(state.range(0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decompose)->RangeMultiplier(10)->Range(100, 100000)->Complexity(benchmark::oN);

void BM_ExactMatch(benchmark::State& state) {
  const auto corpus = generate_corpus(SynthConfig{});
  const auto tree = KroneTree::build(corpus.triples);
  auto kbs = train(corpus.train, tree, DetectConfig{});
  const auto d = top_down_decompose(corpus.test.front().keys(), tree);
  const auto& kb = kbs.train_kb(Level::status);
  for (auto _ : state)
    for (const auto& s : d.s_seqs) benchmark::DoNotOptimize(detect_local_exact(s, kb));
}
BENCHMARK(BM_ExactMatch);

void BM_DetectCorpus(benchmark::State& state) {
  const auto corpus = generate_corpus(SynthConfig{});
  const auto tree = KroneTree::build(corpus.triples);
  DetectConfig cfg;
  cfg.early_exit = state.range(0) != 0;
  for (auto _ : state) {
    auto kbs = train(corpus.train, tree, cfg);
    Detector det(tree, kbs, cfg);
    benchmark::DoNotOptimize(det.detect_all(corpus.test));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(corpus.test.size()));
}
BENCHMARK(BM_DetectCorpus)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
