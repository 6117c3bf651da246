#pragma once

// Desk-scale stand-ins for the ensembled models: a synthetic fact language,
// per-model corpora with partial knowledge, small BPE vocabularies, n-gram
// backends and PPMI embeddings.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "relens/backends.hpp"
#include "relens/embeddings.hpp"
#include "relens/harness.hpp"

namespace relens {

// Byte-pair merges learned over space-prefixed words. The vocabulary holds
// every byte of `alphabet` followed by the merged symbols in merge order.
Vocabulary train_bpe(std::string_view corpus, std::size_t merges, std::string_view alphabet);

// Inverse of canonicalize for toy vocabularies: renders canonical bytes in a
// tokenizer's marker convention.
std::string to_convention(std::string_view canonical, MarkerConvention convention);

// One token-id sequence per non-empty line.
std::vector<std::vector<TokenId>> tokenize_corpus(const Tokenizer& tokenizer, std::string_view corpus);

struct ToyModelSpec {
  std::string name;
  std::size_t merges = 60;
  double coverage = 0.6;  // share of facts the model sees
  double noise = 0.1;     // share of unseen facts replaced by a wrong value
  MarkerConvention convention = MarkerConvention::plain;
};

struct ToyOptions {
  std::uint64_t seed = 7;
  std::size_t entities = 100;
  std::size_t repeats = 3;
  std::size_t filler_sentences = 300;
  std::size_t outlier_words = 0;  // one-off junk words that become outlier tokens
  std::size_t dev_items = 100;
  std::size_t test_items = 100;
  std::vector<ToyModelSpec> models = {
      {"alpha", 40, 0.6, 0.1, MarkerConvention::sentencepiece},
      {"beta", 80, 0.6, 0.1, MarkerConvention::byte_bpe},
      {"gamma", 60, 0.5, 0.1, MarkerConvention::plain},
  };
};

struct ToyModelData {
  std::string name;
  MarkerConvention convention = MarkerConvention::plain;
  Vocabulary vocab;
  std::string corpus;  // one sentence per line
};

struct ToyBenchmark {
  std::vector<ToyModelData> models;
  std::vector<EvalItem> dev;
  std::vector<EvalItem> test;
};

ToyBenchmark make_toy_benchmark(const ToyOptions& options);

struct ToyTraining {
  NGramOptions ngram{8, 0.01};
  EmbeddingOptions embedding{2, 24, 0, 4, 10};
};

// n-gram backend and embedding table trained on the model's own tokenization of its corpus.
Model build_toy_model(const std::string& name, const Vocabulary& vocab, std::string_view corpus,
                      const ToyTraining& training);

// Stop surfaces used by the toy benchmark.
StopConditions toy_stop_conditions();

}  // namespace relens
