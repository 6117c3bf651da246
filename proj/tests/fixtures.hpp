#pragma once

// Small models shared by the decode, harness and acceptance tests.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "relens/backends.hpp"
#include "relens/toy.hpp"
#include "relens/vocab.hpp"

namespace fixture {

// Row i = unit vector i plus a small shared component, so every relative row
// is distinct and well conditioned.
inline std::shared_ptr<const relens::EmbeddingTable> spread_embeddings(std::size_t n) {
  std::vector<float> v(n * n, 0.1f);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0f;
  return std::make_shared<const relens::EmbeddingTable>(n, n, std::move(v));
}

inline relens::Model make_model(const std::string& name, const std::vector<std::string>& surfaces,
                                std::shared_ptr<relens::ModelBackend> backend,
                                std::shared_ptr<const relens::EmbeddingTable> embeddings = nullptr) {
  auto vocab = std::make_shared<const relens::Vocabulary>(relens::Vocabulary::from_surfaces(surfaces));
  if (!embeddings) embeddings = spread_embeddings(surfaces.size());
  return {name, std::move(vocab), std::move(embeddings), std::move(backend)};
}

inline std::vector<double> one_hot(std::size_t n, std::size_t at) {
  std::vector<double> p(n, 0.0);
  p[at] = 1.0;
  return p;
}

struct ToyWorld {
  relens::ToyBenchmark bench;
  std::vector<relens::Model> models;
};

inline ToyWorld make_toy_world(const relens::ToyOptions& options = {}, const relens::ToyTraining& training = {}) {
  ToyWorld w;
  w.bench = relens::make_toy_benchmark(options);
  for (const auto& m : w.bench.models) w.models.push_back(relens::build_toy_model(m.name, m.vocab, m.corpus, training));
  return w;
}

// Built once per process.
inline const ToyWorld& toy_world() {
  static const ToyWorld world = make_toy_world();
  return world;
}

// A model as written by `relens make-toy`, rebuilt in process.
inline relens::Model dir_model(const std::filesystem::path& dir, const std::string& name);

inline std::filesystem::path golden(const std::string& name) { return std::filesystem::path(RELENS_GOLDEN_DIR) / name; }

inline bool recording_golden() { return std::getenv("RELENS_RECORD_GOLDEN") != nullptr; }

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Compares `actual` with the golden file, or rewrites the file when recording.
inline bool matches_golden(const std::string& name, const std::string& actual) {
  const auto path = golden(name);
  if (recording_golden()) {
    std::ofstream(path, std::ios::binary) << actual;
    return true;
  }
  return std::filesystem::exists(path) && slurp(path) == actual;
}

inline relens::Model dir_model(const std::filesystem::path& dir, const std::string& name) {
  using namespace relens;
  auto vocab = std::make_shared<const Vocabulary>(read_vocabulary(dir / (name + ".vocab.jsonl")));
  auto emb = std::make_shared<const EmbeddingTable>(read_embeddings(dir / (name + ".dpe")));
  const auto seqs = tokenize_corpus(Tokenizer(*vocab), slurp(dir / (name + ".corpus.txt")));
  const ToyTraining training;
  auto backend = std::make_shared<NGramModel>(train_ngram(name, seqs, vocab->size(), training.ngram));
  return {name, vocab, emb, backend};
}

}  // namespace fixture
