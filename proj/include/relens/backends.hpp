#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relens/fusion.hpp"
#include "relens/relspace.hpp"
#include "relens/vocab.hpp"

namespace relens {

// A source of next-token distributions over one vocabulary. One request in
// flight per instance; distinct instances may be queried in parallel.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual const std::string& name() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual AbsoluteDistribution next_distribution(std::span<const TokenId> context) = 0;
};

// Everything the ensemble needs to know about one participant.
struct Model {
  std::string name;
  std::shared_ptr<const Vocabulary> vocab;
  std::shared_ptr<const EmbeddingTable> embeddings;
  std::shared_ptr<ModelBackend> backend;
};

// Explicit context -> distribution map with a fallback for unknown contexts.
class TableModel : public ModelBackend {
 public:
  TableModel(std::string name, std::size_t vocab_size, std::vector<double> fallback);

  static TableModel uniform(std::string name, std::size_t vocab_size);

  void set(std::vector<TokenId> context, std::vector<double> distribution);
  std::size_t entries() const { return table_.size(); }

  const std::string& name() const override { return name_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  AbsoluteDistribution next_distribution(std::span<const TokenId> context) override;

  // {"name", "vocab_size", "default": [...], "entries": [{"context": [...], "probs": [...]}]}
  static TableModel read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

 private:
  std::string name_;
  std::size_t vocab_size_;
  std::vector<double> fallback_;
  std::map<std::vector<TokenId>, std::vector<double>> table_;
};

// Passes requests through and records every answer, so a decode can be
// replayed later from TableModels alone.
class RecordingBackend : public ModelBackend {
 public:
  explicit RecordingBackend(std::shared_ptr<ModelBackend> inner);

  const std::string& name() const override { return inner_->name(); }
  std::size_t vocab_size() const override { return inner_->vocab_size(); }
  AbsoluteDistribution next_distribution(std::span<const TokenId> context) override;

  const TableModel& recording() const { return recording_; }

 private:
  std::shared_ptr<ModelBackend> inner_;
  TableModel recording_;
};

struct NGramOptions {
  int order = 4;
  double delta = 0.01;  // additive smoothing
};

// Additively smoothed n-gram model with backoff to the longest context seen
// in training.
class NGramModel : public ModelBackend {
 public:
  NGramModel(std::string name, std::size_t vocab_size, NGramOptions options);

  void observe(std::span<const TokenId> sequence);

  // P(.|context) using the longest suffix of `context` (at most order-1 tokens)
  // with a non-zero count.
  std::vector<double> conditional(std::span<const TokenId> context) const;
  // Length of the suffix conditional() would use.
  std::size_t matched_context(std::span<const TokenId> context) const;

  const std::string& name() const override { return name_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  AbsoluteDistribution next_distribution(std::span<const TokenId> context) override;

  const NGramOptions& options() const { return options_; }
  // Every context seen in training, for exhaustive checks.
  std::vector<std::vector<TokenId>> contexts() const;

 private:
  struct Counts {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> next;
  };
  struct KeyHash {
    std::size_t operator()(const std::vector<TokenId>& key) const;
  };

  std::string name_;
  std::size_t vocab_size_;
  NGramOptions options_;
  std::unordered_map<std::vector<TokenId>, Counts, KeyHash> counts_;
};

NGramModel train_ngram(std::string name, std::span<const std::vector<TokenId>> corpus,
                       std::size_t vocab_size, NGramOptions options);

}  // namespace relens
