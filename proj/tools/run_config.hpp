#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "relens/backends.hpp"
#include "relens/decode.hpp"
#include "relens/fusion.hpp"
#include "relens/vocab.hpp"

namespace relens::cli {

struct BackendSpec {
  std::string kind;  // ngram | table | remote
  // ngram
  std::filesystem::path corpus;
  int order = 4;
  double delta = 0.01;
  // table
  std::filesystem::path table;
  // remote
  std::string transport = "stdio";  // stdio | socket
  std::vector<std::string> command;
  std::string endpoint;
  double timeout_s = 30.0;
};

struct ModelSpec {
  std::string name;
  std::filesystem::path vocab;
  std::optional<MarkerConvention> convention;  // set: vocab is a raw token list
  std::filesystem::path embeddings;
  BackendSpec backend;
};

struct RunConfig {
  std::filesystem::path base_dir;
  std::vector<ModelSpec> models;
  std::string anchors = "full";
  EnsembleConfig fusion;
  std::string main = "auto";
  StopConditions stop;
  std::optional<std::filesystem::path> dev;
  std::optional<std::filesystem::path> test;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "out";
};

struct Overrides {
  std::optional<std::string> out;
  std::optional<double> eta;
  std::optional<int> steps;
  std::optional<std::string> anchors;
  std::optional<std::string> main;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_tokens;
  std::optional<std::string> dataset;
};

// Parses, applies flag overrides and validates. Throws ConfigError listing
// every problem found.
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides);

// Human-readable execution plan for --dry-run.
std::string describe_plan(const RunConfig& config, const std::string& command);

// Loads vocabulary, embeddings and backend. Remote backends connect here.
Model load_model(const ModelSpec& spec);

std::vector<Model> load_models(const RunConfig& config);

}  // namespace relens::cli
