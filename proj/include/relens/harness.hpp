#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "relens/decode.hpp"
#include "relens/vocab.hpp"

namespace relens {

struct EvalItem {
  enum class Kind { exact_match, multiple_choice };
  Kind kind = Kind::exact_match;
  std::string prompt;
  std::string answer;                // exact match
  std::vector<std::string> options;  // multiple choice
  std::size_t gold = 0;
};

// JSON-lines: {"kind":"em","prompt","answer"} | {"kind":"mc","prompt","options","gold"}.
std::vector<EvalItem> read_dataset(const std::filesystem::path& path);
void write_dataset(std::span<const EvalItem> items, const std::filesystem::path& path);

// Models plus the anchor set and relative matrices built for them.
struct EnsembleSetup {
  std::vector<Model> models;
  std::set<std::string> common;
  AnchorSet anchors;
  std::vector<std::shared_ptr<const RelativeMatrix>> raw;
  std::vector<std::shared_ptr<const RelativeMatrix>> normalized;
  EnsembleConfig config;
  StopConditions stop;
  std::uint64_t seed = 0;
};

// With a single model the anchor set is that model's whole vocabulary.
EnsembleSetup build_setup(std::vector<Model> models, const AnchorStrategy& strategy,
                          EnsembleConfig config, StopConditions stop, std::uint64_t seed);
// Same models and common set, new anchors and matrices.
EnsembleSetup rebuild_anchors(const EnsembleSetup& setup, const AnchorStrategy& strategy);

EnsembleSession make_session(const EnsembleSetup& setup, std::size_t main_index,
                             MatrixForm form = MatrixForm::normalized);
// One model alone, decoded through the same session machinery.
EnsembleSession make_single_session(const EnsembleSetup& setup, std::size_t model_index);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<bool> correct;  // in item order
  std::size_t failures = 0;   // items whose decoding threw
};

bool item_correct(EnsembleSession& session, const EvalItem& item);
EvalResult evaluate(EnsembleSession& session, std::span<const EvalItem> items);

struct MainSelection {
  std::size_t index = 0;
  std::vector<double> accuracies;  // per model, on dev
};
MainSelection select_main_model(const EnsembleSetup& setup, std::span<const EvalItem> dev);

std::vector<double> default_eta_grid();  // 0.00, 0.05, ..., 0.30

struct SweepPoint {
  double eta = 0.0;
  int steps = 0;
  std::size_t anchors = 0;
  double accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::size_t best = 0;  // index into points; ties -> first
};

SweepResult sweep_eta(const EnsembleSetup& setup, std::size_t main_index,
                      std::span<const EvalItem> dev, std::span<const double> grid);
SweepResult sweep_steps(const EnsembleSetup& setup, std::size_t main_index,
                        std::span<const EvalItem> dev, std::span<const int> grid);
// Anchor subsets sampled with `seed`; a final point for the full common set.
SweepResult sweep_anchor_count(const EnsembleSetup& setup, std::size_t main_index,
                               std::span<const EvalItem> dev, std::span<const std::size_t> counts,
                               std::uint64_t seed);

struct AblationResult {
  double raw = 0.0;
  double normalized = 0.0;
};
AblationResult ablate_normalization(const EnsembleSetup& setup, std::size_t main_index,
                                    std::span<const EvalItem> dev);

struct ConsistencyGap {
  double shared_mean = 0.0;
  double random_mean = 0.0;
  std::size_t shared = 0;
};
// Mean relative-row cosine over same-surface token pairs versus `random_pairs`
// mismatched pairs drawn with `seed`.
ConsistencyGap consistency_gap(const RelativeMatrix& a, const RelativeMatrix& b,
                               std::span<const std::pair<TokenId, TokenId>> shared,
                               std::size_t random_pairs, std::uint64_t seed);
// Pairs (id in a, id in b) for every surface common to both vocabularies.
std::vector<std::pair<TokenId, TokenId>> shared_token_pairs(const Vocabulary& a, const Vocabulary& b);

struct ReportRow {
  std::string condition;
  std::string split;
  std::string model;
  double accuracy = 0.0;
  std::optional<double> delta;
  double eta = 0.0;
  int steps = 0;
  std::size_t anchors = 0;
  std::uint64_t seed = 0;
};

// CSV with header condition,split,model,accuracy,delta,eta,steps,anchors,seed.
struct RunReport {
  std::vector<ReportRow> rows;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

// Individual and ensemble accuracy on dev and test; deltas are ensemble
// minus best individual on the same split.
RunReport evaluation_report(const EnsembleSetup& setup, std::size_t main_index,
                            std::span<const EvalItem> dev, std::span<const EvalItem> test);
RunReport sweep_report(const std::string& condition, const EnsembleSetup& setup,
                       std::size_t main_index, const SweepResult& sweep,
                       std::span<const EvalItem> dev);

}  // namespace relens
