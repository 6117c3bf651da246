#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "relens/backends.hpp"
#include "relens/fusion.hpp"
#include "relens/relspace.hpp"

namespace relens {

struct StopConditions {
  std::size_t max_tokens = 32;
  std::vector<std::string> stop_surfaces;  // generation ends before the first occurrence
};

struct SessionMember {
  Model model;
  std::shared_ptr<const RelativeMatrix> matrix;
};

struct ModelTop {
  std::string model;
  std::vector<TokenId> ids;
  std::vector<double> probs;
};

struct StepRecord {
  std::size_t step = 0;
  std::string emitted;
  TokenId emitted_id = 0;
  double loss0 = 0.0;
  double lossT = 0.0;
  double relative_entropy = 0.0;  // entropy of the aggregated representation
  std::vector<ModelTop> per_model_top;
};

using DecodeTrace = std::vector<StepRecord>;

// Result of fusing all members' next-token distributions for the current text.
struct FusedStep {
  AbsoluteDistribution p_final;  // in the main model's vocabulary
  std::vector<AbsoluteDistribution> inputs;
  RelativeRepresentation aggregated;
  std::vector<double> losses;
};

// N-model ensemble decoding state. Every member sees the same running text;
// each re-tokenizes it with its own vocabulary before every step.
class EnsembleSession {
 public:
  EnsembleSession(std::vector<SessionMember> members, std::size_t main_index, EnsembleConfig config,
                  StopConditions stop, MatrixForm form = MatrixForm::normalized);

  // Starts over from `prompt`; throws if some member cannot tokenize it.
  void reset(std::string_view prompt);

  FusedStep fuse();
  // Emits the argmax of the fused distribution (lowest id on ties) and
  // appends its surface to the running text.
  std::string ensemble_step();
  // Appends a surface without querying anyone (teacher forcing).
  void append(std::string_view surface);

  const std::string& text() const { return text_; }
  std::string_view generated() const { return std::string_view(text_).substr(prompt_size_); }
  const DecodeTrace& trace() const { return trace_; }
  std::vector<TokenId> context(std::size_t member) const;

  std::size_t size() const { return members_.size(); }
  std::size_t main_index() const { return main_; }
  const SessionMember& member(std::size_t i) const { return members_[i]; }
  const EnsembleConfig& config() const { return config_; }
  EnsembleConfig& config() { return config_; }
  const StopConditions& stop() const { return stop_; }
  StopConditions& stop() { return stop_; }

  std::size_t top_k = 5;

 private:
  std::vector<AbsoluteDistribution> query_all();

  std::vector<SessionMember> members_;
  std::vector<Tokenizer> tokenizers_;
  std::size_t main_;
  EnsembleConfig config_;
  std::vector<double> weights_;
  StopConditions stop_;
  MatrixForm form_;
  std::string text_;
  std::size_t prompt_size_ = 0;
  DecodeTrace trace_;
};

struct Generation {
  std::string text;
  DecodeTrace trace;
};

// Runs ensemble_step until a stop surface appears or max_tokens is reached.
Generation generate(EnsembleSession& session, std::string_view prompt);

// Teacher-forces `option` (tokenized by the main model) after `prompt` and
// sums log p_final of each forced token. `tokens` receives the option length.
double score_option(EnsembleSession& session, std::string_view prompt, std::string_view option,
                    std::size_t* tokens = nullptr);

// Plain greedy decoding with a single model, bypassing the fusion path.
std::string greedy_generate(const Model& model, std::string_view prompt, const StopConditions& stop);

// Argmax with ties to the lowest index.
std::size_t argmax(std::span<const double> values);

void write_trace(const DecodeTrace& trace, std::ostream& out);
void write_trace(const DecodeTrace& trace, const std::filesystem::path& path);

}  // namespace relens
