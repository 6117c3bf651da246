#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "relens/relspace.hpp"

namespace relens {

// Probability vector over one model's vocabulary.
struct AbsoluteDistribution {
  std::vector<double> values;
  std::size_t model_index = 0;
};

// Vector over the anchor set.
using RelativeRepresentation = std::vector<double>;

// Throws ArgumentError unless `p` is non-negative, finite and sums to 1 within `tolerance`.
void check_distribution(std::span<const double> p, double tolerance = 1e-6);

struct MainPolicy {
  bool automatic = false;  // choose by dev accuracy (harness)
  std::size_t index = 0;

  static MainPolicy fixed(std::size_t i) { return {false, i}; }
  static MainPolicy auto_dev() { return {true, 0}; }
};

struct EnsembleConfig {
  double eta = 0.1;
  int steps = 5;
  std::vector<double> weights;  // empty means uniform over models
  MainPolicy main;
  double prob_floor = 1e-12;
  double early_stop_loss = 1e-9;

  // Throws ConfigError listing every invalid field.
  void validate(std::size_t model_count) const;
  std::vector<double> resolved_weights(std::size_t model_count) const;
};

// Which matrix forms an operation accepts. Only the normalization ablation
// feeds raw cosine matrices through the fusion path.
enum class MatrixForm { normalized, any };

RelativeRepresentation to_relative(std::span<const double> p, const RelativeMatrix& m,
                                   MatrixForm accept = MatrixForm::normalized);
inline RelativeRepresentation to_relative(const AbsoluteDistribution& p, const RelativeMatrix& m,
                                          MatrixForm accept = MatrixForm::normalized) {
  return to_relative(p.values, m, accept);
}

RelativeRepresentation aggregate(std::span<const RelativeRepresentation> rs,
                                 std::span<const double> weights);

// KL(target || candidate) with the candidate floored at `floor`; target
// entries below `floor` contribute nothing.
double kl_loss(std::span<const double> target, std::span<const double> candidate,
               double floor = 1e-12);

// d kl_loss(target, p^T M) / dp, evaluated at p.
std::vector<double> kl_gradient(std::span<const double> target, std::span<const double> p,
                                const RelativeMatrix& m, double floor = 1e-12,
                                MatrixForm accept = MatrixForm::normalized);

struct SearchResult {
  AbsoluteDistribution p;
  std::vector<double> losses;  // before each step, then after the last
};

// Gradient search from `init` for a distribution whose relative image matches `target`.
// Throws NumericError (carrying the step index) on NaN/Inf.
SearchResult inverse_transform(std::span<const double> target, const AbsoluteDistribution& init,
                               const RelativeMatrix& m, const EnsembleConfig& cfg,
                               MatrixForm accept = MatrixForm::normalized);

}  // namespace relens
