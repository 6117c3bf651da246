#include "relens/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "relens/error.hpp"

namespace relens {

namespace {

void require_form(const RelativeMatrix& m, MatrixForm accept, const char* op) {
  if (accept == MatrixForm::normalized && !m.normalized) {
    throw ArgumentError(std::string(op) + ": relative matrix must be row-normalized");
  }
}

void require_rows(std::span<const double> p, const RelativeMatrix& m, const char* op) {
  if (p.size() != m.rows) {
    throw ArgumentError(std::string(op) + ": distribution has " + std::to_string(p.size()) +
                        " entries, matrix has " + std::to_string(m.rows) + " rows");
  }
}

}  // namespace

void check_distribution(std::span<const double> p, double tolerance) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0) {
      throw ArgumentError("distribution entry " + std::to_string(i) + " is " + std::to_string(p[i]));
    }
    total += p[i];
  }
  if (std::abs(total - 1.0) > tolerance) {
    throw ArgumentError("distribution sums to " + std::to_string(total));
  }
}

void EnsembleConfig::validate(std::size_t model_count) const {
  std::vector<std::string> problems;
  if (!(eta >= 0.0) || !std::isfinite(eta)) problems.push_back("eta must be >= 0");
  if (steps < 0) problems.push_back("steps must be >= 0");
  if (!(prob_floor > 0.0)) problems.push_back("prob_floor must be > 0");
  if (!(early_stop_loss >= 0.0)) problems.push_back("early_stop_loss must be >= 0");
  if (!weights.empty()) {
    if (weights.size() != model_count) {
      problems.push_back("weights has " + std::to_string(weights.size()) + " entries for " +
                         std::to_string(model_count) + " models");
    }
    double total = 0.0;
    bool negative = false;
    for (double w : weights) {
      negative |= !(w >= 0.0);
      total += w;
    }
    if (negative) problems.push_back("weights must be non-negative");
    if (std::abs(total - 1.0) > 1e-9) problems.push_back("weights must sum to 1");
  }
  if (!main.automatic && main.index >= model_count) {
    problems.push_back("main model index " + std::to_string(main.index) + " >= model count " +
                       std::to_string(model_count));
  }
  if (!problems.empty()) {
    std::string msg = "invalid ensemble config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

std::vector<double> EnsembleConfig::resolved_weights(std::size_t model_count) const {
  if (!weights.empty()) return weights;
  return std::vector<double>(model_count, 1.0 / static_cast<double>(model_count));
}

RelativeRepresentation to_relative(std::span<const double> p, const RelativeMatrix& m,
                                   MatrixForm accept) {
  require_form(m, accept, "to_relative");
  require_rows(p, m, "to_relative");
  RelativeRepresentation r(m.anchors, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double pi = p[i];
    if (pi == 0.0) continue;
    const auto row = m.row(i);
    for (std::size_t k = 0; k < m.anchors; ++k) r[k] += pi * static_cast<double>(row[k]);
  }
  return r;
}

RelativeRepresentation aggregate(std::span<const RelativeRepresentation> rs,
                                 std::span<const double> weights) {
  if (rs.empty()) throw ArgumentError("aggregate: no representations");
  if (weights.size() != rs.size()) {
    throw ArgumentError("aggregate: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(rs.size()) + " representations");
  }
  RelativeRepresentation out(rs.front().size(), 0.0);
  for (std::size_t m = 0; m < rs.size(); ++m) {
    if (rs[m].size() != out.size()) throw ArgumentError("aggregate: representation lengths differ");
    if (weights[m] == 0.0) continue;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weights[m] * rs[m][k];
  }
  return out;
}

double kl_loss(std::span<const double> target, std::span<const double> candidate, double floor) {
  if (target.size() != candidate.size()) {
    throw ArgumentError("kl_loss: lengths " + std::to_string(target.size()) + " and " +
                        std::to_string(candidate.size()));
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] < floor) continue;
    loss += target[k] * std::log(target[k] / std::max(candidate[k], floor));
  }
  return loss;
}

std::vector<double> kl_gradient(std::span<const double> target, std::span<const double> p,
                                const RelativeMatrix& m, double floor, MatrixForm accept) {
  require_form(m, accept, "kl_gradient");
  require_rows(p, m, "kl_gradient");
  if (target.size() != m.anchors) throw ArgumentError("kl_gradient: target length != anchor count");
  const RelativeRepresentation current = to_relative(p, m, MatrixForm::any);
  // ratio[k] = target_k / max(current_k, floor); zero where the target is below the floor.
  std::vector<double> ratio(m.anchors, 0.0);
  for (std::size_t k = 0; k < m.anchors; ++k) {
    if (target[k] >= floor) ratio[k] = target[k] / std::max(current[k], floor);
  }
  std::vector<double> grad(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto row = m.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < m.anchors; ++k) acc += ratio[k] * static_cast<double>(row[k]);
    grad[i] = -acc;
  }
  return grad;
}

SearchResult inverse_transform(std::span<const double> target, const AbsoluteDistribution& init,
                               const RelativeMatrix& m, const EnsembleConfig& cfg,
                               MatrixForm accept) {
  require_form(m, accept, "inverse_transform");
  require_rows(init.values, m, "inverse_transform");
  if (target.size() != m.anchors) {
    throw ArgumentError("inverse_transform: target length != anchor count");
  }
  SearchResult result{init, {}};
  std::vector<double>& p = result.p.values;
  const double n = static_cast<double>(p.size());
  auto loss_at = [&] { return kl_loss(target, to_relative(p, m, MatrixForm::any), cfg.prob_floor); };

  for (int step = 0; step < cfg.steps; ++step) {
    const double loss = loss_at();
    if (!std::isfinite(loss)) throw NumericError("search loss is not finite", step);
    result.losses.push_back(loss);
    if (loss < cfg.early_stop_loss) return result;
    if (cfg.eta == 0.0) continue;

    const auto grad = kl_gradient(target, p, m, cfg.prob_floor, MatrixForm::any);
    // Step along the gradient's component inside the simplex plane; the
    // constant component only changes total mass.
    const double mean_grad = std::accumulate(grad.begin(), grad.end(), 0.0) / n;
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::max(p[i] - cfg.eta * (grad[i] - mean_grad), cfg.prob_floor);
      total += p[i];
    }
    if (!std::isfinite(total)) throw NumericError("search iterate is not finite", step);
    for (double& v : p) v /= total;
  }
  const double final_loss = loss_at();
  if (!std::isfinite(final_loss)) throw NumericError("search loss is not finite", cfg.steps);
  result.losses.push_back(final_loss);
  return result;
}

}  // namespace relens
