#include "relens/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <json.hpp>

#include "relens/error.hpp"
#include "relens/log.hpp"

namespace relens {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string ensemble_label(const EnsembleSetup& setup, std::size_t main_index) {
  return "ensemble(main=" + setup.models[main_index].name + ")";
}

std::vector<double> individual_accuracies(const EnsembleSetup& setup, std::span<const EvalItem> items) {
  std::vector<double> acc;
  for (std::size_t m = 0; m < setup.models.size(); ++m) {
    EnsembleSession session = make_single_session(setup, m);
    acc.push_back(evaluate(session, items).accuracy);
  }
  return acc;
}

std::size_t best_point(const std::vector<SweepPoint>& points) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].accuracy > points[best].accuracy) best = i;
  }
  return best;
}

}  // namespace

std::vector<EvalItem> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::vector<EvalItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      EvalItem item;
      item.prompt = j.at("prompt").get<std::string>();
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "em") {
        item.kind = EvalItem::Kind::exact_match;
        item.answer = j.at("answer").get<std::string>();
      } else if (kind == "mc") {
        item.kind = EvalItem::Kind::multiple_choice;
        item.options = j.at("options").get<std::vector<std::string>>();
        const auto gold = j.at("gold").get<long long>();
        if (item.options.size() < 2) throw ConfigError(where + ": MC item needs >= 2 options");
        if (gold < 0 || static_cast<std::size_t>(gold) >= item.options.size()) {
          throw ConfigError(where + ": gold index out of range");
        }
        item.gold = static_cast<std::size_t>(gold);
      } else {
        throw ConfigError(where + ": unknown item kind '" + kind + "'");
      }
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return items;
}

void write_dataset(std::span<const EvalItem> items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  for (const EvalItem& item : items) {
    nlohmann::ordered_json j;
    if (item.kind == EvalItem::Kind::exact_match) {
      j = {{"kind", "em"}, {"prompt", item.prompt}, {"answer", item.answer}};
    } else {
      j = {{"kind", "mc"}, {"prompt", item.prompt}, {"options", item.options}, {"gold", item.gold}};
    }
    out << j.dump() << '\n';
  }
}

EnsembleSetup build_setup(std::vector<Model> models, const AnchorStrategy& strategy,
                          EnsembleConfig config, StopConditions stop, std::uint64_t seed) {
  if (models.empty()) throw ArgumentError("setup needs at least one model");
  EnsembleSetup setup;
  setup.models = std::move(models);
  setup.config = std::move(config);
  setup.stop = std::move(stop);
  setup.seed = seed;
  std::vector<const Vocabulary*> vocabs;
  for (const Model& m : setup.models) vocabs.push_back(m.vocab.get());
  setup.common = vocabs.size() == 1 ? vocabs.front()->surfaces() : common_tokens(vocabs);
  return rebuild_anchors(setup, strategy);
}

EnsembleSetup rebuild_anchors(const EnsembleSetup& base, const AnchorStrategy& strategy) {
  EnsembleSetup setup = base;
  std::vector<const Vocabulary*> vocabs;
  for (const Model& m : setup.models) vocabs.push_back(m.vocab.get());
  setup.anchors = select_anchors(setup.common, strategy, vocabs);
  setup.raw.clear();
  setup.normalized.clear();
  for (std::size_t m = 0; m < setup.models.size(); ++m) {
    auto raw = std::make_shared<RelativeMatrix>(
        build_relative_matrix(*setup.models[m].embeddings, setup.anchors, m));
    setup.normalized.push_back(std::make_shared<RelativeMatrix>(normalize_rows(*raw)));
    setup.raw.push_back(std::move(raw));
  }
  return setup;
}

EnsembleSession make_session(const EnsembleSetup& setup, std::size_t main_index, MatrixForm form) {
  std::vector<SessionMember> members;
  const auto& matrices = form == MatrixForm::normalized ? setup.normalized : setup.raw;
  for (std::size_t m = 0; m < setup.models.size(); ++m) {
    members.push_back({setup.models[m], matrices[m]});
  }
  EnsembleConfig cfg = setup.config;
  cfg.main = MainPolicy::fixed(main_index);
  return EnsembleSession(std::move(members), main_index, std::move(cfg), setup.stop, form);
}

EnsembleSession make_single_session(const EnsembleSetup& setup, std::size_t model_index) {
  if (model_index >= setup.models.size()) throw ArgumentError("model index out of range");
  EnsembleConfig cfg = setup.config;
  cfg.weights.clear();
  cfg.main = MainPolicy::fixed(0);
  return EnsembleSession({{setup.models[model_index], setup.normalized[model_index]}}, 0,
                         std::move(cfg), setup.stop);
}

bool item_correct(EnsembleSession& session, const EvalItem& item) {
  if (item.kind == EvalItem::Kind::exact_match) {
    return trim(generate(session, item.prompt).text) == item.answer;
  }
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < item.options.size(); ++o) {
    std::size_t length = 0;
    const double total = score_option(session, item.prompt, item.options[o], &length);
    const double score = length ? total / static_cast<double>(length) : total;
    if (score > best_score) {
      best_score = score;
      best = o;
    }
  }
  return best == item.gold;
}

EvalResult evaluate(EnsembleSession& session, std::span<const EvalItem> items) {
  if (items.empty()) throw ArgumentError("evaluate: no items");
  EvalResult result;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    bool ok = false;
    try {
      ok = item_correct(session, items[i]);
    } catch (const std::exception& e) {
      ++result.failures;
      logger().warn("item {} failed: {}", i, e.what());
    }
    result.correct.push_back(ok);
    hits += ok;
  }
  result.accuracy = static_cast<double>(hits) / static_cast<double>(items.size());
  return result;
}

MainSelection select_main_model(const EnsembleSetup& setup, std::span<const EvalItem> dev) {
  MainSelection sel;
  sel.accuracies = individual_accuracies(setup, dev);
  sel.index = argmax(sel.accuracies);
  return sel;
}

std::vector<double> default_eta_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 6; ++k) grid.push_back(k * 0.05);
  return grid;
}

SweepResult sweep_eta(const EnsembleSetup& setup, std::size_t main_index,
                      std::span<const EvalItem> dev, std::span<const double> grid) {
  if (grid.empty()) throw ArgumentError("eta grid is empty");
  SweepResult result;
  for (double eta : grid) {
    if (!(eta >= 0.0)) throw ArgumentError("eta grid values must be >= 0");
    EnsembleSetup variant = setup;
    variant.config.eta = eta;
    EnsembleSession session = make_session(variant, main_index);
    result.points.push_back({eta, variant.config.steps, setup.anchors.size(),
                             evaluate(session, dev).accuracy});
  }
  result.best = best_point(result.points);
  return result;
}

SweepResult sweep_steps(const EnsembleSetup& setup, std::size_t main_index,
                        std::span<const EvalItem> dev, std::span<const int> grid) {
  if (grid.empty()) throw ArgumentError("step grid is empty");
  SweepResult result;
  for (int steps : grid) {
    EnsembleSetup variant = setup;
    variant.config.steps = steps;
    EnsembleSession session = make_session(variant, main_index);
    result.points.push_back({variant.config.eta, steps, setup.anchors.size(),
                             evaluate(session, dev).accuracy});
  }
  result.best = best_point(result.points);
  return result;
}

SweepResult sweep_anchor_count(const EnsembleSetup& setup, std::size_t main_index,
                               std::span<const EvalItem> dev, std::span<const std::size_t> counts,
                               std::uint64_t seed) {
  for (std::size_t k : counts) {
    if (k < 1 || k > setup.common.size()) {
      throw ArgumentError("anchor count " + std::to_string(k) + " outside [1, " +
                          std::to_string(setup.common.size()) + "]");
    }
  }
  SweepResult result;
  auto run = [&](const AnchorStrategy& strategy) {
    const EnsembleSetup variant = rebuild_anchors(setup, strategy);
    EnsembleSession session = make_session(variant, main_index);
    result.points.push_back({variant.config.eta, variant.config.steps, variant.anchors.size(),
                             evaluate(session, dev).accuracy});
  };
  for (std::size_t k : counts) run(AnchorStrategy::sample(k, seed));
  run(AnchorStrategy::full());
  result.best = best_point(result.points);
  return result;
}

AblationResult ablate_normalization(const EnsembleSetup& setup, std::size_t main_index,
                                    std::span<const EvalItem> dev) {
  AblationResult result;
  EnsembleSession raw = make_session(setup, main_index, MatrixForm::any);
  result.raw = evaluate(raw, dev).accuracy;
  EnsembleSession normalized = make_session(setup, main_index, MatrixForm::normalized);
  result.normalized = evaluate(normalized, dev).accuracy;
  return result;
}

std::vector<std::pair<TokenId, TokenId>> shared_token_pairs(const Vocabulary& a, const Vocabulary& b) {
  std::vector<std::pair<TokenId, TokenId>> pairs;
  for (const std::string& surface : a.surfaces()) {
    if (auto ib = b.find(surface)) pairs.emplace_back(*a.find(surface), *ib);
  }
  return pairs;
}

ConsistencyGap consistency_gap(const RelativeMatrix& a, const RelativeMatrix& b,
                               std::span<const std::pair<TokenId, TokenId>> shared,
                               std::size_t random_pairs, std::uint64_t seed) {
  if (shared.size() < 2) throw ArgumentError("consistency_gap needs at least 2 shared tokens");
  ConsistencyGap gap;
  gap.shared = shared.size();
  gap.shared_mean = consistency(a, b, shared).mean;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, shared.size() - 1);
  std::vector<std::pair<TokenId, TokenId>> mismatched;
  while (mismatched.size() < random_pairs) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    if (i != j) mismatched.emplace_back(shared[i].first, shared[j].second);
  }
  gap.random_mean = consistency(a, b, mismatched).mean;
  return gap;
}

void RunReport::write_csv(std::ostream& out) const {
  out << "condition,split,model,accuracy,delta,eta,steps,anchors,seed\n";
  for (const ReportRow& r : rows) {
    out << fmt::format("{},{},{},{:.4f},{},{:.2f},{},{},{}\n", r.condition, r.split, r.model,
                       r.accuracy, r.delta ? fmt::format("{:+.4f}", *r.delta) : std::string(),
                       r.eta, r.steps, r.anchors, r.seed);
  }
}

void RunReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write report " + path.string());
  write_csv(out);
}

RunReport evaluation_report(const EnsembleSetup& setup, std::size_t main_index,
                            std::span<const EvalItem> dev, std::span<const EvalItem> test) {
  RunReport report;
  const auto& cfg = setup.config;
  auto add_split = [&](const std::string& split, std::span<const EvalItem> items) {
    if (items.empty()) return;
    const auto individual = individual_accuracies(setup, items);
    for (std::size_t m = 0; m < setup.models.size(); ++m) {
      report.rows.push_back({"individual", split, setup.models[m].name, individual[m], std::nullopt,
                             cfg.eta, cfg.steps, setup.anchors.size(), setup.seed});
    }
    EnsembleSession session = make_session(setup, main_index);
    const double acc = evaluate(session, items).accuracy;
    const double best = *std::max_element(individual.begin(), individual.end());
    report.rows.push_back({"ensemble", split, ensemble_label(setup, main_index), acc, acc - best,
                           cfg.eta, cfg.steps, setup.anchors.size(), setup.seed});
  };
  add_split("dev", dev);
  add_split("test", test);
  return report;
}

RunReport sweep_report(const std::string& condition, const EnsembleSetup& setup,
                       std::size_t main_index, const SweepResult& sweep,
                       std::span<const EvalItem> dev) {
  RunReport report;
  const auto individual = individual_accuracies(setup, dev);
  const double best = *std::max_element(individual.begin(), individual.end());
  for (const SweepPoint& p : sweep.points) {
    report.rows.push_back({condition, "dev", ensemble_label(setup, main_index), p.accuracy,
                           p.accuracy - best, p.eta, p.steps, p.anchors, setup.seed});
  }
  return report;
}

}  // namespace relens
