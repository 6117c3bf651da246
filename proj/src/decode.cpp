#include "relens/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <numeric>

#include <json.hpp>

#include "relens/error.hpp"

namespace relens {

namespace {

// Position of the earliest stop surface in `generated`, or npos.
std::size_t find_stop(std::string_view generated, const std::vector<std::string>& stops) {
  std::size_t first = std::string_view::npos;
  for (const auto& s : stops) {
    if (s.empty()) continue;
    first = std::min(first, generated.find(s));
  }
  return first;
}

ModelTop top_entries(const std::string& name, std::span<const double> p, std::size_t k) {
  std::vector<TokenId> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, p.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  ModelTop top{name, {}, {}};
  for (std::size_t i = 0; i < k; ++i) {
    top.ids.push_back(order[i]);
    top.probs.push_back(p[order[i]]);
  }
  return top;
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

EnsembleSession::EnsembleSession(std::vector<SessionMember> members, std::size_t main_index,
                                 EnsembleConfig config, StopConditions stop, MatrixForm form)
    : members_(std::move(members)),
      main_(main_index),
      config_(std::move(config)),
      stop_(std::move(stop)),
      form_(form) {
  if (members_.empty()) throw ArgumentError("ensemble session needs at least one model");
  if (main_ >= members_.size()) {
    throw ArgumentError("main index " + std::to_string(main_) + " out of range");
  }
  config_.validate(members_.size());
  weights_ = config_.resolved_weights(members_.size());
  const std::size_t anchors = members_.front().matrix ? members_.front().matrix->anchors : 0;
  for (const auto& m : members_) {
    const std::string& name = m.model.name;
    if (!m.model.vocab || !m.model.backend || !m.matrix) {
      throw ArgumentError("model '" + name + "' is missing a vocabulary, backend or matrix");
    }
    if (m.model.backend->vocab_size() != m.model.vocab->size()) {
      throw ArgumentError("model '" + name + "': backend and vocabulary sizes differ");
    }
    if (m.matrix->rows != m.model.vocab->size()) {
      throw ArgumentError("model '" + name + "': relative matrix rows != vocabulary size");
    }
    if (m.matrix->anchors != anchors) {
      throw ArgumentError("model '" + name + "': relative matrices use different anchor sets");
    }
    if (form_ == MatrixForm::normalized && !m.matrix->normalized) {
      throw ArgumentError("model '" + name + "': relative matrix is not normalized");
    }
    tokenizers_.emplace_back(*m.model.vocab);
  }
}

void EnsembleSession::reset(std::string_view prompt) {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (!tokenizers_[i].try_encode(prompt)) {
      throw ArgumentError("prompt is not tokenizable by model '" + members_[i].model.name + "'");
    }
  }
  text_.assign(prompt);
  prompt_size_ = text_.size();
  trace_.clear();
}

std::vector<TokenId> EnsembleSession::context(std::size_t member) const {
  auto ids = tokenizers_[member].try_encode(text_);
  if (!ids) {
    throw ArgumentError("running text is not tokenizable by model '" + members_[member].model.name +
                        "'");
  }
  return std::move(*ids);
}

void EnsembleSession::append(std::string_view surface) {
  text_.append(surface);
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (!tokenizers_[i].try_encode(text_)) {
      throw ArgumentError("emitted surface '" + display_surface(surface) +
                          "' leaves text untokenizable by model '" + members_[i].model.name + "'");
    }
  }
}

std::vector<AbsoluteDistribution> EnsembleSession::query_all() {
  const std::size_t n = members_.size();
  std::vector<std::vector<TokenId>> contexts(n);
  for (std::size_t i = 0; i < n; ++i) contexts[i] = context(i);

  // One task per distinct backend so no backend sees overlapping requests.
  std::map<const ModelBackend*, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[members_[i].model.backend.get()].push_back(i);

  std::vector<AbsoluteDistribution> out(n);
  auto run_group = [&](const std::vector<std::size_t>& idx) {
    for (std::size_t i : idx) {
      try {
        out[i] = members_[i].model.backend->next_distribution(contexts[i]);
      } catch (const std::exception& e) {
        throw BackendError("model '" + members_[i].model.name + "': " + e.what());
      }
      out[i].model_index = i;
    }
  };
  if (groups.size() == 1) {
    run_group(groups.begin()->second);
  } else {
    std::vector<std::future<void>> pending;
    for (const auto& [backend, idx] : groups) {
      pending.push_back(std::async(std::launch::async, run_group, std::cref(idx)));
    }
    for (auto& f : pending) f.wait();
    for (auto& f : pending) f.get();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (out[i].values.size() != members_[i].model.vocab->size()) {
      throw BackendError("model '" + members_[i].model.name + "' returned a distribution of length " +
                         std::to_string(out[i].values.size()));
    }
    try {
      check_distribution(out[i].values);
    } catch (const ArgumentError& e) {
      throw BackendError("model '" + members_[i].model.name + "': " + e.what());
    }
  }
  return out;
}

FusedStep EnsembleSession::fuse() {
  FusedStep step;
  step.inputs = query_all();
  std::vector<RelativeRepresentation> rs;
  rs.reserve(members_.size());
  for (std::size_t i = 0; i < members_.size(); ++i) {
    rs.push_back(to_relative(step.inputs[i].values, *members_[i].matrix, form_));
  }
  step.aggregated = aggregate(rs, weights_);
  SearchResult search =
      inverse_transform(step.aggregated, step.inputs[main_], *members_[main_].matrix, config_, form_);
  step.p_final = std::move(search.p);
  step.losses = std::move(search.losses);
  return step;
}

std::string EnsembleSession::ensemble_step() {
  FusedStep fused = fuse();
  const auto id = static_cast<TokenId>(argmax(fused.p_final.values));
  const std::string surface = members_[main_].model.vocab->surface(id);

  StepRecord rec;
  rec.step = trace_.size();
  rec.emitted = surface;
  rec.emitted_id = id;
  rec.loss0 = fused.losses.front();
  rec.lossT = fused.losses.back();
  for (double r : fused.aggregated) {
    if (r > 0.0) rec.relative_entropy -= r * std::log(r);
  }
  for (std::size_t i = 0; i < members_.size(); ++i) {
    rec.per_model_top.push_back(top_entries(members_[i].model.name, fused.inputs[i].values, top_k));
  }
  trace_.push_back(std::move(rec));

  append(surface);
  return surface;
}

Generation generate(EnsembleSession& session, std::string_view prompt) {
  session.reset(prompt);
  for (std::size_t t = 0; t < session.stop().max_tokens; ++t) {
    session.ensemble_step();
    if (find_stop(session.generated(), session.stop().stop_surfaces) != std::string_view::npos) break;
  }
  const std::string_view out = session.generated();
  return {std::string(out.substr(0, find_stop(out, session.stop().stop_surfaces))), session.trace()};
}

double score_option(EnsembleSession& session, std::string_view prompt, std::string_view option,
                    std::size_t* tokens) {
  const SessionMember& main = session.member(session.main_index());
  const Tokenizer tokenizer(*main.model.vocab);
  auto forced = tokenizer.try_encode(option);
  if (!forced) {
    throw ArgumentError("option '" + display_surface(option) + "' is not tokenizable by main model '" +
                        main.model.name + "'");
  }
  session.reset(prompt);
  double total = 0.0;
  for (TokenId id : *forced) {
    const FusedStep fused = session.fuse();
    total += std::log(std::max(fused.p_final.values[id], session.config().prob_floor));
    session.append(main.model.vocab->surface(id));
  }
  if (tokens) *tokens = forced->size();
  return total;
}

std::string greedy_generate(const Model& model, std::string_view prompt, const StopConditions& stop) {
  const Tokenizer tokenizer(*model.vocab);
  std::string text(prompt);
  for (std::size_t t = 0; t < stop.max_tokens; ++t) {
    const auto p = model.backend->next_distribution(tokenizer.encode(text)).values;
    text += model.vocab->surface(static_cast<TokenId>(argmax(p)));
    if (find_stop(std::string_view(text).substr(prompt.size()), stop.stop_surfaces) !=
        std::string_view::npos) {
      break;
    }
  }
  const std::string_view out = std::string_view(text).substr(prompt.size());
  return std::string(out.substr(0, find_stop(out, stop.stop_surfaces)));
}

void write_trace(const DecodeTrace& trace, std::ostream& out) {
  using nlohmann::ordered_json;
  for (const StepRecord& rec : trace) {
    ordered_json tops = ordered_json::array();
    for (const ModelTop& t : rec.per_model_top) {
      tops.push_back(ordered_json{{"model", t.model}, {"ids", t.ids}, {"probs", t.probs}});
    }
    ordered_json j{{"step", rec.step},
                   {"emitted", rec.emitted},
                   {"loss0", rec.loss0},
                   {"lossT", rec.lossT},
                   {"per_model_top", tops}};
    out << j.dump(-1, ' ', false, ordered_json::error_handler_t::replace) << '\n';
  }
}

void write_trace(const DecodeTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write trace " + path.string());
  write_trace(trace, out);
}

}  // namespace relens
