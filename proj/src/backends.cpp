#include "relens/backends.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "relens/error.hpp"

namespace relens {

TableModel::TableModel(std::string name, std::size_t vocab_size, std::vector<double> fallback)
    : name_(std::move(name)), vocab_size_(vocab_size), fallback_(std::move(fallback)) {
  if (fallback_.size() != vocab_size_) throw ArgumentError("table model: default has wrong length");
  check_distribution(fallback_);
}

TableModel TableModel::uniform(std::string name, std::size_t vocab_size) {
  return TableModel(std::move(name), vocab_size,
                    std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)));
}

void TableModel::set(std::vector<TokenId> context, std::vector<double> distribution) {
  if (distribution.size() != vocab_size_) {
    throw ArgumentError("table model " + name_ + ": distribution has wrong length");
  }
  check_distribution(distribution);
  table_[std::move(context)] = std::move(distribution);
}

AbsoluteDistribution TableModel::next_distribution(std::span<const TokenId> context) {
  auto it = table_.find(std::vector<TokenId>(context.begin(), context.end()));
  return {it == table_.end() ? fallback_ : it->second, 0};
}

TableModel TableModel::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open table model " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    TableModel model(j.at("name").get<std::string>(), j.at("vocab_size").get<std::size_t>(),
                     j.at("default").get<std::vector<double>>());
    for (const auto& e : j.value("entries", nlohmann::json::array())) {
      model.set(e.at("context").get<std::vector<TokenId>>(), e.at("probs").get<std::vector<double>>());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void TableModel::write(const std::filesystem::path& path) const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [context, probs] : table_) {
    entries.push_back({{"context", context}, {"probs", probs}});
  }
  nlohmann::json j = {{"name", name_}, {"vocab_size", vocab_size_}, {"default", fallback_},
                      {"entries", entries}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write table model " + path.string());
  out << j.dump() << '\n';
}

RecordingBackend::RecordingBackend(std::shared_ptr<ModelBackend> inner)
    : inner_(std::move(inner)), recording_(TableModel::uniform(inner_->name(), inner_->vocab_size())) {}

AbsoluteDistribution RecordingBackend::next_distribution(std::span<const TokenId> context) {
  AbsoluteDistribution d = inner_->next_distribution(context);
  recording_.set(std::vector<TokenId>(context.begin(), context.end()), d.values);
  return d;
}

std::size_t NGramModel::KeyHash::operator()(const std::vector<TokenId>& key) const {
  // FNV-1a over the ids.
  std::uint64_t h = 1469598103934665603ULL;
  for (TokenId id : key) {
    h ^= id;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h);
}

NGramModel::NGramModel(std::string name, std::size_t vocab_size, NGramOptions options)
    : name_(std::move(name)), vocab_size_(vocab_size), options_(options) {
  if (options_.order < 1) throw ArgumentError("n-gram order must be >= 1");
  if (!(options_.delta > 0.0)) throw ArgumentError("n-gram smoothing delta must be > 0");
  if (vocab_size_ == 0) throw ArgumentError("n-gram vocabulary is empty");
}

void NGramModel::observe(std::span<const TokenId> sequence) {
  const auto max_ctx = static_cast<std::size_t>(options_.order - 1);
  for (std::size_t j = 0; j < sequence.size(); ++j) {
    if (sequence[j] >= vocab_size_) throw ArgumentError("n-gram corpus token out of range");
    for (std::size_t k = 0; k <= std::min(max_ctx, j); ++k) {
      Counts& c = counts_[std::vector<TokenId>(sequence.begin() + (j - k), sequence.begin() + j)];
      c.total++;
      c.next[sequence[j]]++;
    }
  }
}

std::size_t NGramModel::matched_context(std::span<const TokenId> context) const {
  const auto max_ctx = static_cast<std::size_t>(options_.order - 1);
  for (std::size_t k = std::min(max_ctx, context.size()); k > 0; --k) {
    auto it = counts_.find(std::vector<TokenId>(context.end() - k, context.end()));
    if (it != counts_.end() && it->second.total > 0) return k;
  }
  return 0;
}

std::vector<double> NGramModel::conditional(std::span<const TokenId> context) const {
  const std::size_t k = matched_context(context);
  const Counts* c = nullptr;
  if (auto it = counts_.find(std::vector<TokenId>(context.end() - k, context.end()));
      it != counts_.end()) {
    c = &it->second;
  }
  const double total = c ? static_cast<double>(c->total) : 0.0;
  const double denom = total + options_.delta * static_cast<double>(vocab_size_);
  std::vector<double> p(vocab_size_, options_.delta / denom);
  if (c) {
    for (const auto& [id, n] : c->next) p[id] = (static_cast<double>(n) + options_.delta) / denom;
  }
  return p;
}

AbsoluteDistribution NGramModel::next_distribution(std::span<const TokenId> context) {
  return {conditional(context), 0};
}

std::vector<std::vector<TokenId>> NGramModel::contexts() const {
  std::vector<std::vector<TokenId>> out;
  out.reserve(counts_.size());
  for (const auto& [key, c] : counts_) out.push_back(key);
  std::sort(out.begin(), out.end());
  return out;
}

NGramModel train_ngram(std::string name, std::span<const std::vector<TokenId>> corpus,
                       std::size_t vocab_size, NGramOptions options) {
  NGramModel model(std::move(name), vocab_size, options);
  bool any = false;
  for (const auto& seq : corpus) {
    model.observe(seq);
    any |= !seq.empty();
  }
  if (!any) throw ArgumentError("n-gram training corpus is empty");
  return model;
}

}  // namespace relens
