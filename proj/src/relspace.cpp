#include "relens/relspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "relens/error.hpp"

namespace relens {

namespace {

template <typename A, typename B>
double cosine_impl(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw ArgumentError("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

EmbeddingTable::EmbeddingTable(std::size_t rows, std::size_t dim, std::vector<float> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
  if (values_.size() != rows_ * dim_) {
    throw ArgumentError("embedding table: expected " + std::to_string(rows_ * dim_) +
                        " values, got " + std::to_string(values_.size()));
  }
  norms_.resize(rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    double sq = 0.0;
    for (float v : row(i)) {
      if (!std::isfinite(v)) throw ArgumentError("embedding row " + std::to_string(i) + " is not finite");
      sq += static_cast<double>(v) * v;
    }
    norms_[i] = std::sqrt(sq);
  }
}

std::size_t EmbeddingTable::flagged_count() const {
  return static_cast<std::size_t>(
      std::count_if(norms_.begin(), norms_.end(), [](double n) { return n < kZeroNorm; }));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open embedding file " + path.string());
  detail::expect_magic(in, "DPE1", path.string());
  const auto rows = detail::read_le<std::uint32_t>(in, "row count");
  const auto dim = detail::read_le<std::uint32_t>(in, "dim");
  std::vector<float> values(static_cast<std::size_t>(rows) * dim);
  for (float& v : values) v = detail::read_le<float>(in, "embedding values");
  return EmbeddingTable(rows, dim, std::move(values));
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write embedding file " + path.string());
  out.write("DPE1", 4);
  detail::write_le(out, static_cast<std::uint32_t>(table.rows()));
  detail::write_le(out, static_cast<std::uint32_t>(table.dim()));
  for (float v : table.values()) detail::write_le(out, v);
}

RelativeMatrix build_relative_matrix(const EmbeddingTable& embeddings,
                                     std::span<const TokenId> anchor_ids) {
  for (TokenId id : anchor_ids) {
    if (id >= embeddings.rows()) {
      throw ArgumentError("anchor id " + std::to_string(id) + " out of range for " +
                          std::to_string(embeddings.rows()) + " embedding rows");
    }
  }
  if (embeddings.flagged_count() == embeddings.rows()) {
    throw ArgumentError("every embedding row has zero norm");
  }
  RelativeMatrix m;
  m.rows = embeddings.rows();
  m.anchors = anchor_ids.size();
  m.anchor_ids.assign(anchor_ids.begin(), anchor_ids.end());
  m.values.assign(m.rows * m.anchors, 0.0f);
  m.flagged.assign(m.rows, 0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (embeddings.flagged(i)) {
      m.flagged[i] = 1;
      continue;
    }
    const auto ei = embeddings.row(i);
    for (std::size_t k = 0; k < m.anchors; ++k) {
      m.values[i * m.anchors + k] = static_cast<float>(cosine(ei, embeddings.row(anchor_ids[k])));
    }
  }
  return m;
}

RelativeMatrix build_relative_matrix(const EmbeddingTable& embeddings, const AnchorSet& anchors,
                                     std::size_t model_index) {
  if (model_index >= anchors.per_model_ids.size()) {
    throw ArgumentError("model index " + std::to_string(model_index) + " has no anchor ids");
  }
  return build_relative_matrix(embeddings, anchors.per_model_ids[model_index]);
}

RelativeMatrix normalize_rows(const RelativeMatrix& raw) {
  if (raw.normalized) throw ArgumentError("normalize_rows: matrix is already normalized");
  RelativeMatrix m = raw;
  m.normalized = true;
  std::vector<double> buf(m.anchors);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto row = raw.row(i);
    const double peak = m.anchors ? *std::max_element(row.begin(), row.end()) : 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < m.anchors; ++k) {
      buf[k] = std::exp(static_cast<double>(row[k]) - peak);
      total += buf[k];
    }
    for (std::size_t k = 0; k < m.anchors; ++k) {
      m.values[i * m.anchors + k] = static_cast<float>(buf[k] / total);
    }
  }
  return m;
}

RelativeMatrix read_relative_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open relative matrix " + path.string());
  detail::expect_magic(in, "DPR1", path.string());
  RelativeMatrix m;
  m.rows = detail::read_le<std::uint32_t>(in, "row count");
  m.anchors = detail::read_le<std::uint32_t>(in, "anchor count");
  const auto flag = detail::read_le<std::uint8_t>(in, "normalized flag");
  if (flag > 1) throw ConfigError(path.string() + ": normalized flag must be 0 or 1");
  m.normalized = flag == 1;
  m.values.resize(m.rows * m.anchors);
  for (float& v : m.values) v = detail::read_le<float>(in, "matrix values");
  m.anchor_ids.resize(m.anchors);
  for (TokenId& id : m.anchor_ids) id = detail::read_le<std::uint32_t>(in, "anchor ids");
  m.flagged.assign(m.rows, 0);
  if (!m.normalized) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      const auto row = m.row(i);
      m.flagged[i] = std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; });
    }
  }
  return m;
}

void write_relative_matrix(const RelativeMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write relative matrix " + path.string());
  out.write("DPR1", 4);
  detail::write_le(out, static_cast<std::uint32_t>(matrix.rows));
  detail::write_le(out, static_cast<std::uint32_t>(matrix.anchors));
  detail::write_le(out, static_cast<std::uint8_t>(matrix.normalized ? 1 : 0));
  for (float v : matrix.values) detail::write_le(out, v);
  for (TokenId id : matrix.anchor_ids) detail::write_le(out, static_cast<std::uint32_t>(id));
}

ConsistencyReport consistency(const RelativeMatrix& a, const RelativeMatrix& b,
                              std::span<const std::pair<TokenId, TokenId>> shared) {
  if (a.anchors != b.anchors) {
    throw ArgumentError("consistency: matrices use different anchor sets (" +
                        std::to_string(a.anchors) + " vs " + std::to_string(b.anchors) + ")");
  }
  if (shared.empty()) throw ArgumentError("consistency: no shared tokens");
  ConsistencyReport report;
  report.cosines.reserve(shared.size());
  for (const auto& [ia, ib] : shared) {
    if (ia >= a.rows || ib >= b.rows) throw ArgumentError("consistency: token id out of range");
    report.cosines.push_back(cosine(a.row(ia), b.row(ib)));
  }
  report.mean = std::accumulate(report.cosines.begin(), report.cosines.end(), 0.0) /
                static_cast<double>(report.cosines.size());
  return report;
}

NearestNeighborHistogram nn_distance_histogram(const EmbeddingTable& embeddings,
                                               std::span<const double> edges) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw ArgumentError("histogram edges must be sorted with at least 2 entries");
  }
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    if (!embeddings.flagged(i)) usable.push_back(i);
  }
  if (usable.size() < 2) throw ArgumentError("nearest-neighbor histogram needs 2 non-zero rows");

  NearestNeighborHistogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  h.flagged = embeddings.rows() - usable.size();
  h.nearest.assign(embeddings.rows(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i : usable) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j : usable) {
      if (j != i) best = std::max(best, cosine(embeddings.row(i), embeddings.row(j)));
    }
    h.nearest[i] = best;
    if (best < edges.front()) {
      ++h.below;
    } else if (best > edges.back()) {
      ++h.above;
    } else {
      auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), best) -
                                          edges.begin()) - 1;
      h.counts[std::min(bin, h.counts.size() - 1)]++;
    }
  }
  return h;
}

}  // namespace relens
