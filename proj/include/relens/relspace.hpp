#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "relens/vocab.hpp"

namespace relens {

// Norms below this produce no cosine; such rows are flagged.
inline constexpr double kZeroNorm = 1e-12;

double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

// |V| x d token embeddings, row-major float32.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim, std::vector<float> values);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<float>& values() const { return values_; }

  double norm(std::size_t i) const { return norms_[i]; }
  bool flagged(std::size_t i) const { return norms_[i] < kZeroNorm; }
  std::size_t flagged_count() const;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::vector<double> norms_;
};

// "DPE1" | u32 rows | u32 dim | rows*dim f32, all little-endian.
EmbeddingTable read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

// |V| x |A| relative representations of every token against the anchors.
// Raw form holds cosines; normalized form holds per-row softmax of those.
struct RelativeMatrix {
  std::size_t rows = 0;
  std::size_t anchors = 0;
  bool normalized = false;
  std::vector<float> values;
  std::vector<TokenId> anchor_ids;
  std::vector<std::uint8_t> flagged;  // 1 where the embedding had zero norm

  std::span<const float> row(std::size_t i) const { return {values.data() + i * anchors, anchors}; }
  float at(std::size_t i, std::size_t k) const { return values[i * anchors + k]; }
};

RelativeMatrix build_relative_matrix(const EmbeddingTable& embeddings,
                                     std::span<const TokenId> anchor_ids);
RelativeMatrix build_relative_matrix(const EmbeddingTable& embeddings, const AnchorSet& anchors,
                                     std::size_t model_index);

RelativeMatrix normalize_rows(const RelativeMatrix& raw);

// "DPR1" | u32 rows | u32 anchors | u8 normalized | rows*anchors f32 | anchors u32 ids.
RelativeMatrix read_relative_matrix(const std::filesystem::path& path);
void write_relative_matrix(const RelativeMatrix& matrix, const std::filesystem::path& path);

struct ConsistencyReport {
  std::vector<double> cosines;
  double mean = 0.0;
};

// Cosine between the relative rows of paired tokens in two matrices that
// share one anchor set.
ConsistencyReport consistency(const RelativeMatrix& a, const RelativeMatrix& b,
                              std::span<const std::pair<TokenId, TokenId>> shared);

struct NearestNeighborHistogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;  // counts[k]: edges[k] <= s < edges[k+1]; last bin closed
  std::size_t below = 0;
  std::size_t above = 0;
  std::size_t flagged = 0;      // zero-norm rows, left out
  std::vector<double> nearest;  // per row; NaN for flagged rows
};

NearestNeighborHistogram nn_distance_histogram(const EmbeddingTable& embeddings,
                                               std::span<const double> edges);

}  // namespace relens
