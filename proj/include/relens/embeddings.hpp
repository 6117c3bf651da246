#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "relens/relspace.hpp"
#include "relens/vocab.hpp"

namespace relens {

struct EmbeddingOptions {
  std::size_t window = 2;  // symmetric context width
  std::size_t dim = 16;
  std::uint64_t seed = 0;  // randomized range finder
  int power_iterations = 4;
  std::size_t oversampling = 10;
};

// Positive pointwise mutual information of windowed co-occurrence counts.
// Co-occurrence never crosses sequence boundaries.
Eigen::MatrixXd ppmi_matrix(std::span<const std::vector<TokenId>> corpus, std::size_t vocab_size,
                            std::size_t window);

struct TruncatedSvd {
  Eigen::MatrixXd u;  // n x rank, sign-fixed
  Eigen::VectorXd s;
  Eigen::MatrixXd v;  // m x rank
  std::size_t numerical_rank = 0;
};

// Randomized truncated SVD (range finder + power iterations). The largest-
// magnitude component of every left singular vector is made positive.
TruncatedSvd truncated_svd(const Eigen::MatrixXd& a, std::size_t rank, std::uint64_t seed,
                           int power_iterations = 4, std::size_t oversampling = 10);

// Frobenius norm of a - U S V^T.
double reconstruction_error(const Eigen::MatrixXd& a, const TruncatedSvd& svd);

// PPMI + truncated SVD; row i = U_i * S. Columns past the numerical rank are
// zero (a warning is logged).
EmbeddingTable build_embeddings(std::span<const std::vector<TokenId>> corpus,
                                std::size_t vocab_size, const EmbeddingOptions& options);

}  // namespace relens
