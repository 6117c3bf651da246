#include "relens/embeddings.hpp"

#include <cmath>
#include <random>

#include "relens/error.hpp"
#include "relens/log.hpp"

namespace relens {

Eigen::MatrixXd ppmi_matrix(std::span<const std::vector<TokenId>> corpus, std::size_t vocab_size,
                            std::size_t window) {
  if (window < 1) throw ArgumentError("co-occurrence window must be >= 1");
  const auto n = static_cast<Eigen::Index>(vocab_size);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] >= vocab_size) throw ArgumentError("corpus token out of vocabulary range");
      const std::size_t hi = std::min(seq.size(), i + window + 1);
      for (std::size_t j = i + 1; j < hi; ++j) {
        counts(seq[i], seq[j]) += 1.0;
        counts(seq[j], seq[i]) += 1.0;
      }
    }
  }
  const Eigen::VectorXd row_sums = counts.rowwise().sum();
  const double total = row_sums.sum();
  Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(n, n);
  if (total == 0.0) return ppmi;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double c = counts(i, j);
      if (c == 0.0) continue;
      ppmi(i, j) = std::max(0.0, std::log(c * total / (row_sums(i) * row_sums(j))));
    }
  }
  return ppmi;
}

TruncatedSvd truncated_svd(const Eigen::MatrixXd& a, std::size_t rank, std::uint64_t seed,
                           int power_iterations, std::size_t oversampling) {
  const auto rows = a.rows();
  const auto cols = a.cols();
  if (rank < 1 || static_cast<Eigen::Index>(rank) > std::min(rows, cols)) {
    throw ArgumentError("truncated_svd: rank " + std::to_string(rank) + " outside [1, " +
                        std::to_string(std::min(rows, cols)) + "]");
  }
  const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(rank + oversampling),
                                        std::min(rows, cols));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd omega(cols, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < cols; ++i) omega(i, j) = gauss(rng);
  }

  auto orthonormal = [k](const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), k);
  };
  Eigen::MatrixXd q = orthonormal(a * omega);
  for (int it = 0; it < power_iterations; ++it) {
    const Eigen::MatrixXd z = orthonormal(a.transpose() * q);
    q = orthonormal(a * z);
  }

  const Eigen::MatrixXd b = q.transpose() * a;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);

  TruncatedSvd out;
  const auto r = static_cast<Eigen::Index>(rank);
  out.u = (q * svd.matrixU()).leftCols(r);
  out.s = svd.singularValues().head(r);
  out.v = svd.matrixV().leftCols(r);

  const double top = out.s.size() ? out.s(0) : 0.0;
  for (Eigen::Index j = 0; j < r; ++j) {
    if (out.s(j) <= std::max(1e-12, 1e-9 * top)) {
      out.s(j) = 0.0;
      out.u.col(j).setZero();
      out.v.col(j).setZero();
      continue;
    }
    ++out.numerical_rank;
    Eigen::Index peak = 0;
    out.u.col(j).cwiseAbs().maxCoeff(&peak);
    if (out.u(peak, j) < 0.0) {
      out.u.col(j) *= -1.0;
      out.v.col(j) *= -1.0;
    }
  }
  return out;
}

double reconstruction_error(const Eigen::MatrixXd& a, const TruncatedSvd& svd) {
  return (a - svd.u * svd.s.asDiagonal() * svd.v.transpose()).norm();
}

EmbeddingTable build_embeddings(std::span<const std::vector<TokenId>> corpus,
                                std::size_t vocab_size, const EmbeddingOptions& options) {
  if (options.dim < 1 || options.dim > vocab_size) {
    throw ArgumentError("embedding dim " + std::to_string(options.dim) + " outside [1, " +
                        std::to_string(vocab_size) + "]");
  }
  const Eigen::MatrixXd ppmi = ppmi_matrix(corpus, vocab_size, options.window);
  const TruncatedSvd svd = truncated_svd(ppmi, options.dim, options.seed, options.power_iterations,
                                         options.oversampling);
  if (svd.numerical_rank < options.dim) {
    logger().warn("embedding dim {} exceeds PPMI rank {}; trailing columns are zero", options.dim,
                  svd.numerical_rank);
  }
  const Eigen::MatrixXd rows = svd.u * svd.s.asDiagonal();
  std::vector<float> values(vocab_size * options.dim);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    for (std::size_t j = 0; j < options.dim; ++j) {
      values[i * options.dim + j] =
          static_cast<float>(rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
  }
  return EmbeddingTable(vocab_size, options.dim, std::move(values));
}

}  // namespace relens
