#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>

#include "repsim/tensor.hpp"

// Two-step representation similarity: pairwise Gram (or dissimilarity)
// matrices from per-input representations, then a similarity between those
// matrices. Linear CKA uses the biased HSIC estimator.
namespace repsim::similarity {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rows are probe inputs, columns are features.
Matrix to_matrix(const Tensor& activations);

/// G[i, j] = <row_i, row_j>. Exactly symmetric. Rejects non-finite input.
Matrix gram_linear(const Matrix& x);

/// H G H with H = I - 11^T / n.
Matrix center_gram(const Matrix& gram);

/// tr(K_c L_c) / (n - 1)^2 for uncentered symmetric K, L.
double hsic(const Matrix& k, const Matrix& l);

/// Minimum probe count accepted by linear_cka.
inline constexpr Eigen::Index kMinProbe = 4;

/// Linear CKA. Empty when either representation is constant across probe rows
/// (its centered Gram matrix vanishes) and the score is undefined.
std::optional<double> linear_cka(const Matrix& x, const Matrix& y);
/// Gram form: hsic(Gx, Gy) / sqrt(hsic(Gx, Gx) hsic(Gy, Gy)).
std::optional<double> linear_cka_gram(const Matrix& x, const Matrix& y);
/// Feature form: |Y~^T X~|_F^2 / (|X~^T X~|_F |Y~^T Y~|_F) on column-centered
/// inputs, evaluated in column blocks so no p x p matrix is materialized.
std::optional<double> linear_cka_features(const Matrix& x, const Matrix& y);

/// Centered Gram matrix with its Frobenius norm, reusable across comparisons.
struct CenteredGram {
  Matrix centered;
  double norm = 0.0;
  bool degenerate = false;
};

CenteredGram prepare(const Matrix& x);
std::optional<double> linear_cka(const CenteredGram& a, const CenteredGram& b);

/// 1 - Pearson correlation between rows; zero diagonal. Throws naming the row
/// if a row is constant.
Matrix rdm(const Matrix& x);

/// Spearman correlation of the strictly upper-triangular entries, with
/// average ranks for ties. Requires n >= 3.
double rsa_spearman(const Matrix& rdm_a, const Matrix& rdm_b);

}  // namespace repsim::similarity
