#include "repsim/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "repsim/error.hpp"

namespace repsim::similarity {
namespace {

// Relative size below which a centered representation counts as constant.
constexpr double kDegenerate = 1e-10;
// Column block width for the feature-form products.
constexpr Eigen::Index kBlock = 256;

void require_finite(const Matrix& x, const char* what) {
  if (!x.allFinite()) throw ShapeError(std::string(what) + ": non-finite entries");
}

void require_pair(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) {
    throw ShapeError("linear_cka: probe counts differ (" + std::to_string(x.rows()) + " vs " +
                     std::to_string(y.rows()) + ")");
  }
  if (x.rows() < kMinProbe) {
    throw ShapeError("linear_cka: need at least " + std::to_string(kMinProbe) + " probe rows, got " +
                     std::to_string(x.rows()));
  }
}

Matrix center_columns(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return x.rowwise() - mean;
}

// Squared Frobenius norm of a^T b, accumulated over column blocks of b.
double cross_norm_sq(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  Matrix block;
  for (Eigen::Index start = 0; start < b.cols(); start += kBlock) {
    const Eigen::Index width = std::min(kBlock, b.cols() - start);
    block.noalias() = a.transpose() * b.middleCols(start, width);
    total += block.squaredNorm();
  }
  return total;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw ShapeError("rsa_spearman: all dissimilarities tie, correlation undefined");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

Matrix to_matrix(const Tensor& activations) {
  if (activations.rank() != 2) throw ShapeError("activation matrix must be rank 2, got " + to_string(activations.shape()));
  return Eigen::Map<const Matrix>(activations.data(), static_cast<Eigen::Index>(activations.dim(0)),
                                  static_cast<Eigen::Index>(activations.dim(1)));
}

Matrix gram_linear(const Matrix& x) {
  require_finite(x, "gram_linear");
  Matrix lower = Matrix::Zero(x.rows(), x.rows());
  lower.selfadjointView<Eigen::Lower>().rankUpdate(x);
  return lower.selfadjointView<Eigen::Lower>();
}

Matrix center_gram(const Matrix& gram) {
  if (gram.rows() != gram.cols()) throw ShapeError("center_gram: matrix is not square");
  const Eigen::Index n = gram.rows();
  const Eigen::VectorXd means = gram.rowwise().mean();
  const double grand = means.mean();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = gram(i, j) - (means(i) + means(j)) + grand;
  }
  return out;
}

double hsic(const Matrix& k, const Matrix& l) {
  if (k.rows() != l.rows() || k.cols() != l.cols() || k.rows() != k.cols()) {
    throw ShapeError("hsic: Gram matrices must be square and equally sized");
  }
  const double n1 = static_cast<double>(k.rows() - 1);
  return center_gram(k).cwiseProduct(center_gram(l)).sum() / (n1 * n1);
}

CenteredGram prepare(const Matrix& x) {
  const Matrix gram = gram_linear(x);
  CenteredGram out;
  out.centered = center_gram(gram);
  out.norm = out.centered.norm();
  const double scale = gram.trace();
  out.degenerate = scale == 0.0 || out.norm <= kDegenerate * scale;
  return out;
}

std::optional<double> linear_cka(const CenteredGram& a, const CenteredGram& b) {
  if (a.centered.rows() != b.centered.rows()) throw ShapeError("linear_cka: probe counts differ");
  if (a.degenerate || b.degenerate) return std::nullopt;
  return a.centered.cwiseProduct(b.centered).sum() / (a.norm * b.norm);
}

std::optional<double> linear_cka_gram(const Matrix& x, const Matrix& y) {
  require_pair(x, y);
  return linear_cka(prepare(x), prepare(y));
}

std::optional<double> linear_cka_features(const Matrix& x, const Matrix& y) {
  require_pair(x, y);
  require_finite(x, "linear_cka");
  require_finite(y, "linear_cka");
  const Matrix xc = center_columns(x);
  const Matrix yc = center_columns(y);
  const double xx = std::sqrt(cross_norm_sq(xc, xc));
  const double yy = std::sqrt(cross_norm_sq(yc, yc));
  if (xx == 0.0 || xx <= kDegenerate * x.squaredNorm()) return std::nullopt;
  if (yy == 0.0 || yy <= kDegenerate * y.squaredNorm()) return std::nullopt;
  return cross_norm_sq(yc, xc) / (xx * yy);
}

std::optional<double> linear_cka(const Matrix& x, const Matrix& y) {
  // n x n Gram matrices are cheaper whenever features outnumber probes.
  if (std::max(x.cols(), y.cols()) >= x.rows()) return linear_cka_gram(x, y);
  return linear_cka_features(x, y);
}

Matrix rdm(const Matrix& x) {
  require_finite(x, "rdm");
  const Eigen::Index n = x.rows();
  Matrix z = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    z.row(i).array() -= z.row(i).mean();
    const double norm = z.row(i).norm();
    if (norm == 0.0) throw ShapeError("rdm: row " + std::to_string(i) + " is constant");
    z.row(i) /= norm;
  }
  Matrix correlation = Matrix::Zero(n, n);
  correlation.selfadjointView<Eigen::Lower>().rankUpdate(z);
  Matrix out = Matrix::Ones(n, n) - Matrix(correlation.selfadjointView<Eigen::Lower>());
  out.diagonal().setZero();
  return out;
}

double rsa_spearman(const Matrix& rdm_a, const Matrix& rdm_b) {
  if (rdm_a.rows() != rdm_b.rows() || rdm_a.rows() != rdm_a.cols() || rdm_b.rows() != rdm_b.cols()) {
    throw ShapeError("rsa_spearman: dissimilarity matrices must be square and equally sized");
  }
  const Eigen::Index n = rdm_a.rows();
  if (n < 3) throw ShapeError("rsa_spearman: need n >= 3 (at least 3 upper-triangular entries), got " + std::to_string(n));
  std::vector<double> a, b;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      a.push_back(rdm_a(i, j));
      b.push_back(rdm_b(i, j));
    }
  }
  return pearson(average_ranks(a), average_ranks(b));
}

}  // namespace repsim::similarity
