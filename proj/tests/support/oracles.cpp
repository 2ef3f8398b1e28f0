#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

namespace repsim::oracle {

Tensor random_tensor(Rng& rng, Shape shape, double scale) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

DenseMatrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  DenseMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

DenseMatrix random_orthogonal(Rng& rng, Eigen::Index n) {
  DenseMatrix q = random_matrix(rng, n, n);
  // Modified Gram-Schmidt, applied twice for orthogonality to rounding level.
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
      q.col(j) /= q.col(j).norm();
    }
  }
  return q;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const std::size_t n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = weight.dim(0);
  Tensor out({n, c_out, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          double acc = bias[o];
          for (std::size_t c = 0; c < c_in; ++c) {
            for (std::size_t u = 0; u < 3; ++u) {
              for (std::size_t v = 0; v < 3; ++v) {
                const long y = static_cast<long>(i + u) - 1;
                const long x = static_cast<long>(j + v) - 1;
                if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
                acc += input.at({b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)}) *
                       weight.at({o, c, u, v});
              }
            }
          }
          out.at({b, o, i, j}) = acc;
        }
      }
    }
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const std::size_t n = input.dim(0), f = input.dim(1), d = weight.dim(1);
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      double acc = bias[k];
      for (std::size_t i = 0; i < f; ++i) acc += input.at({r, i}) * weight.at({i, k});
      out.at({r, k}) = acc;
    }
  }
  return out;
}

Tensor maxpool2x2(const Tensor& input) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c, h / 2, w / 2});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < h / 2; ++i) {
        for (std::size_t j = 0; j < w / 2; ++j) {
          out.at({b, k, i, j}) = std::max({input.at({b, k, 2 * i, 2 * j}), input.at({b, k, 2 * i, 2 * j + 1}),
                                           input.at({b, k, 2 * i + 1, 2 * j}), input.at({b, k, 2 * i + 1, 2 * j + 1})});
        }
      }
    }
  }
  return out;
}

Tensor numeric_gradient(const std::function<double()>& loss, Tensor& x, double h) {
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = loss();
    x[i] = saved - h;
    const double minus = loss();
    x[i] = saved;
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) throw std::invalid_argument("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_difference: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

DenseMatrix gram(const DenseMatrix& x) {
  DenseMatrix g(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < x.cols(); ++k) acc += x(i, k) * x(j, k);
      g(i, j) = acc;
    }
  }
  return g;
}

DenseMatrix center_explicit(const DenseMatrix& g) {
  const Eigen::Index n = g.rows();
  DenseMatrix h = DenseMatrix::Identity(n, n);
  h.array() -= 1.0 / static_cast<double>(n);
  DenseMatrix hg = DenseMatrix::Zero(n, n);
  DenseMatrix out = DenseMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = 0; k < n; ++k) hg(i, j) += h(i, k) * g(k, j);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = 0; k < n; ++k) out(i, j) += hg(i, k) * h(k, j);
    }
  }
  return out;
}

double hsic_elementwise(const DenseMatrix& k, const DenseMatrix& l) {
  const DenseMatrix kc = center_explicit(k);
  const DenseMatrix lc = center_explicit(l);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.cols(); ++j) acc += kc(i, j) * lc(i, j);
  }
  const double n1 = static_cast<double>(k.rows() - 1);
  return acc / (n1 * n1);
}

double cka_from_hsic(const DenseMatrix& x, const DenseMatrix& y) {
  const DenseMatrix gx = gram(x);
  const DenseMatrix gy = gram(y);
  return hsic_elementwise(gx, gy) / std::sqrt(hsic_elementwise(gx, gx) * hsic_elementwise(gy, gy));
}

DenseMatrix rdm_direct(const DenseMatrix& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  DenseMatrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double mi = 0.0, mj = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) {
        mi += x(i, k);
        mj += x(j, k);
      }
      mi /= static_cast<double>(p);
      mj /= static_cast<double>(p);
      double sij = 0.0, sii = 0.0, sjj = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) {
        sij += (x(i, k) - mi) * (x(j, k) - mj);
        sii += (x(i, k) - mi) * (x(i, k) - mi);
        sjj += (x(j, k) - mj) * (x(j, k) - mj);
      }
      out(i, j) = i == j ? 0.0 : 1.0 - sij / std::sqrt(sii * sjj);
    }
  }
  return out;
}

std::vector<double> ranks_by_counting(const std::vector<double>& values) {
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double smaller = 0.0, equal = 0.0;
    for (double v : values) {
      if (v < values[i]) smaller += 1.0;
      if (v == values[i]) equal += 1.0;
    }
    ranks[i] = 1.0 + smaller + (equal - 1.0) / 2.0;
  }
  return ranks;
}

double spearman_upper(const DenseMatrix& a, const DenseMatrix& b) {
  std::vector<double> va, vb;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      va.push_back(a(i, j));
      vb.push_back(b(i, j));
    }
  }
  const std::vector<double> ra = ranks_by_counting(va);
  const std::vector<double> rb = ranks_by_counting(vb);
  const double m = static_cast<double>(ra.size());
  double sa = 0.0, sb = 0.0, sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sa += ra[i];
    sb += rb[i];
    sab += ra[i] * rb[i];
    saa += ra[i] * ra[i];
    sbb += rb[i] * rb[i];
  }
  return (m * sab - sa * sb) / std::sqrt((m * saa - sa * sa) * (m * sbb - sb * sb));
}

double chi_square(std::span<const double> observed, std::span<const double> expected) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  }
  return stat;
}

double chi_square_quantile(double p, double degrees_of_freedom) {
  return boost::math::quantile(boost::math::chi_squared(degrees_of_freedom), p);
}

}  // namespace repsim::oracle
