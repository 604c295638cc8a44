#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofl/core.hpp"

namespace ofl {

/// Sobolev order k of the 1-D inner product <u,w> = 1/2 * sum_{i=0..k} int_{-1}^{1} u^(i) w^(i).
struct InnerProductOrder {
  int k{1};
};

enum class IndexKind { full, hyperbolic };

inline std::string to_string(IndexKind kind) { return kind == IndexKind::full ? "full" : "hyperbolic"; }

inline IndexKind index_kind_from_string(const std::string& s) {
  if (s == "full") return IndexKind::full;
  if (s == "hyperbolic") return IndexKind::hyperbolic;
  throw std::invalid_argument("unknown index set kind: " + s);
}

/// Multi-index set with deterministic lexicographic ordering.
struct IndexSet {
  IndexKind kind{IndexKind::full};
  int n{0};
  int d{1};
  std::vector<std::vector<int>> indices;

  int size() const { return static_cast<int>(indices.size()); }

  static IndexSet full(int n, int d) {
    if (n < 0) throw std::invalid_argument("IndexSet::full: n must be >= 0");
    if (d < 1) throw std::invalid_argument("IndexSet::full: d must be >= 1");
    IndexSet set{IndexKind::full, n, d, {}};
    std::vector<int> alpha(static_cast<std::size_t>(d), 0);
    while (true) {
      set.indices.push_back(alpha);
      int i = d - 1;
      while (i >= 0 && ++alpha[static_cast<std::size_t>(i)] > n) {
        alpha[static_cast<std::size_t>(i)] = 0;
        --i;
      }
      if (i < 0) break;
    }
    return set;
  }

  static IndexSet hyperbolic(int n, int d) {
    if (n < 1) throw std::invalid_argument("IndexSet::hyperbolic: n must be >= 1");
    if (d < 1) throw std::invalid_argument("IndexSet::hyperbolic: d must be >= 1");
    IndexSet set{IndexKind::hyperbolic, n, d, {}};
    std::vector<int> alpha(static_cast<std::size_t>(d), 0);
    hyperbolic_rec(n, d, 0, 1, alpha, set.indices);
    return set;
  }

  static IndexSet make(IndexKind kind, int n, int d) {
    return kind == IndexKind::full ? full(n, d) : hyperbolic(n, d);
  }

  int max_degree() const {
    int m = 0;
    for (const auto& a : indices) m = std::max(m, *std::max_element(a.begin(), a.end()));
    return m;
  }

 private:
  static void hyperbolic_rec(int n, int d, int pos, long long prod, std::vector<int>& alpha,
                             std::vector<std::vector<int>>& out) {
    if (pos == d) {
      out.push_back(alpha);
      return;
    }
    for (int a = 0; prod * (a + 1) <= n; ++a) {
      alpha[static_cast<std::size_t>(pos)] = a;
      hyperbolic_rec(n, d, pos + 1, prod * (a + 1), alpha, out);
    }
    alpha[static_cast<std::size_t>(pos)] = 0;
  }
};

namespace detail {

/// Legendre differentiation matrix: P'_m = sum_{r<m, m-r odd} (2r+1) P_r.
inline Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> legendre_diff_matrix(int n) {
  Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> D(n + 1, n + 1);
  D.setZero();
  for (int m = 1; m <= n; ++m) {
    for (int r = m - 1; r >= 0; r -= 2) D(r, m) = 2.0L * r + 1.0L;
  }
  return D;
}

/// Exact Gram matrix of {P_0..P_n} under the order-k inner product.
inline Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> legendre_sobolev_gram(int n, int k) {
  using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat D = legendre_diff_matrix(n);
  Mat A = Mat::Identity(n + 1, n + 1);
  Eigen::Matrix<long double, Eigen::Dynamic, 1> mass(n + 1);
  for (int j = 0; j <= n; ++j) mass(j) = 2.0L / (2.0L * j + 1.0L);
  Mat G = Mat::Zero(n + 1, n + 1);
  for (int i = 0; i <= k; ++i) {
    if (i > 0) A = (D * A).eval();
    G.noalias() += A.transpose() * mass.asDiagonal() * A;
  }
  return 0.5L * G;
}

}  // namespace detail

/// Orthonormal 1-D polynomial family on (-1,1) under the order-k inner product,
/// represented by Legendre-expansion coefficients (row j = phi_j).
class Polynomial1D {
 public:
  Polynomial1D() = default;

  Polynomial1D(int k, int n) : k_(k), n_(n) {
    if (k < 1) throw std::invalid_argument("Polynomial1D: order k must be >= 1");
    if (n < 0 || n > 60) throw std::invalid_argument("Polynomial1D: degree bound must be in [0,60]");
    using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    const Mat G = detail::legendre_sobolev_gram(n, k);
    Mat Q(n + 1, n + 1);
    Q.setZero();
    // Gram-Schmidt in the G-metric with one reorthogonalization pass.
    for (int j = 0; j <= n; ++j) {
      Vec v = Vec::Zero(n + 1);
      v(j) = 1.0L;
      for (int pass = 0; pass < 2; ++pass) {
        const Vec Gv = G * v;
        for (int i = 0; i < j; ++i) {
          const long double c = Q.row(i) * Gv;
          v -= c * Q.row(i).transpose();
        }
      }
      const long double norm2 = v.dot(G * v);
      if (!(norm2 > 0.0L) || !std::isfinite(static_cast<double>(norm2))) {
        throw std::runtime_error("Polynomial1D: numerically singular Gram factorization");
      }
      Q.row(j) = v.transpose() / std::sqrt(norm2);
    }
    // Orthonormality check against the exact Gram matrix.
    const Mat defect = Q * G * Q.transpose() - Mat::Identity(n + 1, n + 1);
    long double worst = 0.0L;
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; j <= n; ++j) worst = std::max(worst, defect(i, j) < 0 ? -defect(i, j) : defect(i, j));
    }
    if (worst > 1e-8L) throw std::runtime_error("Polynomial1D: loss of orthonormality beyond tolerance");
    coeffs_ = Q.cast<double>();
  }

  int order() const { return k_; }
  int degree_bound() const { return n_; }
  const Matrix& legendre_coefficients() const { return coeffs_; }

  /// Evaluate phi_0..phi_n and first/second derivatives at x in [-1,1].
  /// Each output pointer, when non-null, must have room for n+1 doubles.
  void eval_all(double x, double* values, double* d1, double* d2) const {
    const int n = n_;
    std::vector<double> p(static_cast<std::size_t>(n + 1)), dp, ddp;
    legendre_all(x, n, p.data(), d1 || d2 ? &dp : nullptr, d2 ? &ddp : nullptr);
    combine(p.data(), values);
    if (d1) combine(dp.data(), d1);
    if (d2) combine(ddp.data(), d2);
  }

  double eval(int degree, double x, int deriv = 0) const {
    if (degree < 0 || degree > n_) throw std::invalid_argument("Polynomial1D::eval: degree out of range");
    if (deriv < 0 || deriv > 2) throw std::invalid_argument("Polynomial1D::eval: derivative order must be 0..2");
    std::vector<double> v0(static_cast<std::size_t>(n_ + 1)), v1(static_cast<std::size_t>(n_ + 1)),
        v2(static_cast<std::size_t>(n_ + 1));
    eval_all(x, v0.data(), v1.data(), v2.data());
    const double* sel[3] = {v0.data(), v1.data(), v2.data()};
    return sel[deriv][degree];
  }

  /// Legendre P_0..P_n with derivatives via the three-term recurrences.
  static void legendre_all(double x, int n, double* p, std::vector<double>* dp, std::vector<double>* ddp) {
    p[0] = 1.0;
    if (dp) dp->assign(static_cast<std::size_t>(n + 1), 0.0);
    if (ddp) ddp->assign(static_cast<std::size_t>(n + 1), 0.0);
    if (n >= 1) {
      p[1] = x;
      if (dp) (*dp)[1] = 1.0;
    }
    for (int m = 2; m <= n; ++m) {
      const double a = (2.0 * m - 1.0) / m;
      const double b = (m - 1.0) / m;
      p[m] = a * x * p[m - 1] - b * p[m - 2];
      if (dp) (*dp)[m] = a * (p[m - 1] + x * (*dp)[m - 1]) - b * (*dp)[m - 2];
      if (ddp) (*ddp)[m] = a * (2.0 * (*dp)[m - 1] + x * (*ddp)[m - 1]) - b * (*ddp)[m - 2];
    }
  }

 private:
  void combine(const double* legendre, double* out) const {
    const int n = n_;
    for (int j = 0; j <= n; ++j) {
      double acc = 0.0;
      for (int m = 0; m <= j; ++m) acc += coeffs_(j, m) * legendre[m];
      out[j] = acc;
    }
  }

  int k_{1};
  int n_{0};
  Matrix coeffs_;
};

/// Tensor-product orthonormal polynomial ansatz on a box domain.
class Basis {
 public:
  Basis(InnerProductOrder order, IndexSet index_set, Box box)
      : order_(order), index_set_(std::move(index_set)), box_(std::move(box)) {
    if (box_.dim() != index_set_.d) throw std::invalid_argument("Basis: box dimension != index set dimension");
    if (index_set_.n > 60) throw std::invalid_argument("Basis: degree bound must be <= 60");
    poly_ = Polynomial1D(order_.k, index_set_.max_degree());
    scale_.resize(static_cast<std::size_t>(box_.dim()));
    for (int i = 0; i < box_.dim(); ++i) scale_[static_cast<std::size_t>(i)] = 2.0 / box_[i].length();
    flat_indices_.reserve(index_set_.indices.size() * static_cast<std::size_t>(index_set_.d));
    for (const auto& a : index_set_.indices) {
      flat_indices_.insert(flat_indices_.end(), a.begin(), a.end());
    }
  }

  int size() const { return index_set_.size(); }
  int dim() const { return index_set_.d; }
  int order() const { return order_.k; }
  const IndexSet& index_set() const { return index_set_; }
  const Box& box() const { return box_; }
  const Polynomial1D& polynomial_1d() const { return poly_; }
  double axis_scale(int i) const { return scale_[static_cast<std::size_t>(i)]; }

  double reference_coord(int i, double x) const { return scale_[static_cast<std::size_t>(i)] * (x - box_[i].center()); }

  void check_theta(const Vector& theta) const {
    if (theta.size() != size()) throw std::invalid_argument("Basis: coefficient length mismatch");
    if (!theta.allFinite()) throw std::invalid_argument("Basis: non-finite coefficients");
  }

  void check_point(const Vector& y) const {
    if (y.size() != dim()) throw std::domain_error("Basis: point dimension mismatch");
    if (!box_.contains(y)) {
      std::string msg = "Basis: point outside domain box: (";
      for (int i = 0; i < y.size(); ++i) msg += (i ? "," : "") + format_double(y[i], "%.6g");
      throw std::domain_error(msg + ")");
    }
  }

  double eval(const Vector& theta, const Vector& y) const {
    check_theta(theta);
    Tables t = tables(y, 0);
    double acc = 0.0;
    const int d = dim();
    for (int idx = 0; idx < size(); ++idx) {
      double prod = theta[idx];
      for (int i = 0; i < d; ++i) prod *= t.val(i, flat_indices_[static_cast<std::size_t>(idx * d + i)]);
      acc += prod;
    }
    return acc;
  }

  Vector eval_grad(const Vector& theta, const Vector& y) const {
    check_theta(theta);
    Tables t = tables(y, 1);
    const int d = dim();
    Vector g = Vector::Zero(d);
    for (int idx = 0; idx < size(); ++idx) {
      const int* a = &flat_indices_[static_cast<std::size_t>(idx * d)];
      for (int j = 0; j < d; ++j) {
        double prod = theta[idx] * t.d1(j, a[j]);
        for (int i = 0; i < d; ++i) {
          if (i != j) prod *= t.val(i, a[i]);
        }
        g[j] += prod;
      }
    }
    return g;
  }

  Matrix eval_hess(const Vector& theta, const Vector& y) const {
    check_theta(theta);
    Tables t = tables(y, 2);
    const int d = dim();
    Matrix h = Matrix::Zero(d, d);
    for (int idx = 0; idx < size(); ++idx) {
      const int* a = &flat_indices_[static_cast<std::size_t>(idx * d)];
      for (int r = 0; r < d; ++r) {
        for (int c = r; c < d; ++c) {
          double prod = theta[idx];
          for (int i = 0; i < d; ++i) {
            if (i == r && i == c) {
              prod *= t.d2(i, a[i]);
            } else if (i == r || i == c) {
              prod *= t.d1(i, a[i]);
            } else {
              prod *= t.val(i, a[i]);
            }
          }
          h(r, c) += prod;
        }
      }
    }
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < r; ++c) h(r, c) = h(c, r);
    }
    return h;
  }

  /// Values of every basis function at y.
  Vector functions(const Vector& y) const {
    Tables t = tables(y, 0);
    const int d = dim();
    Vector out(size());
    for (int idx = 0; idx < size(); ++idx) {
      double prod = 1.0;
      for (int i = 0; i < d; ++i) prod *= t.val(i, flat_indices_[static_cast<std::size_t>(idx * d + i)]);
      out[idx] = prod;
    }
    return out;
  }

  /// Gradients of every basis function at y, one row per function.
  Matrix function_grads(const Vector& y) const {
    Tables t = tables(y, 1);
    const int d = dim();
    Matrix out(size(), d);
    for (int idx = 0; idx < size(); ++idx) {
      const int* a = &flat_indices_[static_cast<std::size_t>(idx * d)];
      for (int j = 0; j < d; ++j) {
        double prod = t.d1(j, a[j]);
        for (int i = 0; i < d; ++i) {
          if (i != j) prod *= t.val(i, a[i]);
        }
        out(idx, j) = prod;
      }
    }
    return out;
  }

  const std::vector<int>& flat_indices() const { return flat_indices_; }

 private:
  friend class BasisBatch;

  struct Tables {
    int d{};
    int cols{};
    std::vector<double> v, g, h;
    double val(int i, int deg) const { return v[static_cast<std::size_t>(i * cols + deg)]; }
    double d1(int i, int deg) const { return g[static_cast<std::size_t>(i * cols + deg)]; }
    double d2(int i, int deg) const { return h[static_cast<std::size_t>(i * cols + deg)]; }
  };

  Tables tables(const Vector& y, int deriv) const {
    check_point(y);
    const int d = dim();
    const int cols = poly_.degree_bound() + 1;
    Tables t;
    t.d = d;
    t.cols = cols;
    t.v.resize(static_cast<std::size_t>(d * cols));
    if (deriv >= 1) t.g.resize(static_cast<std::size_t>(d * cols));
    if (deriv >= 2) t.h.resize(static_cast<std::size_t>(d * cols));
    for (int i = 0; i < d; ++i) {
      const double xi = reference_coord(i, y[i]);
      poly_.eval_all(xi, &t.v[static_cast<std::size_t>(i * cols)],
                     deriv >= 1 ? &t.g[static_cast<std::size_t>(i * cols)] : nullptr,
                     deriv >= 2 ? &t.h[static_cast<std::size_t>(i * cols)] : nullptr);
      const double s = scale_[static_cast<std::size_t>(i)];
      if (deriv >= 1) {
        for (int m = 0; m < cols; ++m) t.g[static_cast<std::size_t>(i * cols + m)] *= s;
      }
      if (deriv >= 2) {
        for (int m = 0; m < cols; ++m) t.h[static_cast<std::size_t>(i * cols + m)] *= s * s;
      }
    }
    return t;
  }

  InnerProductOrder order_;
  IndexSet index_set_;
  Box box_;
  Polynomial1D poly_;
  std::vector<double> scale_;
  std::vector<int> flat_indices_;
};

/// Vectorized evaluation tables for a batch of points; the workhorse behind
/// batched rollouts and gradient sweeps. Columns of the loaded state matrix
/// are points; per-dimension tables hold one basis degree per column.
class BasisBatch {
 public:
  BasisBatch(const Basis& basis, int capacity)
      : basis_(&basis), capacity_(capacity) {
    const int d = basis.dim();
    const int cols = basis.polynomial_1d().degree_bound() + 1;
    leg_.assign(static_cast<std::size_t>(d), Matrix(capacity, cols));
    leg1_.assign(static_cast<std::size_t>(d), Matrix(capacity, cols));
    leg2_.assign(static_cast<std::size_t>(d), Matrix(capacity, cols));
    val_.assign(static_cast<std::size_t>(d), Matrix(capacity, cols));
    d1_.assign(static_cast<std::size_t>(d), Matrix(capacity, cols));
    d2_.assign(static_cast<std::size_t>(d), Matrix(capacity, cols));
    prod_.resize(capacity);
    tmp_.resize(capacity);
  }

  const Basis& basis() const { return *basis_; }
  int active() const { return active_; }

  /// Build tables for the first `count` columns of Y (d x count).
  /// `derivs` is the highest derivative level needed (0, 1, or 2).
  void load(const Eigen::Ref<const Matrix>& Y, int count, int derivs) {
    const Basis& b = *basis_;
    const int d = b.dim();
    const int cols = b.polynomial_1d().degree_bound() + 1;
    if (count > capacity_) throw std::invalid_argument("BasisBatch: batch larger than capacity");
    active_ = count;
    derivs_ = derivs;
    const auto& C = b.polynomial_1d().legendre_coefficients();
    for (int i = 0; i < d; ++i) {
      auto L = leg_[static_cast<std::size_t>(i)].topRows(count);
      auto L1 = leg1_[static_cast<std::size_t>(i)].topRows(count);
      auto L2 = leg2_[static_cast<std::size_t>(i)].topRows(count);
      const double s = b.axis_scale(i);
      const double c0 = b.box()[i].center();
      L.col(0).setOnes();
      if (derivs >= 1) L1.col(0).setZero();
      if (derivs >= 2) L2.col(0).setZero();
      Eigen::VectorXd x = (Y.row(i).head(count).transpose().array() - c0) * s;
      if (cols > 1) {
        L.col(1) = x;
        if (derivs >= 1) L1.col(1).setOnes();
        if (derivs >= 2) L2.col(1).setZero();
      }
      for (int m = 2; m < cols; ++m) {
        const double a = (2.0 * m - 1.0) / m;
        const double bb = (m - 1.0) / m;
        L.col(m) = a * x.cwiseProduct(L.col(m - 1)) - bb * L.col(m - 2);
        if (derivs >= 1) L1.col(m) = a * (L.col(m - 1) + x.cwiseProduct(L1.col(m - 1))) - bb * L1.col(m - 2);
        if (derivs >= 2) {
          L2.col(m) = a * (2.0 * L1.col(m - 1) + x.cwiseProduct(L2.col(m - 1))) - bb * L2.col(m - 2);
        }
      }
      val_[static_cast<std::size_t>(i)].topRows(count).noalias() = L * C.transpose();
      if (derivs >= 1) d1_[static_cast<std::size_t>(i)].topRows(count).noalias() = (L1 * C.transpose()) * s;
      if (derivs >= 2) d2_[static_cast<std::size_t>(i)].topRows(count).noalias() = (L2 * C.transpose()) * (s * s);
    }
  }

  /// v(theta) at every loaded point.
  void field_values(const Vector& theta, Eigen::Ref<Eigen::VectorXd> out) const {
    const Basis& b = *basis_;
    const int d = b.dim();
    const int P = active_;
    out.head(P).setZero();
    const auto& flat = b.flat_indices();
    for (int idx = 0; idx < b.size(); ++idx) {
      const int* a = &flat[static_cast<std::size_t>(idx * d)];
      column_product(a, P);
      out.head(P) += theta[idx] * prod_.head(P);
    }
  }

  /// grad v(theta) at every loaded point (d x P). Requires derivs >= 1.
  void field_grads(const Vector& theta, Eigen::Ref<Matrix> out) const {
    const Basis& b = *basis_;
    const int d = b.dim();
    const int P = active_;
    out.leftCols(P).setZero();
    const auto& flat = b.flat_indices();
    for (int idx = 0; idx < b.size(); ++idx) {
      const int* a = &flat[static_cast<std::size_t>(idx * d)];
      for (int j = 0; j < d; ++j) {
        tmp_.head(P) = d1_[static_cast<std::size_t>(j)].col(a[j]).head(P);
        for (int i = 0; i < d; ++i) {
          if (i != j) tmp_.head(P).array() *= val_[static_cast<std::size_t>(i)].col(a[i]).head(P).array();
        }
        out.row(j).head(P) += theta[idx] * tmp_.head(P).transpose();
      }
    }
  }

  /// Packed Hessian of v(theta): rows are the (r,c) upper-triangle pairs in
  /// row-major order, one column per point. Requires derivs >= 2.
  void field_hessians_packed(const Vector& theta, Eigen::Ref<Matrix> out) const {
    const Basis& b = *basis_;
    const int d = b.dim();
    const int P = active_;
    out.leftCols(P).setZero();
    const auto& flat = b.flat_indices();
    for (int idx = 0; idx < b.size(); ++idx) {
      const int* a = &flat[static_cast<std::size_t>(idx * d)];
      int row = 0;
      for (int r = 0; r < d; ++r) {
        for (int c = r; c < d; ++c, ++row) {
          for (int p = 0; p < P; ++p) tmp_[p] = 1.0;
          for (int i = 0; i < d; ++i) {
            const Matrix& t = (i == r && i == c) ? d2_[static_cast<std::size_t>(i)]
                              : (i == r || i == c) ? d1_[static_cast<std::size_t>(i)]
                                                   : val_[static_cast<std::size_t>(i)];
            tmp_.head(P).array() *= t.col(a[i]).head(P).array();
          }
          out.row(row).head(P) += theta[idx] * tmp_.head(P).transpose();
        }
      }
    }
  }

  /// Accumulate out[idx] += sum_p grad(phi_idx)(y_p) . c_p for weights c (d x P).
  /// Requires derivs >= 1.
  void accumulate_grad_dots(const Eigen::Ref<const Matrix>& c, Eigen::Ref<Vector> out) const {
    const Basis& b = *basis_;
    const int d = b.dim();
    const int P = active_;
    const auto& flat = b.flat_indices();
    for (int idx = 0; idx < b.size(); ++idx) {
      const int* a = &flat[static_cast<std::size_t>(idx * d)];
      double acc = 0.0;
      for (int j = 0; j < d; ++j) {
        tmp_.head(P) = d1_[static_cast<std::size_t>(j)].col(a[j]).head(P);
        for (int i = 0; i < d; ++i) {
          if (i != j) tmp_.head(P).array() *= val_[static_cast<std::size_t>(i)].col(a[i]).head(P).array();
        }
        acc += tmp_.head(P).dot(c.row(j).head(P).transpose());
      }
      out[idx] += acc;
    }
  }

  /// Gradient of each basis function at point p of the batch (size x d).
  void function_grads_at(int p, Eigen::Ref<Matrix> out) const {
    const Basis& b = *basis_;
    const int d = b.dim();
    const auto& flat = b.flat_indices();
    for (int idx = 0; idx < b.size(); ++idx) {
      const int* a = &flat[static_cast<std::size_t>(idx * d)];
      for (int j = 0; j < d; ++j) {
        double prod = d1_[static_cast<std::size_t>(j)](p, a[j]);
        for (int i = 0; i < d; ++i) {
          if (i != j) prod *= val_[static_cast<std::size_t>(i)](p, a[i]);
        }
        out(idx, j) = prod;
      }
    }
  }

 private:
  void column_product(const int* a, int P) const {
    prod_.head(P) = val_[0].col(a[0]).head(P);
    for (int i = 1; i < basis_->dim(); ++i) {
      prod_.head(P).array() *= val_[static_cast<std::size_t>(i)].col(a[i]).head(P).array();
    }
  }

  const Basis* basis_;
  int capacity_;
  int active_{0};
  int derivs_{0};
  std::vector<Matrix> leg_, leg1_, leg2_;
  std::vector<Matrix> val_, d1_, d2_;
  mutable Eigen::VectorXd prod_, tmp_;
};

/// Unpack a packed-Hessian column into a symmetric d x d matrix.
inline Matrix unpack_hessian(const Eigen::Ref<const Vector>& packed, int d) {
  Matrix h(d, d);
  int row = 0;
  for (int r = 0; r < d; ++r) {
    for (int c = r; c < d; ++c, ++row) {
      h(r, c) = packed[row];
      h(c, r) = packed[row];
    }
  }
  return h;
}

// --- flat text serialization ---------------------------------------------

inline void save_basis(std::ostream& os, const Basis& basis, const Vector& theta,
                       const std::vector<std::pair<std::string, std::string>>& metadata = {}) {
  basis.check_theta(theta);
  for (const auto& [key, value] : metadata) os << key << "=" << value << "\n";
  os << "k=" << basis.order() << "\n";
  os << "kind=" << to_string(basis.index_set().kind) << "\n";
  os << "n=" << basis.index_set().n << "\n";
  os << "d=" << basis.dim() << "\n";
  os << "box=" << basis.box().to_string() << "\n";
  const auto& indices = basis.index_set().indices;
  for (int i = 0; i < basis.size(); ++i) {
    for (int j = 0; j < basis.dim(); ++j) os << indices[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] << ",";
    os << format_double(theta[i], "%.17g") << "\n";
  }
}

struct BasisFile {
  Basis basis;
  Vector theta;
  std::map<std::string, std::string> metadata;
};

inline BasisFile load_basis(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::vector<std::string> coeff_lines;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    const std::size_t comma = line.find(',');
    if (eq != std::string::npos && (comma == std::string::npos || eq < comma)) {
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    } else {
      coeff_lines.push_back(line);
    }
  }
  for (const char* key : {"k", "kind", "n", "d", "box"}) {
    if (!kv.count(key)) throw std::runtime_error(std::string("basis file: missing key ") + key);
  }
  const int k = std::stoi(kv.at("k"));
  const int n = std::stoi(kv.at("n"));
  const int d = std::stoi(kv.at("d"));
  const IndexKind kind = index_kind_from_string(kv.at("kind"));
  Basis basis(InnerProductOrder{k}, IndexSet::make(kind, n, d), Box::parse(kv.at("box")));
  if (static_cast<int>(coeff_lines.size()) != basis.size()) {
    throw std::runtime_error("basis file: coefficient count mismatch");
  }
  Vector theta(basis.size());
  for (int i = 0; i < basis.size(); ++i) {
    const std::string& cl = coeff_lines[static_cast<std::size_t>(i)];
    std::size_t pos = 0;
    for (int j = 0; j < d; ++j) {
      const std::size_t comma = cl.find(',', pos);
      if (comma == std::string::npos) throw std::runtime_error("basis file: malformed coefficient line");
      const int alpha = std::stoi(cl.substr(pos, comma - pos));
      if (alpha != basis.index_set().indices[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
        throw std::runtime_error("basis file: multi-index mismatch at line " + std::to_string(i));
      }
      pos = comma + 1;
    }
    theta[i] = std::stod(cl.substr(pos));
  }
  std::map<std::string, std::string> metadata;
  for (const auto& [key, value] : kv) {
    if (key != "k" && key != "kind" && key != "n" && key != "d" && key != "box") metadata[key] = value;
  }
  return BasisFile{std::move(basis), std::move(theta), std::move(metadata)};
}

}  // namespace ofl
