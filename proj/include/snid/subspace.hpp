#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "snid/error.hpp"
#include "snid/numdiff.hpp"
#include "snid/random.hpp"
#include "snid/teacher.hpp"

namespace snid {

inline Eigen::Index hvec_size(Eigen::Index D) { return D * (D + 1) / 2; }

/// Isometric half-vectorization: lower triangle column by column with the
/// off-diagonal entries scaled by sqrt(2), so <hvec A, hvec B> = <A, B>_F.
inline Eigen::VectorXd hvec(const Eigen::MatrixXd& a) {
  const Eigen::Index D = a.rows();
  if (a.cols() != D) throw ValidationError("hvec: matrix must be square");
  Eigen::VectorXd v(hvec_size(D));
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < D; ++j) {
    v[idx++] = a(j, j);
    for (Eigen::Index i = j + 1; i < D; ++i) v[idx++] = M_SQRT2 * 0.5 * (a(i, j) + a(j, i));
  }
  return v;
}

inline Eigen::MatrixXd unhvec(const Eigen::VectorXd& v, Eigen::Index D) {
  if (v.size() != hvec_size(D)) throw ValidationError("unhvec: length does not match D");
  Eigen::MatrixXd a(D, D);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < D; ++j) {
    a(j, j) = v[idx++];
    for (Eigen::Index i = j + 1; i < D; ++i) a(i, j) = a(j, i) = v[idx++] * M_SQRT1_2;
  }
  return a;
}

/// hvec(u u^T) without forming the matrix.
inline Eigen::VectorXd hvec_outer(const Eigen::VectorXd& u) {
  const Eigen::Index D = u.size();
  Eigen::VectorXd v(hvec_size(D));
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < D; ++j) {
    v[idx++] = u[j] * u[j];
    for (Eigen::Index i = j + 1; i < D; ++i) v[idx++] = M_SQRT2 * u[i] * u[j];
  }
  return v;
}

/// Orthogonal projector onto an m-dimensional subspace of Sym(R^{DxD}),
/// stored as an orthonormal basis of half-vectorized matrices.
class SubspaceProjector {
 public:
  SubspaceProjector(Eigen::Index D, Eigen::MatrixXd basis,
                    Eigen::VectorXd singular_values = Eigen::VectorXd())
      : d_(D), basis_(std::move(basis)), sv_(std::move(singular_values)) {
    if (basis_.rows() != hvec_size(D))
      throw ValidationError("SubspaceProjector: basis rows must equal D(D+1)/2");
  }

  Eigen::Index dim() const noexcept { return d_; }
  Eigen::Index rank() const noexcept { return basis_.cols(); }
  const Eigen::MatrixXd& basis() const noexcept { return basis_; }
  /// Singular values of the matrix the projector was extracted from
  /// (descending); empty for projectors built directly from a spanning set.
  const Eigen::VectorXd& singular_values() const noexcept { return sv_; }

  Eigen::VectorXd coefficients(const Eigen::VectorXd& hv) const {
    return basis_.transpose() * hv;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& hv) const {
    return basis_ * (basis_.transpose() * hv);
  }
  Eigen::MatrixXd apply_matrix(const Eigen::MatrixXd& sym) const {
    return unhvec(apply(hvec(sym)), d_);
  }
  /// Dense n x n projector matrix (n = D(D+1)/2); for tests and small D.
  Eigen::MatrixXd dense() const { return basis_ * basis_.transpose(); }

 private:
  Eigen::Index d_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd sv_;
};

/// Columns hvec(Hessian at x_i) with x_i i.i.d. standard Gaussian anchors.
struct HessianSample {
  Eigen::MatrixXd columns;  // D(D+1)/2 x N_h
  Eigen::MatrixXd anchors;  // D x N_h
  std::uint64_t queries = 0;
  std::uint64_t oracle_calls = 0;
};

/// Finite-difference Hessians of an arbitrary black box `f` on R^D.
template <class F>
HessianSample build_hessian_matrix(F&& f, Eigen::Index D, Eigen::Index n_hessians,
                                   const FDConfig& cfg, std::uint64_t seed) {
  if (n_hessians < 1) throw ValidationError("build_hessian_matrix: need N_h >= 1");
  Rng rng(seed);
  HessianSample out;
  out.anchors = gaussian_matrix(rng, D, n_hessians);
  out.columns.resize(hvec_size(D), n_hessians);
  for (Eigen::Index i = 0; i < n_hessians; ++i)
    out.columns.col(i) = hvec(fd_hessian(f, Eigen::VectorXd(out.anchors.col(i)), cfg));
  out.queries = static_cast<std::uint64_t>(n_hessians) *
                static_cast<std::uint64_t>(fd_hessian_queries(D));
  return out;
}

/// Hessian matrix of a teacher, either by finite differences through the
/// counted query interface or from the analytic oracle.
inline HessianSample build_hessian_matrix(const TeacherNetwork& net, Eigen::Index n_hessians,
                                          const DerivativeMode& mode, std::uint64_t seed) {
  if (!mode.exact)
    return build_hessian_matrix(net, net.dim(), n_hessians, mode.fd, seed);
  if (n_hessians < 1) throw ValidationError("build_hessian_matrix: need N_h >= 1");
  const Eigen::Index D = net.dim();
  Rng rng(seed);
  HessianSample out;
  out.anchors = gaussian_matrix(rng, D, n_hessians);
  out.columns.resize(hvec_size(D), n_hessians);
  for (Eigen::Index i = 0; i < n_hessians; ++i)
    out.columns.col(i) = hvec(net.analytic_hessian(out.anchors.col(i)));
  out.oracle_calls = static_cast<std::uint64_t>(n_hessians);
  return out;
}

/// Relative singular-value floor below which the top-m subspace is rejected.
inline constexpr double kRankTolerance = 1e-10;

/// Projector onto the top-m left singular subspace of `columns`.
///
/// Uses the N x N Gram matrix when N <= D(D+1)/4 and a thin SVD otherwise;
/// the Gram route is followed by one subspace-iteration sweep to restore the
/// accuracy lost by squaring.
inline SubspaceProjector top_m_projector(const Eigen::MatrixXd& columns, Eigen::Index m,
                                         Eigen::Index D) {
  const Eigen::Index n = columns.rows();
  const Eigen::Index N = columns.cols();
  if (n != hvec_size(D)) throw ValidationError("top_m_projector: rows must equal D(D+1)/2");
  if (m < 1 || N < m || n < m)
    throw ValidationError("top_m_projector: need at least m columns and m <= D(D+1)/2");

  auto check_rank = [&](const Eigen::VectorXd& top) {
    if (!(top[m - 1] > kRankTolerance * top[0])) {
      std::ostringstream os;
      os << "subspace deficient: sigma_m / sigma_1 = " << (top[0] > 0 ? top[m - 1] / top[0] : 0.0);
      throw NumericalError(os.str());
    }
  };

  Eigen::MatrixXd basis;
  Eigen::VectorXd sv;
  if (4 * N <= D * (D + 1)) {
    const Eigen::MatrixXd gram = columns.transpose() * columns;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    sv.resize(N);
    for (Eigen::Index i = 0; i < N; ++i)
      sv[i] = std::sqrt(std::max(0.0, eig.eigenvalues()[N - 1 - i]));
    Eigen::MatrixXd v = eig.eigenvectors().rightCols(m).rowwise().reverse();
    Eigen::MatrixXd u = columns * v;
    for (Eigen::Index j = 0; j < m; ++j)
      if (sv[j] > 0.0) u.col(j) /= sv[j];
    Eigen::MatrixXd y = columns * (columns.transpose() * u);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
    // Rayleigh-Ritz on the refined basis: the squared Gram spectrum cannot
    // resolve singular values below sqrt(machine eps) * sigma_1.
    Eigen::JacobiSVD<Eigen::MatrixXd> small(q.transpose() * columns, Eigen::ComputeFullU);
    sv.head(m) = small.singularValues();
    check_rank(sv);
    basis = q * small.matrixU();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(columns, Eigen::ComputeThinU);
    sv = svd.singularValues();
    check_rank(sv);
    basis = svd.matrixU().leftCols(m);
  }
  return SubspaceProjector(D, std::move(basis), std::move(sv));
}

/// Projector onto span{w_k w_k^T} built directly from the weights.
inline SubspaceProjector exact_projector(const Eigen::MatrixXd& w) {
  const Eigen::Index D = w.rows();
  const Eigen::Index m = w.cols();
  if (m > hvec_size(D)) throw ValidationError("exact_projector: m exceeds D(D+1)/2");
  Eigen::MatrixXd cols(hvec_size(D), m);
  for (Eigen::Index k = 0; k < m; ++k) cols.col(k) = hvec_outer(w.col(k));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cols);
  if (qr.rank() < m) throw NumericalError("exact_projector: rank-one terms are linearly dependent");
  Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(hvec_size(D), m);
  return SubspaceProjector(D, std::move(basis));
}

/// Spectral norm of P - Q, i.e. the sine of the largest principal angle.
inline double projector_distance(const SubspaceProjector& p, const SubspaceProjector& q) {
  if (p.dim() != q.dim() || p.rank() != q.rank())
    throw ValidationError("projector_distance: projectors differ in D or rank");
  const Eigen::MatrixXd r = q.basis() - p.basis() * (p.basis().transpose() * q.basis());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
  return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
}

inline void write_spectrum_csv(std::ostream& out, const SubspaceProjector& p) {
  out << std::setprecision(17) << "index,singular_value\n";
  for (Eigen::Index i = 0; i < p.singular_values().size(); ++i)
    out << i + 1 << ',' << p.singular_values()[i] << '\n';
}

}  // namespace snid
