#include "mda/linalg.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace mda {

namespace {

void check_finite(const Matrix& a, const char* op) {
  if (a.size() == 0) throw InvalidArgument(std::string(op) + ": empty input");
  if (!a.allFinite()) throw InvalidArgument(std::string(op) + ": non-finite entries");
}

}  // namespace

SvdFactors svd(const Matrix& a, const std::string& context) {
  check_finite(a, "svd");
  Eigen::BDCSVD<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success) {
    throw FactorizationError("svd failed to converge" +
                             (context.empty() ? std::string() : " at " + context));
  }
  SvdFactors f;
  f.u = dec.matrixU();
  f.s = dec.singularValues();
  f.vt = dec.matrixV().transpose();

  // Deterministic sign convention on left singular vectors.
  for (Eigen::Index j = 0; j < f.u.cols(); ++j) {
    Eigen::Index imax = 0;
    double best = std::abs(f.u(0, j));
    for (Eigen::Index i = 1; i < f.u.rows(); ++i) {
      const double v = std::abs(f.u(i, j));
      if (v > best) {
        best = v;
        imax = i;
      }
    }
    if (f.u(imax, j) < 0.0) {
      f.u.col(j) = -f.u.col(j);
      f.vt.row(j) = -f.vt.row(j);
    }
  }
  return f;
}

Matrix qr_orthonormal(const Matrix& a) {
  check_finite(a, "qr_orthonormal");
  if (a.rows() < a.cols())
    throw DimensionError("qr_orthonormal: requires rows >= cols");
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (std::abs(r(j, j)) < 1e-12)
      throw DegenerateInput("qr_orthonormal: rank-deficient input");
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("frobenius_inner: shape mismatch");
  return (a.array() * b.array()).sum();
}

double cosine_frobenius(const Matrix& a, const Matrix& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw DegenerateInput("cosine_frobenius: zero-norm input");
  const double c = frobenius_inner(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace mda
