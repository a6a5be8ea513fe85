#include "mda/etf.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace mda {

std::string to_string(FrameKind k) {
  switch (k) {
    case FrameKind::EtfExact: return "etf-exact";
    case FrameKind::EtfTruncated: return "etf-truncated";
    case FrameKind::Orthogonal: return "orthogonal";
    case FrameKind::LowRank: return "low-rank";
  }
  return "?";
}

ClassFrame build_etf(Eigen::Index num_classes, Eigen::Index dim, std::uint64_t seed) {
  if (num_classes < 2) throw InvalidArgument("build_etf: need at least 2 classes");
  if (dim < 1) throw InvalidArgument("build_etf: dim must be positive");
  const Eigen::Index c = num_classes;
  const double scale = std::sqrt(static_cast<double>(c) / (c - 1));

  ClassFrame frame;
  frame.num_classes = c;
  frame.dim = dim;

  if (dim >= c) {
    // Random orthonormal d x C basis, centered along the class axis.
    Rng rng(seed);
    const Matrix q = qr_orthonormal(rng.gaussian_matrix(dim, c));
    const Matrix centering =
        Matrix::Identity(c, c) - Matrix::Constant(c, c, 1.0 / c);
    frame.w = (scale * (q * centering)).transpose();  // C x d
    frame.kind = FrameKind::EtfExact;
    frame.construction = FrameConstruction::QrBased;
  } else {
    // Orthonormal basis of the centering matrix's range, mixed by a seeded
    // rotation (the range is a degenerate eigenspace, so any fixed basis is
    // arbitrary and can leave classes unrepresented after truncation),
    // then truncated to d.
    const Matrix centering =
        Matrix::Identity(c, c) - Matrix::Constant(c, c, 1.0 / c);
    const SvdFactors f = svd(centering, "etf centering");
    Rng rng(seed);
    const Matrix mix = qr_orthonormal(rng.gaussian_matrix(c - 1, c - 1));
    frame.w = scale * (f.u.leftCols(c - 1) * mix).leftCols(dim);  // C x d
    frame.kind = (dim == c - 1) ? FrameKind::EtfExact : FrameKind::EtfTruncated;
    frame.construction = FrameConstruction::SvdBased;
  }
  return frame;
}

ClassFrame build_orthogonal(Eigen::Index num_classes, Eigen::Index dim, std::uint64_t seed) {
  if (num_classes < 1) throw InvalidArgument("build_orthogonal: need classes");
  if (dim < num_classes)
    throw InvalidArgument("build_orthogonal: requires dim >= num_classes");
  Rng rng(seed);
  ClassFrame frame;
  frame.num_classes = num_classes;
  frame.dim = dim;
  frame.w = qr_orthonormal(rng.gaussian_matrix(dim, num_classes)).transpose();
  frame.kind = FrameKind::Orthogonal;
  frame.construction = FrameConstruction::QrBased;
  return frame;
}

AlignOperator align_operator(const ClassFrame& frame) {
  AlignOperator op;
  op.p = frame.w.transpose() * frame.w;
  op.p = 0.5 * (op.p + op.p.transpose());  // enforce exact symmetry
  op.scale = static_cast<double>(frame.num_classes) / (frame.num_classes - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(op.p, Eigen::EigenvaluesOnly);
  const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
  op.rank = (es.eigenvalues().array() > 1e-6 * emax).count();
  return op;
}

double delta_etf(std::span<const Matrix> merged_a, std::span<const Matrix> merged_b,
                 std::span<const Matrix> targets) {
  if (merged_a.size() != targets.size() || merged_b.size() != targets.size())
    throw DimensionError("delta_etf: sequence lengths differ");
  if (targets.empty()) throw InvalidArgument("delta_etf: empty input");
  double sum_a = 0.0, sum_b = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    sum_a += cosine_frobenius(merged_a[t], targets[t]);
    sum_b += cosine_frobenius(merged_b[t], targets[t]);
  }
  const double n = static_cast<double>(targets.size());
  return sum_a / n - sum_b / n;
}

}  // namespace mda
