#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <mda/etf.hpp>

using namespace mda;

namespace {

double max_gram_deviation(const ClassFrame& f) {
  const Matrix gram = f.w * f.w.transpose();
  const double off = -1.0 / static_cast<double>(f.num_classes - 1);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < gram.rows(); ++i)
    for (Eigen::Index j = 0; j < gram.cols(); ++j) {
      const double ideal = (i == j) ? 1.0 : off;
      worst = std::max(worst, std::abs(gram(i, j) - ideal));
    }
  return worst;
}

}  // namespace

TEST_CASE("exact frame: C=3 d=2 pairwise inner products -1/2") {
  const ClassFrame f = build_etf(3, 2, 0);
  CHECK(f.kind == FrameKind::EtfExact);
  CHECK(max_gram_deviation(f) < 1e-5);
  const Matrix gram = f.w * f.w.transpose();
  CHECK(gram(0, 1) == doctest::Approx(-0.5).epsilon(1e-10));
  CHECK(gram(0, 2) == doctest::Approx(-0.5).epsilon(1e-10));
  CHECK(gram(1, 2) == doctest::Approx(-0.5).epsilon(1e-10));
}

TEST_CASE("exact frame: C=2 d=4 gives antipodal unit rows") {
  const ClassFrame f = build_etf(2, 4, 1);
  CHECK(f.w.row(0).norm() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK((f.w.row(0) + f.w.row(1)).norm() < 1e-10);
}

TEST_CASE("rows sum to zero in the exact regime") {
  for (Eigen::Index c : {3, 5, 10}) {
    const ClassFrame f = build_etf(c, c, 2);
    CHECK(f.w.colwise().sum().cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("truncated frame: C=12 d=8 scaled-identity column Gram") {
  const ClassFrame f = build_etf(12, 8, 0);
  CHECK(f.kind == FrameKind::EtfTruncated);
  CHECK(f.construction == FrameConstruction::SvdBased);
  const Matrix p = f.w.transpose() * f.w;
  CHECK((p - (12.0 / 11.0) * Matrix::Identity(8, 8)).norm() < 1e-5);
  // every class keeps a usable (nonzero) direction after truncation
  for (Eigen::Index i = 0; i < 12; ++i) CHECK(f.w.row(i).norm() > 1e-3);
}

TEST_CASE("boundary d = C-1 routes to the SVD path and is exact") {
  const ClassFrame f = build_etf(6, 5, 4);
  CHECK(f.kind == FrameKind::EtfExact);
  CHECK(f.construction == FrameConstruction::SvdBased);
  CHECK(max_gram_deviation(f) < 1e-5);
}

TEST_CASE("frames are deterministic in the seed") {
  const ClassFrame a = build_etf(10, 14, 9);
  const ClassFrame b = build_etf(10, 14, 9);
  CHECK(a.w == b.w);
  const ClassFrame c = build_etf(10, 14, 10);
  CHECK(a.w != c.w);
  const ClassFrame ta = build_etf(12, 8, 9);
  const ClassFrame tb = build_etf(12, 8, 9);
  CHECK(ta.w == tb.w);
}

TEST_CASE("build_etf argument validation") {
  CHECK_THROWS_AS(build_etf(1, 4, 0), InvalidArgument);
  CHECK_THROWS_AS(build_etf(3, 0, 0), InvalidArgument);
}

TEST_CASE("build_orthogonal") {
  const ClassFrame f = build_orthogonal(4, 8, 0);
  CHECK(f.kind == FrameKind::Orthogonal);
  CHECK((f.w * f.w.transpose() - Matrix::Identity(4, 4)).norm() < 1e-10);
  const ClassFrame g = build_orthogonal(3, 3, 5);
  CHECK((g.w * g.w.transpose() - Matrix::Identity(3, 3)).norm() < 1e-10);
  CHECK_THROWS_AS(build_orthogonal(5, 4, 0), InvalidArgument);
}

TEST_CASE("align_operator: C=3 d=2 scaled identity") {
  const AlignOperator op = align_operator(build_etf(3, 2, 0));
  CHECK((op.p - 1.5 * Matrix::Identity(2, 2)).norm() < 1e-8);
  CHECK(op.rank == 2);
  CHECK(op.scale == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("align_operator: C=4 d=16 rank 3, nonzero eigenvalues 4/3") {
  const AlignOperator op = align_operator(build_etf(4, 16, 1));
  CHECK(op.rank == 3);
  Eigen::SelfAdjointEigenSolver<Matrix> es(op.p);
  const Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    const bool near_zero = std::abs(ev(i)) < 1e-8;
    const bool near_scale = std::abs(ev(i) - 4.0 / 3.0) < 1e-8;
    CHECK((near_zero || near_scale));
  }
}

TEST_CASE("align_operator: orthogonal frame gives an idempotent projector") {
  const AlignOperator op = align_operator(build_orthogonal(4, 8, 2));
  CHECK(op.rank == 4);
  CHECK((op.p * op.p - op.p).norm() < 1e-10);
}

TEST_CASE("delta_etf") {
  Rng rng(13);
  std::vector<Matrix> a, b, t;
  for (int i = 0; i < 3; ++i) {
    a.push_back(rng.gaussian_matrix(4, 4));
    b.push_back(rng.gaussian_matrix(4, 4));
    t.push_back(rng.gaussian_matrix(4, 4));
  }
  CHECK(delta_etf(a, a, t) == doctest::Approx(0.0).epsilon(1e-14));

  // a equal to targets, b orthogonal to them
  std::vector<Matrix> eq, orth, tg;
  Matrix m(2, 2), n(2, 2);
  m << 1, 0, 0, 0;
  n << 0, 1, 0, 0;
  tg.push_back(m);
  eq.push_back(m);
  orth.push_back(n);
  CHECK(delta_etf(eq, orth, tg) == doctest::Approx(1.0).epsilon(1e-12));

  // against the direct formula
  double expect = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    expect += cosine_frobenius(a[i], t[i]) / 3.0 - cosine_frobenius(b[i], t[i]) / 3.0;
  CHECK(delta_etf(a, b, t) == doctest::Approx(expect).epsilon(1e-12));

  std::vector<Matrix> short_seq(a.begin(), a.begin() + 2);
  CHECK_THROWS_AS(delta_etf(short_seq, b, t), DimensionError);
}
