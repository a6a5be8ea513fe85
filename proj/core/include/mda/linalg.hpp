#pragma once

#include <string>

#include "mda/errors.hpp"
#include "mda/rng.hpp"

namespace mda {

struct SvdFactors {
  Matrix u;   // m x r, orthonormal columns
  Vector s;   // r, non-negative, non-increasing
  Matrix vt;  // r x n, orthonormal rows
};

// Thin SVD with r = min(rows, cols). Sign convention: in each left singular
// vector the largest-magnitude entry is non-negative (ties -> lowest index),
// with the matching row of vt flipped to preserve the product.
SvdFactors svd(const Matrix& a, const std::string& context = {});

// Q with orthonormal columns spanning col(a); requires rows >= cols.
// Sign convention: diagonal of the triangular factor non-negative.
Matrix qr_orthonormal(const Matrix& a);

// Tr(A^T B)
double frobenius_inner(const Matrix& a, const Matrix& b);

// <A,B>_F / (|A|_F |B|_F)
double cosine_frobenius(const Matrix& a, const Matrix& b);

}  // namespace mda
