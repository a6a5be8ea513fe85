#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mda/linalg.hpp"

namespace mda {

enum class FrameKind { EtfExact, EtfTruncated, Orthogonal, LowRank };
enum class FrameConstruction { SvdBased, QrBased };

std::string to_string(FrameKind k);

// Target class frame: C class vectors as rows of a C x d matrix.
struct ClassFrame {
  Eigen::Index num_classes = 0;
  Eigen::Index dim = 0;
  Matrix w;  // C x d
  FrameKind kind = FrameKind::EtfExact;
  FrameConstruction construction = FrameConstruction::QrBased;
};

// P = W^T W, a scaled projector onto the frame row space.
struct AlignOperator {
  Matrix p;               // d x d, symmetric
  Eigen::Index rank = 0;  // min(d, C-1) for ETF frames
  double scale = 0.0;     // C/(C-1)
};

// Simplex ETF (or its truncated form when d < C-1). QR path for d >= C,
// SVD-of-centering path otherwise. Bit-exact given (C, d, seed).
ClassFrame build_etf(Eigen::Index num_classes, Eigen::Index dim, std::uint64_t seed);

// C orthonormal rows; requires d >= C.
ClassFrame build_orthogonal(Eigen::Index num_classes, Eigen::Index dim, std::uint64_t seed);

AlignOperator align_operator(const ClassFrame& frame);

// Mean-over-index cosine to targets of a, minus the same for b.
double delta_etf(std::span<const Matrix> merged_a, std::span<const Matrix> merged_b,
                 std::span<const Matrix> targets);

}  // namespace mda
