#pragma once

#include <map>
#include <span>
#include <vector>

#include "mda/chkpt.hpp"
#include "mda/etf.hpp"

namespace mda {

enum class AlignTarget { Etf, Orthogonal, LowRank };
enum class AlignMode { Shared, PerTaskProjection };

struct MdaConfig {
  // k per task: fraction of d_out, or the per-task default floor(d_out/T).
  double k_fraction = 0.0;  // <= 0 means per-task default
  AlignTarget target = AlignTarget::Etf;
  double lambda_default = 1.0;
  bool norm_match = true;
  AlignMode mode = AlignMode::Shared;
  std::uint64_t seed = 0;
  Eigen::Index num_classes = 0;
};

struct LayerSubspace {
  Matrix u_cat;       // d_in x (k T), stacked per-task top-k left bases
  Matrix u_share;     // d_in x d_out, orthonormal columns (zero-padded past rank)
  Matrix tau_share;   // summed task update reconstructed in span(u_share)
  Eigen::Index k_per_task = 0;
};

struct SharedSubspace {
  std::map<std::string, LayerSubspace> layers;  // weight-2d layers only
  std::vector<std::string> warnings;            // clamped-k notes
};

// Aligned update(s) per layer: one matrix in Shared mode, T in
// PerTaskProjection mode.
using AlignedUpdates = std::map<std::string, std::vector<Matrix>>;

Eigen::Index rank_per_task(const MdaConfig& cfg, Eigen::Index d_out, int num_tasks);

SharedSubspace shared_subspace(std::span<const TaskVector> vectors,
                               const MdaConfig& cfg);

// One frame per distinct layer width (same C, same seed).
std::map<Eigen::Index, ClassFrame> frames_for(const SharedSubspace& sub,
                                              const MdaConfig& cfg);

AlignedUpdates etf_align(const SharedSubspace& sub,
                         const std::map<Eigen::Index, ClassFrame>& frames,
                         std::span<const TaskVector> vectors, const MdaConfig& cfg);

struct MdaMergeResult {
  Checkpoint merged;
  SharedSubspace subspace;
  AlignedUpdates updates;                  // weight-2d layers
  std::map<std::string, Matrix> bias_sum;  // summed bias task vectors
  std::map<Eigen::Index, ClassFrame> frames;
};

// Data-free merge: aligned updates for weight-2d layers, task arithmetic for
// biases, all scaled by lambda_default.
MdaMergeResult merge_mda_ta(const Checkpoint& pretrained,
                            std::span<const TaskVector> vectors, const MdaConfig& cfg);

// (T+2) L n^3 + n^2 L C
std::uint64_t estimate_flops(std::uint64_t num_tasks, std::uint64_t num_layers,
                             std::uint64_t dim, std::uint64_t num_classes);

}  // namespace mda
