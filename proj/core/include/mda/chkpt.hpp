#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mda/linalg.hpp"

namespace mda {

enum class LayerRole { Weight2d, Bias1d, Head };

std::string to_string(LayerRole r);
LayerRole layer_role_from_string(const std::string& s);

struct LayerInfo {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  LayerRole role = LayerRole::Weight2d;
};

// Named parameter tensors for one model. 1-d tensors are stored as 1 x n.
// The manifest fixes layer order; it must match across a merge set.
struct Checkpoint {
  std::vector<LayerInfo> manifest;
  std::map<std::string, Matrix> tensors;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  void add(std::string name, Matrix tensor, LayerRole role);
};

// Per-layer parameter deltas for one task. Head layers are excluded.
struct TaskVector {
  std::string task_id;
  std::map<std::string, Matrix> layers;
};

// Layer-wise fusion coefficient lambda^(l).
using FusionCoefficients = std::map<std::string, double>;

// MDAT v1 container: magic "MDATCKP1", u64-LE length-prefixed JSON manifest,
// then row-major little-endian float32 tensor blob.
Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

TaskVector task_vector(const Checkpoint& pretrained, const Checkpoint& finetuned);

// theta = theta0 + lambda^(l) sum_k tau_k^(l); head layers come from the
// pretrained checkpoint and are re-attached per task at evaluation time.
Checkpoint merge_task_arithmetic(const Checkpoint& pretrained,
                                 std::span<const TaskVector> vectors,
                                 const FusionCoefficients& lambda);
Checkpoint merge_task_arithmetic(const Checkpoint& pretrained,
                                 std::span<const TaskVector> vectors,
                                 double lambda);

Checkpoint merge_weight_average(std::span<const Checkpoint> checkpoints);

FusionCoefficients uniform_coefficients(const Checkpoint& pretrained, double value);

}  // namespace mda
