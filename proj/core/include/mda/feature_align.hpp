#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mda/param_align.hpp"
#include "mda/toybench.hpp"

namespace mda {

// Skew-symmetric parametrization of a rotation. Rotations act on feature
// rows: h_rot = h_row * r.
struct RotationParam {
  int task_id = 0;
  Matrix a;  // d x d, skew-symmetric
  Matrix r;  // cached (I - a)(I + a)^{-1}

  static RotationParam identity(int task_id, Eigen::Index dim);
  void refresh();  // recompute r from a
};

// phi_t: local class c -> offsets[t] + c
struct ClassMap {
  std::vector<Eigen::Index> offsets;
  Eigen::Index total = 0;

  static ClassMap uniform(int num_tasks, Eigen::Index classes_per_task);
  Eigen::Index global(int task, Eigen::Index local) const {
    return offsets[static_cast<std::size_t>(task)] + local;
  }
};

struct LossReport {
  double entropy = 0.0;
  double align = 0.0;
  double rotation = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

enum class LabelMode { True, Pseudo };

struct OptimHp {
  double alpha = 0.8;
  double beta = 0.2;
  double lr = 1e-3;
  int epochs = 0;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::True;
};

// Cayley map of a skew-symmetric matrix; orthogonal with det +1.
Matrix cayley(const Matrix& a);

// Rotation minimizing |M R - M*|_F over SO(d), determinant corrected to +1.
Matrix procrustes(const Matrix& m, const Matrix& m_star);

// Batch-mean Shannon entropy of softmax(logits), natural log, max-shifted.
double loss_entropy(const Matrix& logits);
// d(loss_entropy)/d(logits)
Matrix loss_entropy_grad(const Matrix& logits);

// Eq.-style assignment loss: per task, mean squared distance between the
// normalized rotated feature and its mapped frame row. Zero-norm features
// are excluded from the mean; their count is reported via skipped.
double loss_align(std::span<const Matrix> features, std::span<const Matrix> rotations,
                  const ClassFrame& frame, const ClassMap& map,
                  std::span<const std::vector<int>> labels, int* skipped = nullptr);

// Sum over tasks of |R^t - procrustes(M^t, M^t*)|_F^2.
double loss_rotation(std::span<const Matrix> rotations,
                     std::span<const Matrix> class_means, const ClassFrame& frame,
                     const ClassMap& map);

// Normalized-feature class means, one row per local class; empty classes
// yield a zero row (count reported via empty_classes).
Matrix class_means(const Matrix& features, const std::vector<int>& labels,
                   Eigen::Index num_classes, int* empty_classes = nullptr);

// Joint lambda/rotation refinement on the merged toy model.
struct OptimState {
  FusionCoefficients lambda;
  std::vector<RotationParam> rotations;
};

struct EpochEval {
  LossReport losses;
  FusionCoefficients lambda_grad;   // d(entropy)/d(lambda)
  std::vector<Matrix> skew_grad;    // d(alpha*align + beta*rotation)/d(a_t)
  std::vector<Matrix> proc_targets; // per-task Procrustes rotations
};

class AlignmentProblem {
 public:
  AlignmentProblem(Checkpoint pretrained, std::map<std::string, Matrix> updates,
                   std::vector<Matrix> heads, ClassFrame frame, ClassMap map,
                   std::vector<SyntheticTask> tasks, OptimHp hp);

  OptimState initial_state() const;         // lambda = 1/T, R = I
  ToyNet merged(const OptimState& s) const; // theta0 + lambda^(l) S^(l)
  EpochEval evaluate(const OptimState& s) const;

  const OptimHp& hp() const { return hp_; }
  const ClassFrame& frame() const { return frame_; }

 private:
  Checkpoint pretrained_;
  std::map<std::string, Matrix> updates_;  // summed update per backbone layer
  std::vector<Matrix> heads_;
  ClassFrame frame_;
  ClassMap map_;
  std::vector<SyntheticTask> tasks_;
  OptimHp hp_;
};

struct OptimResult {
  FusionCoefficients lambda;
  std::vector<RotationParam> rotations;
  std::vector<LossReport> trace;  // per epoch, plus a final record
};

// Plain gradient descent; lambda follows the entropy term only, each skew
// parameter follows the align+rotation terms through the Cayley map.
// Aborts with NumericalError when the total loss turns non-finite; on_epoch
// (if set) sees every trace record before the abort can happen.
using EpochCallback = std::function<void(int epoch, const LossReport&)>;
OptimResult optimize(const AlignmentProblem& problem, const EpochCallback& on_epoch = {});

}  // namespace mda
