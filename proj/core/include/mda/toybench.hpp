#pragma once

#include <optional>
#include <vector>

#include "mda/chkpt.hpp"
#include "mda/etf.hpp"

namespace mda {

// One synthetic classification task: isotropic Gaussian clouds around
// well-separated class means. Samples are stored as rows.
struct SyntheticTask {
  int task_id = 0;
  Eigen::Index num_classes = 0;
  Matrix means;  // C_t x d_in
  double stddev = 0.0;
  Matrix train_x;
  std::vector<int> train_y;
  Matrix test_x;
  std::vector<int> test_y;
};

// Two-layer backbone (rectifier hidden) producing a d-dim feature, plus a
// per-task linear head. Layer roles: w1,w2 weight-2d; b1,b2 bias-1d; head head.
struct ToyNet {
  Matrix w1;  // d_in x d_h
  Matrix b1;  // 1 x d_h
  Matrix w2;  // d_h x d
  Matrix b2;  // 1 x d
  Matrix head;  // d x C_t

  Checkpoint to_checkpoint() const;
  static ToyNet from_checkpoint(const Checkpoint& ckpt);
};

struct ForwardCache {
  Matrix x;         // n x d_in
  Matrix pre1;      // n x d_h, pre-activation
  Matrix h1;        // n x d_h
  Matrix features;  // n x d
  Matrix logits;    // n x C_t
};

struct Gradients {
  Matrix w1, b1, w2, b2, head;
};

// Class means drawn on a sphere of radius 5, rejection-sampled until every
// pair of means (across all tasks) is at least 4*stddev apart.
std::vector<SyntheticTask> gen_tasks(int num_tasks, Eigen::Index classes_per_task,
                                     Eigen::Index d_in, Eigen::Index n_train_per_class,
                                     Eigen::Index n_test_per_class, double stddev,
                                     std::uint64_t seed);

ToyNet init_toynet(Eigen::Index d_in, Eigen::Index d_h, Eigen::Index d_feat,
                   Eigen::Index num_classes, std::uint64_t seed);

ForwardCache forward(const ToyNet& net, const Matrix& x);

// Reverse-mode gradients of a scalar loss given dL/dfeatures and (optionally)
// dL/dlogits. Both contributions are chained through the backbone.
Gradients backward(const ToyNet& net, const ForwardCache& cache,
                   const Matrix& dloss_dfeatures, const Matrix* dloss_dlogits);

// dL/dfeatures for a loss expressed on the logits.
Matrix feature_grad_from_logits(const ToyNet& net, const Matrix& dloss_dlogits);

// Softmax cross-entropy, full-batch gradient descent. Deterministic.
ToyNet train(const ToyNet& net, const SyntheticTask& task, int epochs, double lr);

double softmax_xent(const Matrix& logits, const std::vector<int>& labels,
                    Matrix* dloss_dlogits);

enum class ClassifierMode { Head, EtfNearest };

struct EvalResult {
  std::vector<double> per_task;
  double mean = 0.0;
};

// Merged backbone, per-task heads, optional per-task rotations acting on
// feature rows (h_row * R). EtfNearest scores rotated features against the
// task's block of frame rows.
EvalResult evaluate(const ToyNet& backbone, const std::vector<Matrix>& heads,
                    const std::vector<Matrix>* rotations,
                    const std::vector<SyntheticTask>& tasks, ClassifierMode mode,
                    const ClassFrame* frame = nullptr);

}  // namespace mda
