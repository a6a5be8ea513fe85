#pragma once

#include <filesystem>
#include <optional>

#include "mda/feature_align.hpp"
#include "mda/metrics.hpp"

namespace mda {

// Default toy bench configuration (T=4 tasks of 3 classes, 16->32->8 net).
struct BenchSpec {
  int num_tasks = 4;
  Eigen::Index classes_per_task = 3;
  Eigen::Index d_in = 16;
  Eigen::Index d_h = 32;
  Eigen::Index d_feat = 8;
  Eigen::Index n_train_per_class = 50;
  Eigen::Index n_test_per_class = 25;
  double stddev = 0.5;
  std::uint64_t seed = 0;
  int train_epochs = 400;
  double train_lr = 0.05;
};

struct BenchData {
  BenchSpec spec;
  std::vector<SyntheticTask> tasks;
  Checkpoint pretrained;
  std::vector<Checkpoint> finetuned;

  std::vector<Matrix> heads() const;
  std::vector<TaskVector> task_vectors() const;
  ClassMap class_map() const;
};

BenchData gen_bench(const BenchSpec& spec);
void save_bench(const BenchData& bench, const std::filesystem::path& dir);
BenchData load_bench(const std::filesystem::path& dir);

struct MethodParams {
  MdaConfig mda;          // mda-ta knobs (num_classes filled from bench)
  OptimHp hp;             // mda-am knobs
  double ta_lambda = 0.3; // task-arithmetic baseline coefficient
};

struct MethodResult {
  std::string method;
  Checkpoint merged;
  std::optional<FusionCoefficients> lambda;      // mda-am
  std::optional<std::vector<RotationParam>> rotations;  // mda-am
  std::vector<LossReport> trace;                 // mda-am
  MergeReport report;
};

// method: pretrained | avg | ta | mda-ta | mda-am
MethodResult run_method(const BenchData& bench, const std::string& method,
                        const MethodParams& params,
                        const EpochCallback& on_epoch = {});

// Feature-space frame for the bench (dim = d_feat, C = total classes).
ClassFrame feature_frame(const BenchData& bench, std::uint64_t seed);

void write_loss_trace_jsonl(std::span<const LossReport> trace,
                            const std::filesystem::path& path);

void save_fusion(const FusionCoefficients& lambda, const std::filesystem::path& path);
FusionCoefficients load_fusion(const std::filesystem::path& path);

Checkpoint rotations_to_checkpoint(std::span<const RotationParam> rotations);
std::vector<RotationParam> rotations_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mda
