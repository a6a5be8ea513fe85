#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mda/etf.hpp"

namespace mda {

// NC1 collapse ratio: mean within-class scatter trace over mean squared
// distance of class means to the global mean. 0 = full collapse.
double nc1(const Matrix& features, const std::vector<int>& labels);

// NC2: Frobenius distance between the Gram of centered, normalized class
// means and the ideal ETF Gram.
double nc2(const Matrix& features, const std::vector<int>& labels,
           const ClassFrame& frame);

// NC3: mean over classes of 1 - cos(centered normalized mean, head column).
double nc3(const Matrix& centered_means, const Matrix& head);

// NC4: fraction of samples where the head argmax agrees with the nearest
// class mean. Ties go to the lowest class index.
double nc4(const Matrix& features, const std::vector<int>& labels,
           const Matrix& means, const Matrix& head);

struct LayerBound {
  double residual_energy = 0.0;  // |tau (I - Pi)|_F^2
  double stable_rank = 0.0;      // |tau|_F^2 / |tau|_2^2
};

struct BoundDiagnostics {
  std::map<std::string, LayerBound> layers;
  double bound_value = 0.0;
  double confidence_term = 0.0;
  double c = 1.0;  // absolute constant, fixed and echoed
};

// Theorem-style diagnostic: per-layer residual energy and stable rank, plus
// the scalar bound
//   sum_l (C/(C-1))^2 (L R / sqrt(n)) residual_l / |tau_l|_F
//     + c sqrt(log(1/delta)/n).
BoundDiagnostics bound_diagnostics(const std::map<std::string, Matrix>& tau_share,
                                   const std::map<Eigen::Index, ClassFrame>& frames,
                                   double lipschitz, double feature_radius,
                                   Eigen::Index n_samples, double delta);

struct NcSummary {
  double nc1 = 0.0, nc2 = 0.0, nc3 = 0.0, nc4 = 0.0;
};

struct MergeReport {
  std::string schema = "mda-report/1";
  std::string method;
  std::vector<double> per_task_accuracy;
  double mean_accuracy = 0.0;
  double delta_etf = 0.0;
  NcSummary nc;
  BoundDiagnostics bound;
  std::map<std::string, std::string> config;  // config echo, stringly
  std::uint64_t seed = 0;
  std::string timestamp;  // isolated; excluded from determinism comparisons

  std::string to_json() const;  // pretty, stable key order
  static MergeReport from_json(const std::string& text);
  std::string accuracy_csv() const;
};

}  // namespace mda
