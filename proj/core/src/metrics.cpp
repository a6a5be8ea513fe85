#include "mda/metrics.hpp"

#include <cmath>

#include <json.hpp>

namespace mda {

namespace {

struct ClassStats {
  Matrix means;                      // C x d, raw feature means
  Eigen::RowVectorXd global_mean;    // 1 x d
  std::vector<Eigen::Index> counts;
  Eigen::Index num_classes = 0;
};

ClassStats raw_class_stats(const Matrix& features, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DimensionError("class stats: feature/label size mismatch");
  int cmax = -1;
  for (int y : labels) cmax = std::max(cmax, y);
  if (cmax < 0) throw InvalidArgument("class stats: empty input");
  ClassStats st;
  st.num_classes = cmax + 1;
  st.means = Matrix::Zero(st.num_classes, features.cols());
  st.counts.assign(static_cast<std::size_t>(st.num_classes), 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    st.means.row(labels[static_cast<std::size_t>(i)]) += features.row(i);
    ++st.counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (Eigen::Index c = 0; c < st.num_classes; ++c) {
    if (st.counts[static_cast<std::size_t>(c)] == 0)
      throw InvalidArgument("class stats: class " + std::to_string(c) + " empty");
    st.means.row(c) /= static_cast<double>(st.counts[static_cast<std::size_t>(c)]);
  }
  st.global_mean = features.colwise().mean();
  return st;
}

}  // namespace

double nc1(const Matrix& features, const std::vector<int>& labels) {
  const ClassStats st = raw_class_stats(features, labels);
  if (st.num_classes < 2) throw InvalidArgument("nc1: needs >=2 classes");

  double within = 0.0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const Eigen::RowVectorXd dev =
        features.row(i) - st.means.row(labels[static_cast<std::size_t>(i)]);
    within += dev.squaredNorm() /
              static_cast<double>(st.counts[static_cast<std::size_t>(
                  labels[static_cast<std::size_t>(i)])]);
  }
  within /= static_cast<double>(st.num_classes);  // mean over classes of tr(Sigma_W^c)

  double between = 0.0;
  for (Eigen::Index c = 0; c < st.num_classes; ++c)
    between += (st.means.row(c) - st.global_mean).squaredNorm();
  between /= static_cast<double>(st.num_classes);
  if (between == 0.0) throw DegenerateInput("nc1: coincident class means");
  return within / between;
}

double nc2(const Matrix& features, const std::vector<int>& labels,
           const ClassFrame& frame) {
  const ClassStats st = raw_class_stats(features, labels);
  const Eigen::Index c = st.num_classes;
  if (c < 2) throw InvalidArgument("nc2: needs >=2 classes");

  Matrix centered(c, features.cols());
  for (Eigen::Index i = 0; i < c; ++i) {
    const Eigen::RowVectorXd v = st.means.row(i) - st.global_mean;
    const double n = v.norm();
    if (n < 1e-12) throw DegenerateInput("nc2: class mean at global mean");
    centered.row(i) = v / n;
  }
  const Matrix gram = centered * centered.transpose();
  const Eigen::Index cc = frame.num_classes;
  Matrix ideal = Matrix::Constant(c, c, -1.0 / static_cast<double>(cc - 1));
  ideal.diagonal().setConstant(1.0);
  return (gram - ideal).norm();
}

double nc3(const Matrix& centered_means, const Matrix& head) {
  if (centered_means.rows() != head.cols())
    throw DimensionError("nc3: one head column per class required");
  double total = 0.0;
  for (Eigen::Index c = 0; c < centered_means.rows(); ++c) {
    const double nm = centered_means.row(c).norm();
    const double nw = head.col(c).norm();
    if (nm < 1e-12 || nw < 1e-12) throw DegenerateInput("nc3: zero-norm vector");
    total += 1.0 - centered_means.row(c).dot(head.col(c).transpose()) / (nm * nw);
  }
  return total / static_cast<double>(centered_means.rows());
}

double nc4(const Matrix& features, const std::vector<int>& labels,
           const Matrix& means, const Matrix& head) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DimensionError("nc4: feature/label size mismatch");
  Eigen::Index agree = 0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Eigen::Index best_head = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < head.cols(); ++c) {
      const double s = features.row(i).dot(head.col(c).transpose());
      if (s > best_score) {  // strict: ties keep the lowest index
        best_score = s;
        best_head = c;
      }
    }
    Eigen::Index best_mean = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < means.rows(); ++c) {
      const double d = (features.row(i) - means.row(c)).norm();
      if (d < best_dist) {
        best_dist = d;
        best_mean = c;
      }
    }
    if (best_head == best_mean) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(features.rows());
}

BoundDiagnostics bound_diagnostics(const std::map<std::string, Matrix>& tau_share,
                                   const std::map<Eigen::Index, ClassFrame>& frames,
                                   double lipschitz, double feature_radius,
                                   Eigen::Index n_samples, double delta) {
  if (n_samples < 1 || delta <= 0.0 || delta >= 1.0)
    throw InvalidArgument("bound_diagnostics: need n >= 1 and delta in (0,1)");
  BoundDiagnostics diag;
  const double sqrt_n = std::sqrt(static_cast<double>(n_samples));
  double sum_terms = 0.0;
  for (const auto& [name, tau] : tau_share) {
    auto fit = frames.find(tau.cols());
    if (fit == frames.end())
      throw DimensionError("bound_diagnostics: no frame for width " +
                           std::to_string(tau.cols()));
    const ClassFrame& frame = fit->second;
    const AlignOperator op = align_operator(frame);
    const Matrix pi = op.p / op.scale;
    const Matrix residual = tau - tau * pi;

    LayerBound lb;
    lb.residual_energy = residual.squaredNorm();
    const SvdFactors f = svd(tau, name);
    const double top = f.s(0);
    lb.stable_rank = (top > 0.0) ? tau.squaredNorm() / (top * top) : 0.0;
    diag.layers.emplace(name, lb);

    const double fro = tau.norm();
    if (fro > 0.0) {
      sum_terms += op.scale * op.scale * (lipschitz * feature_radius / sqrt_n) *
                   lb.residual_energy / fro;
    }
  }
  diag.confidence_term =
      diag.c * std::sqrt(std::log(1.0 / delta) / static_cast<double>(n_samples));
  diag.bound_value = sum_terms + diag.confidence_term;
  return diag;
}

std::string MergeReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = schema;
  j["method"] = method;
  j["per_task_accuracy"] = per_task_accuracy;
  j["mean_accuracy"] = mean_accuracy;
  j["delta_etf"] = delta_etf;
  j["nc"] = {{"nc1", nc.nc1}, {"nc2", nc.nc2}, {"nc3", nc.nc3}, {"nc4", nc.nc4}};
  nlohmann::ordered_json layers = nlohmann::ordered_json::object();
  for (const auto& [name, lb] : bound.layers)
    layers[name] = {{"residual_energy", lb.residual_energy},
                    {"stable_rank", lb.stable_rank}};
  j["bound"] = {{"layers", layers},
                {"bound_value", bound.bound_value},
                {"confidence_term", bound.confidence_term},
                {"c", bound.c}};
  j["config"] = config;
  j["seed"] = seed;
  j["timestamp"] = timestamp;
  return j.dump(2);
}

MergeReport MergeReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MergeReport r;
  r.schema = j.at("schema").get<std::string>();
  if (r.schema != "mda-report/1")
    throw InvalidArgument("unsupported report schema: " + r.schema);
  r.method = j.at("method").get<std::string>();
  r.per_task_accuracy = j.at("per_task_accuracy").get<std::vector<double>>();
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  r.delta_etf = j.at("delta_etf").get<double>();
  r.nc.nc1 = j.at("nc").at("nc1").get<double>();
  r.nc.nc2 = j.at("nc").at("nc2").get<double>();
  r.nc.nc3 = j.at("nc").at("nc3").get<double>();
  r.nc.nc4 = j.at("nc").at("nc4").get<double>();
  for (const auto& [name, lb] : j.at("bound").at("layers").items()) {
    LayerBound b;
    b.residual_energy = lb.at("residual_energy").get<double>();
    b.stable_rank = lb.at("stable_rank").get<double>();
    r.bound.layers.emplace(name, b);
  }
  r.bound.bound_value = j.at("bound").at("bound_value").get<double>();
  r.bound.confidence_term = j.at("bound").at("confidence_term").get<double>();
  r.bound.c = j.at("bound").at("c").get<double>();
  r.config = j.at("config").get<std::map<std::string, std::string>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.timestamp = j.at("timestamp").get<std::string>();
  return r;
}

std::string MergeReport::accuracy_csv() const {
  std::string csv = "method,task,accuracy\n";
  for (std::size_t t = 0; t < per_task_accuracy.size(); ++t)
    csv += method + "," + std::to_string(t) + "," +
           std::to_string(per_task_accuracy[t]) + "\n";
  csv += method + ",mean," + std::to_string(mean_accuracy) + "\n";
  return csv;
}

}  // namespace mda
