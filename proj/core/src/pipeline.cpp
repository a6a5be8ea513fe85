#include "mda/pipeline.hpp"

#include <fstream>

#include <json.hpp>

namespace mda {

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix();
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index jj = 0; jj < cols; ++jj)
      m(i, jj) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(jj)).get<double>();
  return m;
}

std::map<std::string, Matrix> weight_updates(const Checkpoint& merged,
                                             const Checkpoint& pretrained) {
  std::map<std::string, Matrix> updates;
  for (const auto& layer : pretrained.manifest) {
    if (layer.role != LayerRole::Weight2d) continue;
    updates.emplace(layer.name, merged.at(layer.name) - pretrained.at(layer.name));
  }
  return updates;
}

std::string format_double(double v) {
  nlohmann::json j = v;
  return j.dump();
}

}  // namespace

std::vector<Matrix> BenchData::heads() const {
  std::vector<Matrix> h;
  for (const auto& ckpt : finetuned) h.push_back(ckpt.at("head"));
  return h;
}

std::vector<TaskVector> BenchData::task_vectors() const {
  std::vector<TaskVector> vectors;
  for (std::size_t t = 0; t < finetuned.size(); ++t) {
    TaskVector tau = task_vector(pretrained, finetuned[t]);
    tau.task_id = "task_" + std::to_string(t);
    vectors.push_back(std::move(tau));
  }
  return vectors;
}

ClassMap BenchData::class_map() const {
  return ClassMap::uniform(spec.num_tasks, spec.classes_per_task);
}

BenchData gen_bench(const BenchSpec& spec) {
  BenchData bench;
  bench.spec = spec;
  bench.tasks = gen_tasks(spec.num_tasks, spec.classes_per_task, spec.d_in,
                          spec.n_train_per_class, spec.n_test_per_class,
                          spec.stddev, spec.seed);
  const ToyNet base = init_toynet(spec.d_in, spec.d_h, spec.d_feat,
                                  spec.classes_per_task, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  bench.pretrained = base.to_checkpoint();
  for (const auto& task : bench.tasks) {
    const ToyNet tuned = train(base, task, spec.train_epochs, spec.train_lr);
    bench.finetuned.push_back(tuned.to_checkpoint());
  }
  return bench;
}

void save_bench(const BenchData& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint(bench.pretrained, dir / "pretrained.mdat");
  for (std::size_t t = 0; t < bench.finetuned.size(); ++t)
    save_checkpoint(bench.finetuned[t], dir / ("task_" + std::to_string(t) + ".mdat"));

  nlohmann::ordered_json j;
  j["schema"] = "mda-bench/1";
  j["spec"] = {{"num_tasks", bench.spec.num_tasks},
               {"classes_per_task", bench.spec.classes_per_task},
               {"d_in", bench.spec.d_in},
               {"d_h", bench.spec.d_h},
               {"d_feat", bench.spec.d_feat},
               {"n_train_per_class", bench.spec.n_train_per_class},
               {"n_test_per_class", bench.spec.n_test_per_class},
               {"stddev", bench.spec.stddev},
               {"seed", bench.spec.seed},
               {"train_epochs", bench.spec.train_epochs},
               {"train_lr", bench.spec.train_lr}};
  nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
  for (const auto& task : bench.tasks) {
    tasks.push_back({{"task_id", task.task_id},
                     {"num_classes", task.num_classes},
                     {"stddev", task.stddev},
                     {"means", matrix_to_json(task.means)},
                     {"train_x", matrix_to_json(task.train_x)},
                     {"train_y", task.train_y},
                     {"test_x", matrix_to_json(task.test_x)},
                     {"test_y", task.test_y}});
  }
  j["tasks"] = std::move(tasks);
  std::ofstream out(dir / "tasks.json");
  if (!out) throw IoError("io", "cannot write " + (dir / "tasks.json").string());
  out << j.dump(1);
}

BenchData load_bench(const std::filesystem::path& dir) {
  std::ifstream in(dir / "tasks.json");
  if (!in) throw IoError("io", "cannot open " + (dir / "tasks.json").string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, true);
  if (j.at("schema").get<std::string>() != "mda-bench/1")
    throw InvalidArgument("unsupported bench schema");

  BenchData bench;
  const auto& s = j.at("spec");
  bench.spec.num_tasks = s.at("num_tasks").get<int>();
  bench.spec.classes_per_task = s.at("classes_per_task").get<Eigen::Index>();
  bench.spec.d_in = s.at("d_in").get<Eigen::Index>();
  bench.spec.d_h = s.at("d_h").get<Eigen::Index>();
  bench.spec.d_feat = s.at("d_feat").get<Eigen::Index>();
  bench.spec.n_train_per_class = s.at("n_train_per_class").get<Eigen::Index>();
  bench.spec.n_test_per_class = s.at("n_test_per_class").get<Eigen::Index>();
  bench.spec.stddev = s.at("stddev").get<double>();
  bench.spec.seed = s.at("seed").get<std::uint64_t>();
  bench.spec.train_epochs = s.at("train_epochs").get<int>();
  bench.spec.train_lr = s.at("train_lr").get<double>();

  for (const auto& tj : j.at("tasks")) {
    SyntheticTask task;
    task.task_id = tj.at("task_id").get<int>();
    task.num_classes = tj.at("num_classes").get<Eigen::Index>();
    task.stddev = tj.at("stddev").get<double>();
    task.means = matrix_from_json(tj.at("means"));
    task.train_x = matrix_from_json(tj.at("train_x"));
    task.train_y = tj.at("train_y").get<std::vector<int>>();
    task.test_x = matrix_from_json(tj.at("test_x"));
    task.test_y = tj.at("test_y").get<std::vector<int>>();
    bench.tasks.push_back(std::move(task));
  }

  bench.pretrained = load_checkpoint(dir / "pretrained.mdat");
  for (int t = 0; t < bench.spec.num_tasks; ++t)
    bench.finetuned.push_back(
        load_checkpoint(dir / ("task_" + std::to_string(t) + ".mdat")));
  return bench;
}

ClassFrame feature_frame(const BenchData& bench, std::uint64_t seed) {
  const Eigen::Index total = bench.spec.num_tasks * bench.spec.classes_per_task;
  ClassFrame frame = build_etf(total, bench.spec.d_feat, seed);

  // Orient the frame toward the fine-tuned head directions (class means and
  // classifier weights self-dualize under collapse, so the heads are the
  // natural anchors). A global rotation keeps all frame invariants.
  Matrix anchors(total, bench.spec.d_feat);
  const ClassMap map = bench.class_map();
  const std::vector<Matrix> heads = bench.heads();
  for (std::size_t t = 0; t < heads.size(); ++t) {
    for (Eigen::Index c = 0; c < heads[t].cols(); ++c) {
      Eigen::RowVectorXd w = heads[t].col(c).transpose();
      const double n = w.norm();
      anchors.row(map.global(static_cast<int>(t), static_cast<int>(c))) =
          n > 0.0 ? (w / n).eval() : w;
    }
  }
  frame.w = frame.w * procrustes(frame.w, anchors);
  return frame;
}

MethodResult run_method(const BenchData& bench, const std::string& method,
                        const MethodParams& params, const EpochCallback& on_epoch) {
  MethodResult result;
  result.method = method;

  MdaConfig cfg = params.mda;
  cfg.num_classes = bench.spec.num_tasks * bench.spec.classes_per_task;

  const std::vector<TaskVector> vectors = bench.task_vectors();
  std::optional<SharedSubspace> subspace;

  if (method == "pretrained") {
    result.merged = bench.pretrained;
  } else if (method == "avg") {
    result.merged = merge_weight_average(bench.finetuned);
  } else if (method == "ta") {
    result.merged = merge_task_arithmetic(bench.pretrained, vectors, params.ta_lambda);
  } else if (method == "mda-ta" || method == "mda-am") {
    MdaMergeResult mda = merge_mda_ta(bench.pretrained, vectors, cfg);
    subspace = std::move(mda.subspace);
    result.merged = std::move(mda.merged);
    if (method == "mda-am") {
      // Refinement starts from the aligned merge: lambda is learnable and
      // initialized at 1/T, so the update matrices are scaled by T times the
      // coefficient the aligned merge applied, making the initial state
      // coincide with the aligned merged model.
      const double boost = static_cast<double>(bench.spec.num_tasks) * cfg.lambda_default;
      std::map<std::string, Matrix> updates;
      for (const auto& [name, mats] : mda.updates) {
        Matrix sum = Matrix::Zero(mats[0].rows(), mats[0].cols());
        for (const Matrix& m : mats) sum += m;
        updates.emplace(name, boost * sum);
      }
      for (const auto& [name, sum] : mda.bias_sum) updates.emplace(name, boost * sum);

      AlignmentProblem problem(bench.pretrained, updates, bench.heads(),
                               feature_frame(bench, cfg.seed), bench.class_map(),
                               bench.tasks, params.hp);
      OptimResult opt = optimize(problem, on_epoch);
      result.trace = opt.trace;
      result.lambda = opt.lambda;
      OptimState final_state{opt.lambda, opt.rotations};
      result.merged = problem.merged(final_state).to_checkpoint();
      result.rotations = std::move(opt.rotations);
    }
  } else {
    throw InvalidArgument("unknown method: " + method);
  }

  // --- evaluation ---
  const ToyNet backbone = ToyNet::from_checkpoint(result.merged);
  std::vector<Matrix> rot_mats;
  if (result.rotations) {
    for (const auto& r : *result.rotations) rot_mats.push_back(r.r);
  }
  const EvalResult eval =
      evaluate(backbone, bench.heads(), result.rotations ? &rot_mats : nullptr,
               bench.tasks, ClassifierMode::Head);

  MergeReport& report = result.report;
  report.method = method;
  report.per_task_accuracy = eval.per_task;
  report.mean_accuracy = eval.mean;
  report.seed = bench.spec.seed;

  // --- delta_etf: alignment of this method's weight updates vs the plain
  // task-arithmetic updates, against the ETF-projected TA direction ---
  {
    std::map<std::string, Matrix> mine = weight_updates(result.merged, bench.pretrained);
    std::vector<Matrix> a, b, targets;
    bool degenerate = false;
    for (const auto& [name, update] : mine) {
      Matrix ta_update = Matrix::Zero(update.rows(), update.cols());
      for (const auto& tau : vectors) ta_update += tau.layers.at(name);
      const ClassFrame frame = build_etf(cfg.num_classes, update.cols(), cfg.seed);
      const AlignOperator op = align_operator(frame);
      const Matrix target = ta_update * (op.p / op.scale);
      if (update.norm() == 0.0 || ta_update.norm() == 0.0 || target.norm() == 0.0)
        degenerate = true;
      a.push_back(update);
      b.push_back(ta_update);
      targets.push_back(target);
    }
    report.delta_etf = degenerate ? 0.0 : delta_etf(a, b, targets);
  }

  // --- neural collapse diagnostics on pooled test features ---
  {
    const ClassFrame frame = feature_frame(bench, cfg.seed);
    const ClassMap map = bench.class_map();
    Eigen::Index total_rows = 0;
    for (const auto& task : bench.tasks) total_rows += task.test_x.rows();
    Matrix features(total_rows, bench.spec.d_feat);
    std::vector<int> labels;
    Matrix global_head(bench.spec.d_feat, map.total);
    const std::vector<Matrix> heads = bench.heads();
    Eigen::Index row = 0;
    for (std::size_t t = 0; t < bench.tasks.size(); ++t) {
      const ForwardCache cache = forward(backbone, bench.tasks[t].test_x);
      Matrix feats = cache.features;
      if (result.rotations) feats = feats * rot_mats[t];
      features.middleRows(row, feats.rows()) = feats;
      row += feats.rows();
      for (int y : bench.tasks[t].test_y)
        labels.push_back(static_cast<int>(map.global(static_cast<int>(t), y)));
      global_head.middleCols(map.offsets[t], bench.tasks[t].num_classes) = heads[t];
    }
    report.nc.nc1 = nc1(features, labels);
    report.nc.nc2 = nc2(features, labels, frame);

    Matrix means = Matrix::Zero(map.total, bench.spec.d_feat);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(map.total), 0);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      means.row(labels[static_cast<std::size_t>(i)]) += features.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    const Eigen::RowVectorXd global_mean = features.colwise().mean();
    Matrix centered(map.total, bench.spec.d_feat);
    for (Eigen::Index c = 0; c < map.total; ++c) {
      means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      centered.row(c) = means.row(c) - global_mean;
    }
    report.nc.nc3 = nc3(centered, global_head);
    report.nc.nc4 = nc4(features, labels, means, global_head);

    // --- bound diagnostics on the applied weight updates ---
    std::map<std::string, Matrix> tau =
        subspace ? [&] {
          std::map<std::string, Matrix> m;
          for (const auto& [name, layer] : subspace->layers)
            m.emplace(name, layer.tau_share);
          return m;
        }()
                 : weight_updates(result.merged, bench.pretrained);
    std::map<Eigen::Index, ClassFrame> frames;
    for (const auto& [name, t] : tau)
      if (!frames.count(t.cols()))
        frames.emplace(t.cols(), build_etf(cfg.num_classes, t.cols(), cfg.seed));
    double feat_radius = 0.0;
    for (Eigen::Index i = 0; i < features.rows(); ++i)
      feat_radius = std::max(feat_radius, features.row(i).norm());
    Eigen::Index n_train = 0;
    for (const auto& task : bench.tasks) n_train += task.train_x.rows();
    bool any_zero = false;
    for (const auto& [name, t] : tau)
      if (t.norm() == 0.0) any_zero = true;
    if (!any_zero)
      report.bound = bound_diagnostics(tau, frames, 1.0, feat_radius, n_train, 0.05);
  }

  // --- config echo ---
  report.config["method"] = method;
  report.config["bench_seed"] = std::to_string(bench.spec.seed);
  report.config["num_tasks"] = std::to_string(bench.spec.num_tasks);
  report.config["classes_per_task"] = std::to_string(bench.spec.classes_per_task);
  report.config["d_in"] = std::to_string(bench.spec.d_in);
  report.config["d_h"] = std::to_string(bench.spec.d_h);
  report.config["d_feat"] = std::to_string(bench.spec.d_feat);
  report.config["stddev"] = format_double(bench.spec.stddev);
  report.config["ta_lambda"] = format_double(params.ta_lambda);
  report.config["k_fraction"] = format_double(cfg.k_fraction);
  report.config["target"] = cfg.target == AlignTarget::Etf        ? "etf"
                            : cfg.target == AlignTarget::Orthogonal ? "orthogonal"
                                                                    : "low-rank";
  report.config["mode"] =
      cfg.mode == AlignMode::Shared ? "shared" : "per-task-projection";
  report.config["lambda_default"] = format_double(cfg.lambda_default);
  report.config["norm_match"] = cfg.norm_match ? "true" : "false";
  report.config["alpha"] = format_double(params.hp.alpha);
  report.config["beta"] = format_double(params.hp.beta);
  report.config["lr"] = format_double(params.hp.lr);
  report.config["epochs"] = std::to_string(params.hp.epochs);
  report.config["label_mode"] =
      params.hp.label_mode == LabelMode::True ? "true" : "pseudo";
  report.config["mda_seed"] = std::to_string(cfg.seed);
  return result;
}

void write_loss_trace_jsonl(std::span<const LossReport> trace,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("io", "cannot write " + path.string());
  for (std::size_t e = 0; e < trace.size(); ++e) {
    nlohmann::ordered_json j = {{"epoch", e},
                                {"entropy", trace[e].entropy},
                                {"align", trace[e].align},
                                {"rotation", trace[e].rotation},
                                {"total", trace[e].total}};
    out << j.dump() << "\n";
  }
}

void save_fusion(const FusionCoefficients& lambda, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  for (const auto& [name, value] : lambda) j[name] = value;
  std::ofstream out(path);
  if (!out) throw IoError("io", "cannot write " + path.string());
  out << j.dump(2);
}

FusionCoefficients load_fusion(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("io", "cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  FusionCoefficients lambda;
  for (const auto& [name, value] : j.items()) lambda[name] = value.get<double>();
  return lambda;
}

Checkpoint rotations_to_checkpoint(std::span<const RotationParam> rotations) {
  Checkpoint ckpt;
  for (const auto& rot : rotations) {
    ckpt.add("rotation/a/" + std::to_string(rot.task_id), rot.a, LayerRole::Weight2d);
  }
  return ckpt;
}

std::vector<RotationParam> rotations_from_checkpoint(const Checkpoint& ckpt) {
  std::vector<RotationParam> rotations;
  for (const auto& layer : ckpt.manifest) {
    RotationParam rot;
    rot.task_id = static_cast<int>(rotations.size());
    rot.a = ckpt.at(layer.name);
    rot.refresh();
    rotations.push_back(std::move(rot));
  }
  return rotations;
}

}  // namespace mda
