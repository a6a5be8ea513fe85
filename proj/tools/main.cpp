// mda: merge toy-bench checkpoints with directional alignment and inspect
// the resulting geometry.

#include <chrono>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "mda/pipeline.hpp"

namespace {

using namespace mda;

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

void apply_thread_cap() {
  if (const char* env = std::getenv("MDA_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

struct MergeFlags {
  std::string bench_dir;
  std::string method = "mda-ta";
  std::string out;
  double lambda = 1.0;
  double ta_lambda = 0.3;
  std::string target = "etf";
  double k_frac = 0.0;
  std::string mode = "shared";
  bool no_norm_match = false;
  std::uint64_t seed = 0;
};

MethodParams to_params(const MergeFlags& flags) {
  MethodParams params;
  params.ta_lambda = flags.ta_lambda;
  params.mda.lambda_default = flags.lambda;
  params.mda.k_fraction = flags.k_frac;
  params.mda.norm_match = !flags.no_norm_match;
  params.mda.seed = flags.seed;
  if (flags.target == "etf") params.mda.target = AlignTarget::Etf;
  else if (flags.target == "orthogonal") params.mda.target = AlignTarget::Orthogonal;
  else if (flags.target == "low-rank") params.mda.target = AlignTarget::LowRank;
  else throw CLI::ValidationError("--target must be etf|orthogonal|low-rank");
  if (flags.mode == "shared") params.mda.mode = AlignMode::Shared;
  else if (flags.mode == "per-task-projection")
    params.mda.mode = AlignMode::PerTaskProjection;
  else throw CLI::ValidationError("--mode must be shared|per-task-projection");
  return params;
}

void write_report(MergeReport report, const std::string& path) {
  report.timestamp = iso_timestamp();
  std::ofstream out(path);
  if (!out) throw IoError("io", "cannot write " + path);
  out << report.to_json() << "\n";
  std::cout << report.method << ": mean accuracy "
            << report.mean_accuracy << ", delta_etf " << report.delta_etf << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"model merging with directional parameter/feature alignment"};
  app.require_subcommand(1);

  // ---- gen ----
  BenchSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate and train a synthetic bench");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--tasks", spec.num_tasks);
  gen->add_option("--classes-per-task", spec.classes_per_task);
  gen->add_option("--din", spec.d_in);
  gen->add_option("--dhid", spec.d_h);
  gen->add_option("--dfeat", spec.d_feat);
  gen->add_option("--train-per-class", spec.n_train_per_class);
  gen->add_option("--test-per-class", spec.n_test_per_class);
  gen->add_option("--stddev", spec.stddev);
  gen->add_option("--seed", spec.seed);
  gen->add_option("--train-epochs", spec.train_epochs);
  gen->add_option("--train-lr", spec.train_lr);

  // ---- merge ----
  MergeFlags mf;
  std::string merge_report_path;
  auto* merge = app.add_subcommand("merge", "run a data-free merge");
  merge->add_option("--bench", mf.bench_dir, "bench directory")->required();
  merge->add_option("--method", mf.method, "avg|ta|mda-ta")->required();
  merge->add_option("--out", mf.out, "merged checkpoint path")->required();
  merge->add_option("--lambda", mf.lambda, "fusion coefficient (mda-ta)");
  merge->add_option("--ta-lambda", mf.ta_lambda, "fusion coefficient (ta)");
  merge->add_option("--target", mf.target, "etf|orthogonal|low-rank");
  merge->add_option("--k-frac", mf.k_frac, "per-task rank fraction of d_out");
  merge->add_option("--mode", mf.mode, "shared|per-task-projection");
  merge->add_flag("--no-norm-match", mf.no_norm_match);
  merge->add_option("--seed", mf.seed, "frame seed");
  merge->add_option("--report", merge_report_path, "also write a MergeReport");

  // ---- align ----
  MergeFlags af;
  OptimHp hp;
  hp.epochs = 150;
  std::string align_out_dir;
  std::string label_mode = "true";
  auto* align = app.add_subcommand("align", "mda-am refinement on top of mda-ta");
  align->add_option("--bench", af.bench_dir)->required();
  align->add_option("--out", align_out_dir, "output directory")->required();
  align->add_option("--lambda", af.lambda);
  align->add_option("--target", af.target);
  align->add_option("--k-frac", af.k_frac);
  align->add_option("--mode", af.mode);
  align->add_flag("--no-norm-match", af.no_norm_match);
  align->add_option("--seed", af.seed);
  align->add_option("--alpha", hp.alpha);
  align->add_option("--beta", hp.beta);
  align->add_option("--lr", hp.lr);
  align->add_option("--epochs", hp.epochs);
  align->add_option("--label-mode", label_mode, "true|pseudo");

  // ---- eval ----
  std::string eval_bench, eval_merged, eval_rotations, eval_fusion, eval_report;
  std::string eval_method = "merged";
  auto* eval = app.add_subcommand("eval", "evaluate a merged checkpoint");
  eval->add_option("--bench", eval_bench)->required();
  eval->add_option("--merged", eval_merged)->required();
  eval->add_option("--rotations", eval_rotations);
  eval->add_option("--report", eval_report)->required();
  eval->add_option("--method-name", eval_method, "method label for the report");

  // ---- etf ----
  Eigen::Index etf_classes = 0, etf_dim = 0;
  std::uint64_t etf_seed = 0;
  auto* etf = app.add_subcommand("etf", "build a frame and print Gram deviation");
  etf->add_option("--classes", etf_classes)->required();
  etf->add_option("--dim", etf_dim)->required();
  etf->add_option("--seed", etf_seed);

  // ---- inspect ----
  std::string ins_bench, ins_merged, ins_baseline;
  std::uint64_t ins_seed = 0;
  auto* inspect = app.add_subcommand("inspect", "print delta_etf, NC, bound diagnostics");
  inspect->add_option("--bench", ins_bench)->required();
  inspect->add_option("--merged", ins_merged)->required();
  inspect->add_option("--seed", ins_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const BenchData bench = gen_bench(spec);
      save_bench(bench, gen_out);
      std::cout << "bench written to " << gen_out << "\n";
    } else if (merge->parsed()) {
      if (mf.method != "avg" && mf.method != "ta" && mf.method != "mda-ta")
        throw CLI::ValidationError("--method must be avg|ta|mda-ta");
      const BenchData bench = load_bench(mf.bench_dir);
      MergeFlags f = mf;
      if (mf.method == "ta") f.ta_lambda = mf.ta_lambda;
      MethodResult result = run_method(bench, mf.method, to_params(f));
      save_checkpoint(result.merged, mf.out);
      std::cout << "merged checkpoint written to " << mf.out << "\n";
      if (!merge_report_path.empty()) write_report(result.report, merge_report_path);
    } else if (align->parsed()) {
      const BenchData bench = load_bench(af.bench_dir);
      MethodParams params = to_params(af);
      params.hp = hp;
      if (label_mode == "pseudo") params.hp.label_mode = LabelMode::Pseudo;
      else if (label_mode != "true")
        throw CLI::ValidationError("--label-mode must be true|pseudo");
      std::filesystem::create_directories(align_out_dir);
      const std::filesystem::path dir(align_out_dir);
      std::ofstream trace_out(dir / "loss_trace.jsonl");
      MethodResult result = run_method(
          bench, "mda-am", params, [&](int epoch, const LossReport& l) {
            trace_out << "{\"epoch\":" << epoch << ",\"entropy\":" << l.entropy
                      << ",\"align\":" << l.align << ",\"rotation\":" << l.rotation
                      << ",\"total\":" << l.total << "}\n";
            trace_out.flush();
          });
      save_checkpoint(result.merged, dir / "merged.mdat");
      save_fusion(*result.lambda, dir / "fusion.json");
      save_checkpoint(rotations_to_checkpoint(*result.rotations),
                      dir / "rotations.mdat");
      write_report(result.report, (dir / "report.json").string());
    } else if (eval->parsed()) {
      const BenchData bench = load_bench(eval_bench);
      const Checkpoint merged = load_checkpoint(eval_merged);
      const ToyNet backbone = ToyNet::from_checkpoint(merged);
      std::vector<Matrix> rot_mats;
      bool have_rot = false;
      if (!eval_rotations.empty()) {
        for (const auto& r : rotations_from_checkpoint(load_checkpoint(eval_rotations)))
          rot_mats.push_back(r.r);
        have_rot = true;
      }
      const EvalResult res =
          evaluate(backbone, bench.heads(), have_rot ? &rot_mats : nullptr,
                   bench.tasks, ClassifierMode::Head);
      MergeReport report;
      report.method = eval_method;
      report.per_task_accuracy = res.per_task;
      report.mean_accuracy = res.mean;
      report.seed = bench.spec.seed;
      report.config["bench_seed"] = std::to_string(bench.spec.seed);
      write_report(report, eval_report);
    } else if (etf->parsed()) {
      const ClassFrame frame = build_etf(etf_classes, etf_dim, etf_seed);
      double max_dev = 0.0;
      if (frame.kind == FrameKind::EtfExact) {
        const Matrix gram = frame.w * frame.w.transpose();
        const double off = -1.0 / static_cast<double>(etf_classes - 1);
        for (Eigen::Index i = 0; i < gram.rows(); ++i)
          for (Eigen::Index j = 0; j < gram.cols(); ++j)
            max_dev = std::max(max_dev,
                               std::abs(gram(i, j) - (i == j ? 1.0 : off)));
      } else {
        const Matrix gram = frame.w.transpose() * frame.w;
        const double scale =
            static_cast<double>(etf_classes) / (etf_classes - 1);
        max_dev = (gram - scale * Matrix::Identity(etf_dim, etf_dim))
                      .cwiseAbs()
                      .maxCoeff();
      }
      std::cout << "kind=" << to_string(frame.kind)
                << " construction="
                << (frame.construction == FrameConstruction::QrBased ? "qr-based"
                                                                      : "svd-based")
                << " max-gram-deviation=" << max_dev << "\n";
    } else if (inspect->parsed()) {
      const BenchData bench = load_bench(ins_bench);
      const Checkpoint merged = load_checkpoint(ins_merged);
      // re-derive the diagnostics the report pipeline computes
      MethodParams params;
      params.mda.seed = ins_seed;
      MethodResult base = run_method(bench, "pretrained", params);
      MergeReport report = base.report;

      const ToyNet backbone = ToyNet::from_checkpoint(merged);
      const EvalResult res = evaluate(backbone, bench.heads(), nullptr, bench.tasks,
                                      ClassifierMode::Head);
      std::cout << "mean accuracy: " << res.mean << "\n";
      std::map<std::string, Matrix> tau;
      std::map<Eigen::Index, ClassFrame> frames;
      const Eigen::Index c = bench.spec.num_tasks * bench.spec.classes_per_task;
      std::vector<Matrix> a, b, targets;
      const std::vector<TaskVector> vectors = bench.task_vectors();
      for (const auto& layer : bench.pretrained.manifest) {
        if (layer.role != LayerRole::Weight2d) continue;
        Matrix update = merged.at(layer.name) - bench.pretrained.at(layer.name);
        Matrix ta_update = Matrix::Zero(update.rows(), update.cols());
        for (const auto& v : vectors) ta_update += v.layers.at(layer.name);
        if (!frames.count(update.cols()))
          frames.emplace(update.cols(), build_etf(c, update.cols(), ins_seed));
        const AlignOperator op = align_operator(frames.at(update.cols()));
        targets.push_back(ta_update * (op.p / op.scale));
        a.push_back(update);
        b.push_back(ta_update);
        tau.emplace(layer.name, std::move(update));
      }
      std::cout << "delta_etf vs ta: " << delta_etf(a, b, targets) << "\n";
      Eigen::Index n_train = 0;
      for (const auto& task : bench.tasks) n_train += task.train_x.rows();
      const BoundDiagnostics diag =
          bound_diagnostics(tau, frames, 1.0, 1.0, n_train, 0.05);
      for (const auto& [name, lb] : diag.layers)
        std::cout << name << ": residual_energy=" << lb.residual_energy
                  << " stable_rank=" << lb.stable_rank << "\n";
      std::cout << "bound_value=" << diag.bound_value << "\n";
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
