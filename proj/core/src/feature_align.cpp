#include "mda/feature_align.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace mda {

namespace {

Matrix cayley_inverse_factor(const Matrix& a) {
  const Eigen::Index d = a.rows();
  Eigen::FullPivLU<Matrix> lu(Matrix::Identity(d, d) + a);
  if (!lu.isInvertible())
    throw DegenerateInput("cayley: (I + a) is singular");
  return lu.inverse();
}

}  // namespace

RotationParam RotationParam::identity(int task_id, Eigen::Index dim) {
  RotationParam p;
  p.task_id = task_id;
  p.a = Matrix::Zero(dim, dim);
  p.r = Matrix::Identity(dim, dim);
  return p;
}

void RotationParam::refresh() { r = cayley(a); }

ClassMap ClassMap::uniform(int num_tasks, Eigen::Index classes_per_task) {
  ClassMap map;
  for (int t = 0; t < num_tasks; ++t)
    map.offsets.push_back(t * classes_per_task);
  map.total = num_tasks * classes_per_task;
  return map;
}

Matrix cayley(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("cayley: square matrix required");
  if ((a + a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + a.cwiseAbs().maxCoeff()))
    throw InvalidArgument("cayley: input not skew-symmetric");
  const Eigen::Index d = a.rows();
  return (Matrix::Identity(d, d) - a) * cayley_inverse_factor(a);
}

Matrix procrustes(const Matrix& m, const Matrix& m_star) {
  if (m.rows() != m_star.rows() || m.cols() != m_star.cols())
    throw DimensionError("procrustes: shape mismatch");
  if (m.norm() == 0.0 || m_star.norm() == 0.0)
    throw DegenerateInput("procrustes: all-zero input");
  const Eigen::Index d = m.cols();
  const Matrix h = m.transpose() * m_star;
  const SvdFactors f = svd(h, "procrustes");
  const double tol = 1e-10 * std::max(1.0, f.s(0));
  const Eigen::Index rank = (f.s.array() > tol).count();

  if (rank == d) {
    Matrix r = f.u * f.vt;
    if (r.determinant() < 0.0) {
      Matrix u = f.u;
      u.col(u.cols() - 1) = -u.col(u.cols() - 1);
      r = u * f.vt;
    }
    return r;
  }

  // Rank-deficient case: the minimizer is unique only on the range of h.
  // Among all minimizers pick the one closest to the identity, so the
  // unobserved subspace is not rotated arbitrarily.
  Eigen::HouseholderQR<Matrix> qu(f.u.leftCols(rank));
  Eigen::HouseholderQR<Matrix> qv(f.vt.topRows(rank).transpose());
  const Matrix u_perp = Matrix(qu.householderQ()).rightCols(d - rank);
  const Matrix v_perp = Matrix(qv.householderQ()).rightCols(d - rank);
  const Matrix a = u_perp.transpose() * v_perp;
  const SvdFactors fa = svd(a, "procrustes null completion");
  Matrix w = fa.u;
  Matrix r = f.u.leftCols(rank) * f.vt.topRows(rank) +
             u_perp * (w * fa.vt) * v_perp.transpose();
  if (r.determinant() < 0.0) {
    w.col(w.cols() - 1) = -w.col(w.cols() - 1);
    r = f.u.leftCols(rank) * f.vt.topRows(rank) +
        u_perp * (w * fa.vt) * v_perp.transpose();
  }
  return r;
}

double loss_entropy(const Matrix& logits) {
  if (!logits.allFinite()) throw InvalidArgument("loss_entropy: non-finite logits");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - mx;
    const Eigen::ArrayXd ex = shifted.exp();
    const double z = ex.sum();
    // -sum p log p = log z - sum p*shifted
    total += std::log(z) - (ex * shifted).sum() / z;
  }
  return total / static_cast<double>(logits.rows());
}

Matrix loss_entropy_grad(const Matrix& logits) {
  // dH/dz_j = p_j * (-H - log p_j), batch-mean
  Matrix g(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - mx;
    const Eigen::ArrayXd ex = shifted.exp();
    const double z = ex.sum();
    const Eigen::ArrayXd p = ex / z;
    const Eigen::ArrayXd logp = shifted - std::log(z);
    const double entropy = -(p * logp).sum();
    g.row(i) = (p * (-entropy - logp)).matrix().transpose();
  }
  return g / static_cast<double>(logits.rows());
}

double loss_align(std::span<const Matrix> features, std::span<const Matrix> rotations,
                  const ClassFrame& frame, const ClassMap& map,
                  std::span<const std::vector<int>> labels, int* skipped) {
  if (features.size() != rotations.size() || features.size() != labels.size())
    throw DimensionError("loss_align: per-task sequences must align");
  int nskip = 0;
  double total = 0.0;
  for (std::size_t t = 0; t < features.size(); ++t) {
    const Matrix rotated = features[t] * rotations[t];
    double task_sum = 0.0;
    Eigen::Index used = 0;
    for (Eigen::Index i = 0; i < rotated.rows(); ++i) {
      const double n = rotated.row(i).norm();
      if (n < 1e-12) {
        ++nskip;
        continue;
      }
      const int y = labels[t][static_cast<std::size_t>(i)];
      if (y < 0 || y >= map.total)
        throw InvalidArgument("loss_align: label out of range");
      const Eigen::RowVectorXd target =
          frame.w.row(map.global(static_cast<int>(t), y));
      task_sum += (rotated.row(i) / n - target).squaredNorm();
      ++used;
    }
    if (used > 0) total += task_sum / static_cast<double>(used);
  }
  if (skipped) *skipped = nskip;
  return total;
}

Matrix class_means(const Matrix& features, const std::vector<int>& labels,
                   Eigen::Index num_classes, int* empty_classes) {
  Matrix means = Matrix::Zero(num_classes, features.cols());
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double n = features.row(i).norm();
    if (n < 1e-12) continue;
    const int y = labels[static_cast<std::size_t>(i)];
    means.row(y) += features.row(i) / n;
    ++counts[static_cast<std::size_t>(y)];
  }
  int empty = 0;
  for (Eigen::Index c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      ++empty;  // zero row stays
    } else {
      means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
  }
  if (empty_classes) *empty_classes = empty;
  return means;
}

double loss_rotation(std::span<const Matrix> rotations,
                     std::span<const Matrix> class_means, const ClassFrame& frame,
                     const ClassMap& map) {
  if (rotations.size() != class_means.size())
    throw DimensionError("loss_rotation: per-task sequences must align");
  double total = 0.0;
  for (std::size_t t = 0; t < rotations.size(); ++t) {
    const Eigen::Index ct = class_means[t].rows();
    const Matrix targets =
        frame.w.middleRows(map.offsets[t], ct);
    const Matrix rp = procrustes(class_means[t], targets);
    total += (rotations[t] - rp).squaredNorm();
  }
  return total;
}

AlignmentProblem::AlignmentProblem(Checkpoint pretrained,
                                   std::map<std::string, Matrix> updates,
                                   std::vector<Matrix> heads, ClassFrame frame,
                                   ClassMap map, std::vector<SyntheticTask> tasks,
                                   OptimHp hp)
    : pretrained_(std::move(pretrained)),
      updates_(std::move(updates)),
      heads_(std::move(heads)),
      frame_(std::move(frame)),
      map_(std::move(map)),
      tasks_(std::move(tasks)),
      hp_(hp) {
  if (heads_.size() != tasks_.size())
    throw DimensionError("AlignmentProblem: one head per task required");
}

OptimState AlignmentProblem::initial_state() const {
  OptimState s;
  const double init = 1.0 / static_cast<double>(tasks_.size());
  for (const auto& [name, update] : updates_) s.lambda[name] = init;
  const Eigen::Index d = frame_.dim;
  for (std::size_t t = 0; t < tasks_.size(); ++t)
    s.rotations.push_back(RotationParam::identity(static_cast<int>(t), d));
  return s;
}

ToyNet AlignmentProblem::merged(const OptimState& s) const {
  Checkpoint merged = pretrained_;
  for (const auto& [name, update] : updates_)
    merged.at(name) += s.lambda.at(name) * update;
  return ToyNet::from_checkpoint(merged);
}

EpochEval AlignmentProblem::evaluate(const OptimState& s) const {
  const ToyNet net = merged(s);
  const std::size_t num_tasks = tasks_.size();

  Eigen::Index total_n = 0;
  for (const auto& task : tasks_) total_n += task.train_x.rows();

  EpochEval ev;
  ev.losses.alpha = hp_.alpha;
  ev.losses.beta = hp_.beta;

  Gradients acc;  // entropy-loss backbone gradients
  acc.w1 = Matrix::Zero(net.w1.rows(), net.w1.cols());
  acc.b1 = Matrix::Zero(net.b1.rows(), net.b1.cols());
  acc.w2 = Matrix::Zero(net.w2.rows(), net.w2.cols());
  acc.b2 = Matrix::Zero(net.b2.rows(), net.b2.cols());

  for (std::size_t t = 0; t < num_tasks; ++t) {
    const SyntheticTask& task = tasks_[t];
    const ForwardCache cache = forward(net, task.train_x);
    const Matrix& rot = s.rotations[t].r;
    const Matrix rotated = cache.features * rot;
    const Matrix logits = rotated * heads_[t];
    const Eigen::Index n = logits.rows();
    const double weight = static_cast<double>(n) / static_cast<double>(total_n);

    std::vector<int> labels;
    if (hp_.label_mode == LabelMode::True) {
      labels = task.train_y;
    } else {
      labels.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index pred = 0;
        logits.row(i).maxCoeff(&pred);
        labels[static_cast<std::size_t>(i)] = static_cast<int>(pred);
      }
    }

    // --- entropy term and its lambda route ---
    ev.losses.entropy += weight * loss_entropy(logits);
    const Matrix dlogits = weight * loss_entropy_grad(logits);
    const Matrix drotated = dlogits * heads_[t].transpose();
    const Matrix dfeatures = drotated * rot.transpose();
    const Gradients g = backward(net, cache, dfeatures, nullptr);
    acc.w1 += g.w1;
    acc.b1 += g.b1;
    acc.w2 += g.w2;
    acc.b2 += g.b2;

    // --- align term, gradient w.r.t. the rotation ---
    Matrix g_rot = Matrix::Zero(rot.rows(), rot.cols());
    double align_sum = 0.0;
    Eigen::Index used = 0;
    for (Eigen::Index i = 0; i < rotated.rows(); ++i) {
      const double nr = rotated.row(i).norm();
      if (nr < 1e-12) continue;
      const Eigen::RowVectorXd u = rotated.row(i) / nr;
      const int y = labels[static_cast<std::size_t>(i)];
      const Eigen::RowVectorXd target =
          frame_.w.row(map_.global(static_cast<int>(t), y));
      const Eigen::RowVectorXd diff = u - target;
      align_sum += diff.squaredNorm();
      const Eigen::RowVectorXd grot = (2.0 / nr) * (diff - diff.dot(u) * u);
      g_rot += cache.features.row(i).transpose() * grot;
      ++used;
    }
    if (used > 0) {
      align_sum /= static_cast<double>(used);
      g_rot /= static_cast<double>(used);
    }
    ev.losses.align += align_sum;

    // --- rotation term: per-epoch Procrustes target from raw features ---
    const Matrix means = class_means(cache.features, labels, task.num_classes);
    const Matrix targets = frame_.w.middleRows(map_.offsets[t], task.num_classes);
    const Matrix rproc = procrustes(means, targets);
    ev.proc_targets.push_back(rproc);
    ev.losses.rotation += (rot - rproc).squaredNorm();

    // combined rotation-route gradient, chained through the Cayley map
    const Matrix g_r = hp_.alpha * g_rot + hp_.beta * 2.0 * (rot - rproc);
    const Matrix b = cayley_inverse_factor(s.rotations[t].a);
    const Matrix g_raw =
        -(Matrix::Identity(rot.rows(), rot.cols()) + rot).transpose() * g_r *
        b.transpose();
    ev.skew_grad.push_back(g_raw - g_raw.transpose());
  }

  for (const auto& [name, update] : updates_) {
    const Matrix* grad = nullptr;
    if (name == "w1") grad = &acc.w1;
    else if (name == "b1") grad = &acc.b1;
    else if (name == "w2") grad = &acc.w2;
    else if (name == "b2") grad = &acc.b2;
    else throw InvalidArgument("AlignmentProblem: unknown layer " + name);
    ev.lambda_grad[name] = frobenius_inner(*grad, update);
  }

  ev.losses.total = ev.losses.entropy + hp_.alpha * ev.losses.align +
                    hp_.beta * ev.losses.rotation;
  return ev;
}

OptimResult optimize(const AlignmentProblem& problem, const EpochCallback& on_epoch) {
  const OptimHp& hp = problem.hp();
  OptimState state = problem.initial_state();
  OptimResult result;

  for (int e = 0; e < hp.epochs; ++e) {
    const EpochEval ev = problem.evaluate(state);
    result.trace.push_back(ev.losses);
    if (on_epoch) on_epoch(e, ev.losses);
    if (!std::isfinite(ev.losses.total))
      throw NumericalError("optimize: loss diverged at epoch " + std::to_string(e));
    for (auto& [name, value] : state.lambda)
      value -= hp.lr * ev.lambda_grad.at(name);
    for (std::size_t t = 0; t < state.rotations.size(); ++t) {
      state.rotations[t].a -= hp.lr * ev.skew_grad[t];
      state.rotations[t].refresh();
    }
  }

  const EpochEval final_ev = problem.evaluate(state);
  result.trace.push_back(final_ev.losses);
  if (on_epoch) on_epoch(hp.epochs, final_ev.losses);
  if (!std::isfinite(final_ev.losses.total))
    throw NumericalError("optimize: loss diverged at final state");
  result.lambda = state.lambda;
  result.rotations = state.rotations;
  return result;
}

}  // namespace mda
