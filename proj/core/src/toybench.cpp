#include "mda/toybench.hpp"

#include <cmath>

namespace mda {

namespace {

constexpr double kMeanRadius = 5.0;
constexpr int kMaxMeanDraws = 10000;

Matrix sample_class(Rng& rng, const Eigen::RowVectorXd& mean, double stddev,
                    Eigen::Index n) {
  Matrix x(n, mean.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < mean.cols(); ++j)
      x(i, j) = mean(j) + stddev * rng.gaussian();
  return x;
}

}  // namespace

std::vector<SyntheticTask> gen_tasks(int num_tasks, Eigen::Index classes_per_task,
                                     Eigen::Index d_in, Eigen::Index n_train_per_class,
                                     Eigen::Index n_test_per_class, double stddev,
                                     std::uint64_t seed) {
  if (num_tasks < 1 || classes_per_task < 1 || d_in < 1 || n_train_per_class < 1 ||
      n_test_per_class < 1 || stddev <= 0.0)
    throw InvalidArgument("gen_tasks: positive counts and stddev required");

  Rng rng(seed);
  const Eigen::Index total_classes = num_tasks * classes_per_task;
  const double min_dist = 4.0 * stddev;

  // Global rejection sampling: every pair of class means across all tasks
  // keeps the separation invariant.
  Matrix means(total_classes, d_in);
  for (Eigen::Index c = 0; c < total_classes; ++c) {
    int draws = 0;
    for (;;) {
      if (++draws > kMaxMeanDraws)
        throw NumericalError("gen_tasks: separation unattainable after 10^4 draws");
      Eigen::RowVectorXd m(d_in);
      for (Eigen::Index j = 0; j < d_in; ++j) m(j) = rng.gaussian();
      m *= kMeanRadius / m.norm();
      bool ok = true;
      for (Eigen::Index p = 0; p < c && ok; ++p)
        ok = (means.row(p) - m).norm() >= min_dist;
      if (ok) {
        means.row(c) = m;
        break;
      }
    }
  }

  std::vector<SyntheticTask> tasks;
  tasks.reserve(static_cast<std::size_t>(num_tasks));
  for (int t = 0; t < num_tasks; ++t) {
    SyntheticTask task;
    task.task_id = t;
    task.num_classes = classes_per_task;
    task.stddev = stddev;
    task.means = means.middleRows(t * classes_per_task, classes_per_task);
    task.train_x.resize(classes_per_task * n_train_per_class, d_in);
    task.test_x.resize(classes_per_task * n_test_per_class, d_in);
    for (Eigen::Index c = 0; c < classes_per_task; ++c) {
      const Eigen::RowVectorXd mean = task.means.row(c);
      task.train_x.middleRows(c * n_train_per_class, n_train_per_class) =
          sample_class(rng, mean, stddev, n_train_per_class);
      task.test_x.middleRows(c * n_test_per_class, n_test_per_class) =
          sample_class(rng, mean, stddev, n_test_per_class);
      for (Eigen::Index i = 0; i < n_train_per_class; ++i)
        task.train_y.push_back(static_cast<int>(c));
      for (Eigen::Index i = 0; i < n_test_per_class; ++i)
        task.test_y.push_back(static_cast<int>(c));
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

ToyNet init_toynet(Eigen::Index d_in, Eigen::Index d_h, Eigen::Index d_feat,
                   Eigen::Index num_classes, std::uint64_t seed) {
  Rng rng(seed);
  ToyNet net;
  net.w1 = rng.gaussian_matrix(d_in, d_h) / std::sqrt(static_cast<double>(d_in));
  net.b1 = Matrix::Zero(1, d_h);
  net.w2 = rng.gaussian_matrix(d_h, d_feat) / std::sqrt(static_cast<double>(d_h));
  net.b2 = Matrix::Zero(1, d_feat);
  net.head =
      rng.gaussian_matrix(d_feat, num_classes) / std::sqrt(static_cast<double>(d_feat));
  return net;
}

Checkpoint ToyNet::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.add("w1", w1, LayerRole::Weight2d);
  ckpt.add("b1", b1, LayerRole::Bias1d);
  ckpt.add("w2", w2, LayerRole::Weight2d);
  ckpt.add("b2", b2, LayerRole::Bias1d);
  ckpt.add("head", head, LayerRole::Head);
  return ckpt;
}

ToyNet ToyNet::from_checkpoint(const Checkpoint& ckpt) {
  ToyNet net;
  net.w1 = ckpt.at("w1");
  net.b1 = ckpt.at("b1");
  net.w2 = ckpt.at("w2");
  net.b2 = ckpt.at("b2");
  net.head = ckpt.at("head");
  return net;
}

ForwardCache forward(const ToyNet& net, const Matrix& x) {
  ForwardCache cache;
  cache.x = x;
  cache.pre1 = (x * net.w1).rowwise() + net.b1.row(0);
  cache.h1 = cache.pre1.cwiseMax(0.0);
  cache.features = (cache.h1 * net.w2).rowwise() + net.b2.row(0);
  cache.logits = cache.features * net.head;
  return cache;
}

Matrix feature_grad_from_logits(const ToyNet& net, const Matrix& dloss_dlogits) {
  return dloss_dlogits * net.head.transpose();
}

Gradients backward(const ToyNet& net, const ForwardCache& cache,
                   const Matrix& dloss_dfeatures, const Matrix* dloss_dlogits) {
  Gradients g;
  Matrix gf = dloss_dfeatures;
  if (dloss_dlogits != nullptr) {
    g.head = cache.features.transpose() * (*dloss_dlogits);
    gf += feature_grad_from_logits(net, *dloss_dlogits);
  } else {
    g.head = Matrix::Zero(net.head.rows(), net.head.cols());
  }
  g.w2 = cache.h1.transpose() * gf;
  g.b2 = gf.colwise().sum();
  Matrix gh1 = gf * net.w2.transpose();
  // rectifier mask on the pre-activation
  gh1 = (cache.pre1.array() > 0.0).select(gh1, 0.0);
  g.w1 = cache.x.transpose() * gh1;
  g.b1 = gh1.colwise().sum();
  return g;
}

double softmax_xent(const Matrix& logits, const std::vector<int>& labels,
                    Matrix* dloss_dlogits) {
  const Eigen::Index n = logits.rows();
  if (static_cast<std::size_t>(n) != labels.size())
    throw DimensionError("softmax_xent: batch/label size mismatch");
  double loss = 0.0;
  if (dloss_dlogits) dloss_dlogits->resize(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - mx;
    const Eigen::ArrayXd ex = shifted.exp();
    const double z = ex.sum();
    const Eigen::ArrayXd p = ex / z;
    loss += -(shifted(labels[static_cast<std::size_t>(i)]) - std::log(z));
    if (dloss_dlogits) {
      dloss_dlogits->row(i) = (p / static_cast<double>(n)).matrix().transpose();
      (*dloss_dlogits)(i, labels[static_cast<std::size_t>(i)]) -=
          1.0 / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

ToyNet train(const ToyNet& net, const SyntheticTask& task, int epochs, double lr) {
  ToyNet cur = net;
  for (int e = 0; e < epochs; ++e) {
    const ForwardCache cache = forward(cur, task.train_x);
    Matrix dlogits;
    const double loss = softmax_xent(cache.logits, task.train_y, &dlogits);
    if (!std::isfinite(loss)) throw NumericalError("train: loss diverged");
    const Matrix zero = Matrix::Zero(cache.features.rows(), cache.features.cols());
    const Gradients g = backward(cur, cache, zero, &dlogits);
    cur.w1 -= lr * g.w1;
    cur.b1 -= lr * g.b1;
    cur.w2 -= lr * g.w2;
    cur.b2 -= lr * g.b2;
    cur.head -= lr * g.head;
  }
  return cur;
}

EvalResult evaluate(const ToyNet& backbone, const std::vector<Matrix>& heads,
                    const std::vector<Matrix>* rotations,
                    const std::vector<SyntheticTask>& tasks, ClassifierMode mode,
                    const ClassFrame* frame) {
  if (heads.size() != tasks.size())
    throw DimensionError("evaluate: one head per task required");
  if (mode == ClassifierMode::EtfNearest && frame == nullptr)
    throw InvalidArgument("evaluate: etf-nearest needs a frame");

  EvalResult result;
  Eigen::Index offset = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const SyntheticTask& task = tasks[t];
    ForwardCache cache = forward(backbone, task.test_x);
    Matrix feats = cache.features;
    if (rotations != nullptr) feats = feats * (*rotations)[t];
    Eigen::Index correct = 0;
    if (mode == ClassifierMode::Head) {
      const Matrix scores = feats * heads[t];
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index pred = 0;
        scores.row(i).maxCoeff(&pred);
        if (pred == task.test_y[static_cast<std::size_t>(i)]) ++correct;
      }
    } else {
      const Matrix targets = frame->w.middleRows(offset, task.num_classes);
      const Matrix scores = feats * targets.transpose();
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index pred = 0;
        scores.row(i).maxCoeff(&pred);
        if (pred == task.test_y[static_cast<std::size_t>(i)]) ++correct;
      }
    }
    result.per_task.push_back(static_cast<double>(correct) /
                              static_cast<double>(task.test_y.size()));
    offset += task.num_classes;
  }
  double sum = 0.0;
  for (double a : result.per_task) sum += a;
  result.mean = sum / static_cast<double>(result.per_task.size());
  return result;
}

}  // namespace mda
