#include "mda/param_align.hpp"

#include <algorithm>
#include <cmath>

namespace mda {

namespace {

bool is_weight2d(const Matrix& m) { return m.rows() >= 2 && m.cols() >= 2; }

// Deterministic orthonormal completion: Gram-Schmidt identity columns
// against the existing basis.
void complete_orthonormal(Matrix& basis, Eigen::Index have, Eigen::Index want) {
  const Eigen::Index d_in = basis.rows();
  Eigen::Index next = have;
  for (Eigen::Index e = 0; e < d_in && next < want && next < d_in; ++e) {
    Vector v = Vector::Zero(d_in);
    v(e) = 1.0;
    for (Eigen::Index j = 0; j < next; ++j)
      v -= basis.col(j).dot(v) * basis.col(j);
    const double n = v.norm();
    if (n > 1e-8) {
      basis.col(next) = v / n;
      ++next;
    }
  }
  // anything past d_in (or past the reachable rank) stays zero
}

double mean_task_norm(std::span<const TaskVector> vectors, const std::string& name) {
  double sum = 0.0;
  for (const auto& tau : vectors) sum += tau.layers.at(name).norm();
  return sum / static_cast<double>(vectors.size());
}

}  // namespace

Eigen::Index rank_per_task(const MdaConfig& cfg, Eigen::Index d_out, int num_tasks) {
  Eigen::Index k;
  if (cfg.k_fraction > 0.0) {
    k = static_cast<Eigen::Index>(std::llround(cfg.k_fraction * static_cast<double>(d_out)));
  } else {
    k = d_out / num_tasks;
  }
  return std::max<Eigen::Index>(1, k);
}

SharedSubspace shared_subspace(std::span<const TaskVector> vectors,
                               const MdaConfig& cfg) {
  if (vectors.empty()) throw InvalidArgument("shared_subspace: no task vectors");
  const int num_tasks = static_cast<int>(vectors.size());

  SharedSubspace sub;
  for (const auto& [name, first] : vectors[0].layers) {
    if (!is_weight2d(first)) continue;
    const Eigen::Index d_in = first.rows();
    const Eigen::Index d_out = first.cols();

    Eigen::Index k = rank_per_task(cfg, d_out, num_tasks);
    const Eigen::Index k_max = std::min(d_in, d_out);
    if (k > k_max) {
      sub.warnings.push_back("layer " + name + ": k clamped from " +
                             std::to_string(k) + " to " + std::to_string(k_max));
      k = k_max;
    }

    LayerSubspace layer;
    layer.k_per_task = k;
    layer.u_cat.resize(d_in, k * num_tasks);
    for (int t = 0; t < num_tasks; ++t) {
      const Matrix& tau = vectors[static_cast<std::size_t>(t)].layers.at(name);
      if (tau.rows() != d_in || tau.cols() != d_out)
        throw DimensionError("shared_subspace: shape mismatch at " + name);
      const SvdFactors f = svd(tau, name);
      layer.u_cat.middleCols(t * k, k) = f.u.leftCols(k);
    }

    const SvdFactors fc = svd(layer.u_cat, name + " (concat)");
    const Eigen::Index r = std::min(fc.u.cols(), d_out);
    layer.u_share = Matrix::Zero(d_in, d_out);
    layer.u_share.leftCols(r) = fc.u.leftCols(r);
    if (r < d_out) complete_orthonormal(layer.u_share, r, d_out);

    // Reconstruct the summed task update inside the shared subspace; this
    // keeps the row/column structure of the task vectors (a bare orthonormal
    // basis would scramble the output wiring of the layer).
    Matrix sum_tau = Matrix::Zero(d_in, d_out);
    for (const auto& tau : vectors) sum_tau += tau.layers.at(name);
    layer.tau_share = layer.u_share * (layer.u_share.transpose() * sum_tau);
    sub.layers.emplace(name, std::move(layer));
  }
  if (sub.layers.empty())
    throw InvalidArgument("shared_subspace: no weight-2d layers present");
  return sub;
}

std::map<Eigen::Index, ClassFrame> frames_for(const SharedSubspace& sub,
                                              const MdaConfig& cfg) {
  if (cfg.num_classes < 2)
    throw InvalidArgument("frames_for: num_classes must be at least 2");
  std::map<Eigen::Index, ClassFrame> frames;
  for (const auto& [name, layer] : sub.layers) {
    const Eigen::Index d_out = layer.tau_share.cols();
    if (frames.count(d_out)) continue;
    switch (cfg.target) {
      case AlignTarget::Etf:
        frames.emplace(d_out, build_etf(cfg.num_classes, d_out, cfg.seed));
        break;
      case AlignTarget::Orthogonal:
        // When the width cannot host C orthonormal rows the frame degrades
        // to a full orthonormal basis (projection becomes identity).
        frames.emplace(d_out, build_orthogonal(std::min(cfg.num_classes, d_out),
                                               d_out, cfg.seed));
        break;
      case AlignTarget::LowRank:
        break;  // handled directly from the shared subspace
    }
  }
  return frames;
}

AlignedUpdates etf_align(const SharedSubspace& sub,
                         const std::map<Eigen::Index, ClassFrame>& frames,
                         std::span<const TaskVector> vectors, const MdaConfig& cfg) {
  AlignedUpdates updates;
  for (const auto& [name, layer] : sub.layers) {
    const Eigen::Index d_out = layer.tau_share.cols();
    const double target_norm = mean_task_norm(vectors, name);

    auto project = [&](const Matrix& m) -> Matrix {
      if (cfg.target == AlignTarget::LowRank) {
        // keep the top d_out/4 shared singular directions
        const Eigen::Index keep = std::max<Eigen::Index>(1, d_out / 4);
        Matrix out = Matrix::Zero(m.rows(), m.cols());
        out.leftCols(keep) = m.leftCols(keep);
        return out;
      }
      auto it = frames.find(d_out);
      if (it == frames.end())
        throw DimensionError("etf_align: no frame for width " + std::to_string(d_out));
      if (it->second.dim != d_out)
        throw DimensionError("etf_align: frame dim mismatch at " + name);
      return m * align_operator(it->second).p;
    };
    auto norm_match = [&](Matrix m) -> Matrix {
      if (!cfg.norm_match) return m;
      const double n = m.norm();
      if (n > 0.0) m *= target_norm / n;
      return m;
    };

    std::vector<Matrix> out;
    if (cfg.mode == AlignMode::Shared) {
      out.push_back(norm_match(project(layer.tau_share)));
    } else {
      for (const auto& tau : vectors)
        out.push_back(norm_match(project(tau.layers.at(name))));
    }
    updates.emplace(name, std::move(out));
  }
  return updates;
}

MdaMergeResult merge_mda_ta(const Checkpoint& pretrained,
                            std::span<const TaskVector> vectors, const MdaConfig& cfg) {
  MdaMergeResult result;
  result.subspace = shared_subspace(vectors, cfg);
  result.frames = frames_for(result.subspace, cfg);
  result.updates = etf_align(result.subspace, result.frames, vectors, cfg);

  result.merged = pretrained;
  for (const auto& layer : pretrained.manifest) {
    switch (layer.role) {
      case LayerRole::Head:
        break;
      case LayerRole::Weight2d: {
        auto it = result.updates.find(layer.name);
        if (it == result.updates.end())
          throw DimensionError("merge_mda_ta: no aligned update for " + layer.name);
        Matrix sum = Matrix::Zero(layer.rows, layer.cols);
        for (const Matrix& m : it->second) sum += m;
        result.merged.at(layer.name) += cfg.lambda_default * sum;
        break;
      }
      case LayerRole::Bias1d: {
        Matrix sum = Matrix::Zero(layer.rows, layer.cols);
        for (const auto& tau : vectors) sum += tau.layers.at(layer.name);
        result.bias_sum.emplace(layer.name, sum);
        result.merged.at(layer.name) += cfg.lambda_default * sum;
        break;
      }
    }
  }
  return result;
}

std::uint64_t estimate_flops(std::uint64_t num_tasks, std::uint64_t num_layers,
                             std::uint64_t dim, std::uint64_t num_classes) {
  if (num_layers == 0 || dim == 0)
    throw InvalidArgument("estimate_flops: positive dims required");
  return (num_tasks + 2) * num_layers * dim * dim * dim +
         dim * dim * num_layers * num_classes;
}

}  // namespace mda
