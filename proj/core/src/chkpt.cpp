#include "mda/chkpt.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mda {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'A', 'T', 'C', 'K', 'P', '1'};

void check_same_manifest(const Checkpoint& a, const Checkpoint& b, const char* op) {
  if (a.manifest.size() != b.manifest.size())
    throw DimensionError(std::string(op) + ": manifest mismatch (layer count)");
  for (std::size_t i = 0; i < a.manifest.size(); ++i) {
    const auto& la = a.manifest[i];
    const auto& lb = b.manifest[i];
    if (la.name != lb.name || la.rows != lb.rows || la.cols != lb.cols ||
        la.role != lb.role)
      throw DimensionError(std::string(op) + ": manifest mismatch at layer " + la.name);
  }
}

}  // namespace

std::string to_string(LayerRole r) {
  switch (r) {
    case LayerRole::Weight2d: return "weight-2d";
    case LayerRole::Bias1d: return "bias-1d";
    case LayerRole::Head: return "head";
  }
  return "?";
}

LayerRole layer_role_from_string(const std::string& s) {
  if (s == "weight-2d") return LayerRole::Weight2d;
  if (s == "bias-1d") return LayerRole::Bias1d;
  if (s == "head") return LayerRole::Head;
  throw InvalidArgument("unknown layer role: " + s);
}

const Matrix& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidArgument("no such layer: " + name);
  return it->second;
}

Matrix& Checkpoint::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidArgument("no such layer: " + name);
  return it->second;
}

void Checkpoint::add(std::string name, Matrix tensor, LayerRole role) {
  manifest.push_back({name, tensor.rows(), tensor.cols(), role});
  tensors.emplace(std::move(name), std::move(tensor));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& layer : ckpt.manifest) {
    manifest.push_back({{"name", layer.name},
                        {"shape", {layer.rows, layer.cols}},
                        {"role", to_string(layer.role)},
                        {"byte_offset", offset}});
    offset += static_cast<std::uint64_t>(layer.rows) * layer.cols * sizeof(float);
  }
  const std::string mjson = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("io", "cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t mlen = mjson.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& layer : ckpt.manifest) {
    const Matrix& t = ckpt.at(layer.name);
    std::vector<float> row(static_cast<std::size_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j)
        row[static_cast<std::size_t>(j)] = static_cast<float>(t(i, j));
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
  }
  if (!out) throw IoError("io", "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io", "cannot open: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("bad-magic", path.string());

  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in) throw IoError("truncated", "manifest length: " + path.string());
  std::string mjson(mlen, '\0');
  in.read(mjson.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw IoError("truncated", "manifest: " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mjson);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad-layout", std::string("manifest parse: ") + e.what());
  }

  Checkpoint ckpt;
  std::uint64_t expect_offset = 0;
  for (const auto& entry : manifest) {
    LayerInfo layer;
    try {
      layer.name = entry.at("name").get<std::string>();
      layer.rows = entry.at("shape").at(0).get<Eigen::Index>();
      layer.cols = entry.at("shape").at(1).get<Eigen::Index>();
      layer.role = layer_role_from_string(entry.at("role").get<std::string>());
      if (entry.at("byte_offset").get<std::uint64_t>() != expect_offset)
        throw IoError("bad-layout", "offset mismatch at " + layer.name);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad-layout", std::string("manifest entry: ") + e.what());
    }
    if (layer.rows < 0 || layer.cols < 0)
      throw IoError("bad-layout", "negative shape at " + layer.name);
    expect_offset +=
        static_cast<std::uint64_t>(layer.rows) * layer.cols * sizeof(float);
    ckpt.manifest.push_back(layer);
  }

  for (const auto& layer : ckpt.manifest) {
    Matrix t(layer.rows, layer.cols);
    std::vector<float> row(static_cast<std::size_t>(layer.cols));
    for (Eigen::Index i = 0; i < layer.rows; ++i) {
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
      if (!in) throw IoError("truncated", "tensor data at " + layer.name);
      for (Eigen::Index j = 0; j < layer.cols; ++j)
        t(i, j) = static_cast<double>(row[static_cast<std::size_t>(j)]);
    }
    ckpt.tensors.emplace(layer.name, std::move(t));
  }
  return ckpt;
}

TaskVector task_vector(const Checkpoint& pretrained, const Checkpoint& finetuned) {
  check_same_manifest(pretrained, finetuned, "task_vector");
  TaskVector tau;
  for (const auto& layer : pretrained.manifest) {
    if (layer.role == LayerRole::Head) continue;  // heads stay per-task
    Matrix delta = finetuned.at(layer.name) - pretrained.at(layer.name);
    if (!delta.allFinite())
      throw NumericalError("task_vector: non-finite delta at " + layer.name);
    tau.layers.emplace(layer.name, std::move(delta));
  }
  return tau;
}

Checkpoint merge_task_arithmetic(const Checkpoint& pretrained,
                                 std::span<const TaskVector> vectors,
                                 const FusionCoefficients& lambda) {
  if (vectors.empty())
    throw InvalidArgument("merge_task_arithmetic: empty task vector set");
  Checkpoint merged = pretrained;
  for (const auto& layer : merged.manifest) {
    if (layer.role == LayerRole::Head) continue;
    auto lit = lambda.find(layer.name);
    if (lit == lambda.end())
      throw InvalidArgument("merge_task_arithmetic: no coefficient for " + layer.name);
    Matrix sum = Matrix::Zero(layer.rows, layer.cols);
    for (const auto& tau : vectors) {
      auto it = tau.layers.find(layer.name);
      if (it == tau.layers.end())
        throw DimensionError("merge_task_arithmetic: missing layer " + layer.name);
      if (it->second.rows() != layer.rows || it->second.cols() != layer.cols)
        throw DimensionError("merge_task_arithmetic: shape mismatch at " + layer.name);
      sum += it->second;
    }
    merged.at(layer.name) += lit->second * sum;
  }
  return merged;
}

Checkpoint merge_task_arithmetic(const Checkpoint& pretrained,
                                 std::span<const TaskVector> vectors,
                                 double lambda) {
  return merge_task_arithmetic(pretrained, vectors,
                               uniform_coefficients(pretrained, lambda));
}

Checkpoint merge_weight_average(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty())
    throw InvalidArgument("merge_weight_average: empty checkpoint set");
  Checkpoint merged = checkpoints[0];
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    check_same_manifest(merged, checkpoints[i], "merge_weight_average");
    for (const auto& layer : merged.manifest) {
      if (layer.role == LayerRole::Head) continue;
      merged.at(layer.name) += checkpoints[i].at(layer.name);
    }
  }
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (const auto& layer : merged.manifest) {
    if (layer.role == LayerRole::Head) continue;
    merged.at(layer.name) *= inv;
  }
  return merged;
}

FusionCoefficients uniform_coefficients(const Checkpoint& pretrained, double value) {
  FusionCoefficients lambda;
  for (const auto& layer : pretrained.manifest) {
    if (layer.role == LayerRole::Head) continue;
    lambda[layer.name] = value;
  }
  return lambda;
}

}  // namespace mda
