#pragma once

// Layer-wise activation dumps: the in-memory model and the on-disk directory
// format shared with external exporters.
//
// Directory layout (version 1):
//   manifest.json            version, num_samples, num_classes,
//                            has_true_labels, layers[{name, dim}]
//   predicted_labels.u32     num_samples little-endian uint32
//   true_labels.u32          optional, same encoding
//   layer_<i>_<name>.f32     num_samples * dim little-endian float32, row-major

#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedlast/binary_io.hpp"
#include "tedlast/error.hpp"

namespace tedlast {

inline constexpr int kDumpVersion = 1;

struct LayerMeta {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const LayerMeta&) const = default;
};

/// Dense row-major float32 matrix.
class FloatMatrix {
 public:
  FloatMatrix() = default;
  FloatMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  FloatMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw integrity_error("matrix data size does not match shape");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<float> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  float& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  float operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  const std::vector<float>& data() const noexcept { return data_; }

  bool operator==(const FloatMatrix& other) const {
    // Bitwise so that -0.0f and 0.0f differ and the comparison is exact.
    return rows_ == other.rows_ && cols_ == other.cols_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(),
                        data_.size() * sizeof(float)) == 0);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Per-layer activations of a sample set, in network forward order.
struct ActivationDump {
  std::size_t num_samples = 0;
  std::size_t num_classes = 0;
  std::vector<LayerMeta> layers;
  std::vector<FloatMatrix> activations;  // one per layer
  std::vector<std::uint32_t> predicted_labels;
  std::optional<std::vector<std::uint32_t>> true_labels;

  std::size_t num_layers() const noexcept { return layers.size(); }

  bool operator==(const ActivationDump&) const = default;
};

/// Throws an integrity error naming the first violated invariant.
inline void validate(const ActivationDump& dump) {
  if (dump.num_samples < 1) {
    throw integrity_error("dump must contain at least one sample");
  }
  if (dump.num_classes < 2) {
    throw integrity_error("num_classes must be at least 2");
  }
  if (dump.layers.empty()) {
    throw integrity_error("dump must contain at least one layer");
  }
  if (dump.activations.size() != dump.layers.size()) {
    throw integrity_error("layer metadata count does not match activation count");
  }
  std::set<std::string> names;
  for (std::size_t l = 0; l < dump.layers.size(); ++l) {
    const auto& meta = dump.layers[l];
    if (meta.name.empty() || meta.name.find('/') != std::string::npos ||
        meta.name.find('\0') != std::string::npos) {
      throw integrity_error("invalid layer name at layer " + std::to_string(l));
    }
    if (!names.insert(meta.name).second) {
      throw integrity_error("duplicate layer name: " + meta.name);
    }
    if (meta.dim < 1) {
      throw integrity_error("layer " + std::to_string(l) + " has zero dim");
    }
    const auto& m = dump.activations[l];
    if (m.rows() != dump.num_samples || m.cols() != meta.dim) {
      throw integrity_error("layer " + std::to_string(l) +
                            ": matrix shape does not match manifest");
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (float v : m.row(i)) {
        if (!std::isfinite(v)) {
          throw integrity_error("non-finite activation at layer " +
                                std::to_string(l) + ", row " + std::to_string(i));
        }
      }
    }
  }
  auto check_labels = [&](const std::vector<std::uint32_t>& labels,
                          const char* what) {
    if (labels.size() != dump.num_samples) {
      throw integrity_error(std::string(what) + " length does not match num_samples");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= dump.num_classes) {
        throw integrity_error(std::string(what) + " " + std::to_string(labels[i]) +
                              " at row " + std::to_string(i) +
                              " out of range (num_classes " +
                              std::to_string(dump.num_classes) + ")");
      }
    }
  };
  check_labels(dump.predicted_labels, "predicted label");
  if (dump.true_labels) check_labels(*dump.true_labels, "true label");
}

inline std::string layer_file_name(std::size_t index, const LayerMeta& meta) {
  return "layer_" + std::to_string(index) + "_" + meta.name + ".f32";
}

/// Canonical manifest text; also the prefix of the dump digest.
inline std::string manifest_json(const ActivationDump& dump) {
  nlohmann::ordered_json m;
  m["version"] = kDumpVersion;
  m["num_samples"] = dump.num_samples;
  m["num_classes"] = dump.num_classes;
  m["has_true_labels"] = dump.true_labels.has_value();
  auto layers = nlohmann::ordered_json::array();
  for (const auto& meta : dump.layers) {
    layers.push_back({{"name", meta.name}, {"dim", meta.dim}});
  }
  m["layers"] = std::move(layers);
  return m.dump(2) + "\n";
}

inline std::vector<unsigned char> encode_matrix(const FloatMatrix& m) {
  std::vector<unsigned char> bytes;
  bytes.reserve(m.data().size() * sizeof(float));
  append_le<float>(bytes, std::span<const float>(m.data()));
  return bytes;
}

/// FNV-1a over the canonical manifest followed by every layer's bytes.
inline std::uint64_t dump_digest(const ActivationDump& dump) {
  Fnv1a64 h;
  h.update(manifest_json(dump));
  for (const auto& m : dump.activations) {
    h.update(encode_matrix(m));
  }
  return h.digest();
}

inline void write_dump(const ActivationDump& dump,
                       const std::filesystem::path& dir) {
  validate(dump);
  ensure_directory(dir);
  write_file_text(dir / "manifest.json", manifest_json(dump));

  auto write_labels = [&](const std::vector<std::uint32_t>& labels,
                          const char* file) {
    std::vector<unsigned char> bytes;
    append_le<std::uint32_t>(bytes, std::span<const std::uint32_t>(labels));
    write_file_bytes(dir / file, bytes);
  };
  write_labels(dump.predicted_labels, "predicted_labels.u32");
  if (dump.true_labels) {
    write_labels(*dump.true_labels, "true_labels.u32");
  } else {
    std::filesystem::remove(dir / "true_labels.u32");
  }
  for (std::size_t l = 0; l < dump.layers.size(); ++l) {
    write_file_bytes(dir / layer_file_name(l, dump.layers[l]),
                     encode_matrix(dump.activations[l]));
  }
}

namespace detail {

inline std::vector<unsigned char> read_sized(const std::filesystem::path& path,
                                             const std::string& label,
                                             std::size_t expected) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() != expected) {
    throw integrity_error(label + ": expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()));
  }
  return bytes;
}

}  // namespace detail

inline ActivationDump read_dump(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("malformed manifest in " + dir.string() + ": " + e.what());
  }

  ActivationDump dump;
  try {
    if (manifest.at("version").get<int>() != kDumpVersion) {
      throw integrity_error("unsupported dump version");
    }
    dump.num_samples = manifest.at("num_samples").get<std::size_t>();
    dump.num_classes = manifest.at("num_classes").get<std::size_t>();
    const bool has_true = manifest.at("has_true_labels").get<bool>();
    for (const auto& layer : manifest.at("layers")) {
      dump.layers.push_back(
          {layer.at("name").get<std::string>(), layer.at("dim").get<std::size_t>()});
    }

    const std::size_t n = dump.num_samples;
    auto read_labels = [&](const char* file) {
      const auto bytes = detail::read_sized(dir / file, file, n * 4);
      return decode_le<std::uint32_t>(bytes, 0, n);
    };
    dump.predicted_labels = read_labels("predicted_labels.u32");
    if (has_true) dump.true_labels = read_labels("true_labels.u32");

    for (std::size_t l = 0; l < dump.layers.size(); ++l) {
      const auto& meta = dump.layers[l];
      const auto bytes =
          detail::read_sized(dir / layer_file_name(l, meta),
                             "layer " + std::to_string(l), n * meta.dim * 4);
      dump.activations.emplace_back(n, meta.dim,
                                    decode_le<float>(bytes, 0, n * meta.dim));
    }
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("malformed manifest in " + dir.string() + ": " + e.what());
  }
  validate(dump);
  return dump;
}

/// New dump holding the given rows, in the given order.
inline ActivationDump select_rows(const ActivationDump& dump,
                                  std::span<const std::size_t> indices) {
  if (indices.empty()) throw usage_error("empty selection");
  for (std::size_t idx : indices) {
    if (idx >= dump.num_samples) {
      throw usage_error("row index " + std::to_string(idx) + " out of range (" +
                        std::to_string(dump.num_samples) + " samples)");
    }
  }
  ActivationDump out;
  out.num_samples = indices.size();
  out.num_classes = dump.num_classes;
  out.layers = dump.layers;
  for (std::size_t l = 0; l < dump.layers.size(); ++l) {
    const auto& src = dump.activations[l];
    FloatMatrix m(indices.size(), src.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      std::copy(src.row(indices[r]).begin(), src.row(indices[r]).end(),
                m.row(r).begin());
    }
    out.activations.push_back(std::move(m));
  }
  for (std::size_t idx : indices) out.predicted_labels.push_back(dump.predicted_labels[idx]);
  if (dump.true_labels) {
    std::vector<std::uint32_t> t;
    for (std::size_t idx : indices) t.push_back((*dump.true_labels)[idx]);
    out.true_labels = std::move(t);
  }
  return out;
}

/// Row-wise concatenation of dumps with identical layer lists.
inline ActivationDump concat_rows(const ActivationDump& a, const ActivationDump& b) {
  if (a.layers != b.layers || a.num_classes != b.num_classes) {
    throw usage_error("cannot concatenate dumps with different layers or classes");
  }
  if (a.true_labels.has_value() != b.true_labels.has_value()) {
    throw usage_error("cannot concatenate dumps with and without true labels");
  }
  ActivationDump out;
  out.num_samples = a.num_samples + b.num_samples;
  out.num_classes = a.num_classes;
  out.layers = a.layers;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    std::vector<float> data = a.activations[l].data();
    data.insert(data.end(), b.activations[l].data().begin(),
                b.activations[l].data().end());
    out.activations.emplace_back(out.num_samples, a.layers[l].dim, std::move(data));
  }
  out.predicted_labels = a.predicted_labels;
  out.predicted_labels.insert(out.predicted_labels.end(), b.predicted_labels.begin(),
                              b.predicted_labels.end());
  if (a.true_labels) {
    auto t = *a.true_labels;
    t.insert(t.end(), b.true_labels->begin(), b.true_labels->end());
    out.true_labels = std::move(t);
  }
  return out;
}

}  // namespace tedlast
