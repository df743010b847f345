#pragma once

#include "megan/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace megan {

/// Versioned binary checkpoint: 8-byte magic, a UTF-8 JSON header describing
/// the kind, architecture config and tensor directory, then the raw tensors
/// as little-endian float32 in directory order (column-major within a
/// tensor). Loading verifies the stored config against the expected one and
/// fails on any mismatch.
struct Checkpoint {
  static constexpr char kMagic[9] = "MEGANCK1";

  std::string kind;            // "generator", "train_state", "extractor", ...
  std::string config_json;     // canonical serialized architecture config
  std::map<std::string, Mat<float>> tensors;
  std::map<std::string, std::string> extras;  // small string payloads (rng state, step, ...)

  void put(const std::string& name, const Mat<float>& t) { tensors[name] = t; }
  const Mat<float>& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// Throws on kind/config mismatch.
  void expect(const std::string& expected_kind, const std::string& expected_config) const;
};

template <typename S>
inline Mat<float> to_f32(const Mat<S>& m) {
  return m.template cast<float>();
}
template <typename S>
inline void from_f32(const Mat<float>& src, Mat<S>& dst) {
  if (src.rows() != dst.rows() || src.cols() != dst.cols())
    throw std::invalid_argument("checkpoint tensor shape mismatch");
  dst = src.template cast<S>();
}

}  // namespace megan
