#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "icam/tensor.hpp"

namespace icam {

// Named model parameters with deterministic iteration order (insertion
// order). Names are unique dotted paths, e.g. "encoder.layer3.aafm.wq".
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Tensor>>& entries_mut() {
    return entries_;
  }

  void zero_grad();
  // Sum of squares of all gradient entries, then sqrt.
  double grad_norm() const;
  // Scales every gradient so the global norm does not exceed max_norm.
  void clip_grad_norm(double max_norm);

  int version = 0;  // bumped by the optimizer on every applied step

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class CheckpointDtype : std::uint8_t { f32 = 0, f64 = 1 };

// Single-file binary checkpoint:
//   magic "ICAM" | format version u32 | parameter count u32
//   per parameter: name length u32, UTF-8 name, rank u64, dims u64 each,
//                  dtype tag u8 (0=f32, 1=f64), raw little-endian data.
void save_checkpoint(const ParameterStore& store, const std::string& path,
                     CheckpointDtype dtype = CheckpointDtype::f64);
ParameterStore load_checkpoint(const std::string& path);

}  // namespace icam
