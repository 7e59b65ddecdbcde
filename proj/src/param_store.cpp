#include "icam/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace icam {

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) {
    throw ArgumentError("parameter '" + name + "' already exists");
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ArgumentError("unknown parameter '" + name + "'");
  }
  return entries_[it->second].second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ArgumentError("unknown parameter '" + name + "'");
  }
  return entries_[it->second].second;
}

bool ParameterStore::has(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, t] : entries_) {
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void ParameterStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& [name, t] : entries_) {
    auto* node = t.node();
    node->ensure_grad();
    for (double& g : node->grad) g *= scale;
  }
}

namespace {

constexpr char kMagic[4] = {'I', 'C', 'A', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void write_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError(std::string("checkpoint truncated reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& path,
                     CheckpointDtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_raw(os, kFormatVersion);
  write_raw(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    write_raw(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(os, static_cast<std::uint64_t>(t.shape().size()));
    for (std::size_t d : t.shape()) write_raw(os, static_cast<std::uint64_t>(d));
    write_raw(os, static_cast<std::uint8_t>(dtype));
    if (dtype == CheckpointDtype::f64) {
      os.write(reinterpret_cast<const char*>(t.values().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
      std::vector<float> buf(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        buf[i] = static_cast<float>(t.at(i));
      }
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }
  if (!os) throw Error("checkpoint write failed: " + path);
}

ParameterStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("not a checkpoint file (bad magic): " + path);
  }
  const auto version = read_raw<std::uint32_t>(is, "format version");
  if (version != kFormatVersion) {
    throw ParseError("unsupported checkpoint format version " +
                     std::to_string(version));
  }
  const auto count = read_raw<std::uint32_t>(is, "parameter count");
  ParameterStore store;
  for (std::uint32_t p = 0; p < count; ++p) {
    const auto name_len = read_raw<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ParseError("checkpoint truncated reading name");
    const auto rank = read_raw<std::uint64_t>(is, "rank");
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const auto dim = read_raw<std::uint64_t>(is, "dimension");
      shape.push_back(static_cast<std::size_t>(dim));
      numel *= static_cast<std::size_t>(dim);
    }
    const auto tag = read_raw<std::uint8_t>(is, "dtype tag");
    std::vector<double> data(numel);
    if (tag == static_cast<std::uint8_t>(CheckpointDtype::f64)) {
      is.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(numel * sizeof(double)));
    } else if (tag == static_cast<std::uint8_t>(CheckpointDtype::f32)) {
      std::vector<float> buf(numel);
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(numel * sizeof(float)));
      for (std::size_t i = 0; i < numel; ++i) data[i] = buf[i];
    } else {
      throw ParseError("unknown dtype tag " + std::to_string(tag));
    }
    if (!is) throw ParseError("checkpoint truncated reading data for " + name);
    store.add(name, Tensor::from(std::move(shape), std::move(data)));
  }
  return store;
}

}  // namespace icam
