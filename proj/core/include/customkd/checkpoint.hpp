#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "customkd/model.hpp"

namespace customkd {

// Checkpoint container (all integers and floats little-endian):
//
//   magic    8 bytes  "CKDCKPT1"
//   count    u32      number of arrays
//   repeated count times:
//     name_len u32, name bytes (UTF-8, e.g. "student.encoder.layer0.weight")
//     rank     u32, dims u64[rank]
//     values   f64[product(dims)]
//
// Batch-norm running statistics are stored as ordinary arrays
// ("<prefix>.bn.running_mean", "<prefix>.bn.running_var").

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

class Checkpoint {
 public:
  void add(const std::string& name, const Tensor& t);
  void add(const ParameterList& params);
  void add_encoder(const std::string& prefix, const Encoder& e);
  void add_head(const std::string& prefix, const HeadClassifier& h);
  void add_projection(const std::string& prefix, const ProjectionHead& p);
  void add_model(const std::string& prefix, const Model& m);

  bool has(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
  const NamedArray& get(const std::string& name) const;
  Tensor tensor(const std::string& name, bool requires_grad = true) const;

  Encoder encoder(const std::string& prefix) const;
  HeadClassifier head(const std::string& prefix) const;
  ProjectionHead projection(const std::string& prefix) const;
  Model model(const std::string& prefix) const;

  const std::vector<NamedArray>& arrays() const { return arrays_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<NamedArray> arrays_;
};

}  // namespace customkd
