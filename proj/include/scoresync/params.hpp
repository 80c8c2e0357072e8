#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "scoresync/tensor.hpp"

namespace scoresync {

/// A named trainable tensor, e.g. "enc.block2.conv.weight".
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Named tensors of one model. Parameters are trainable; buffers (running
/// statistics) are serialized alongside but never receive gradients.
class ParameterSet {
 public:
  /// Registers a trainable tensor. Names must be unique across params and buffers.
  /// Returns a handle sharing storage with the registered tensor.
  Tensor add(const std::string& name, Tensor tensor);
  /// Registers a non-trainable buffer backed by caller-owned storage.
  void add_buffer(const std::string& name, std::vector<double>* storage);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t parameter_count() const;
  void zero_grad();

  /// Flat copy of all parameter and buffer values, in registration order.
  std::vector<double> snapshot() const;
  void restore(const std::vector<double>& values);

  /// Writes `<stem>.bin` (little-endian f64, name-sorted) and returns the
  /// sidecar entries [{name, shape, offset, kind}].
  nlohmann::json write_binary(const std::filesystem::path& bin_path) const;
  /// Reads values for every registered tensor from a binary + sidecar pair.
  /// Shapes must match exactly.
  void read_binary(const std::filesystem::path& bin_path, const nlohmann::json& entries);

 private:
  struct Buffer {
    std::string name;
    std::vector<double>* storage;
  };
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
  std::map<std::string, std::size_t> index_;  // params only
};

}  // namespace scoresync
