#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace avsc::nn {

// Feature maps are stored positions x channels, row-major. A 1-D map has one
// row per time step; a 2-D map has one row per pixel in row-major (y, x) order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Batch = std::vector<Matrix>;
using Rng = std::mt19937_64;

/// Named tensors with deterministic (lexicographic) iteration order.
class ParamMap {
 public:
  Matrix& add(const std::string& name, Matrix value);
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  /// Same names and shapes, all zeros.
  ParamMap zeros_like() const;
  void set_zero();
  std::size_t size() const { return tensors_.size(); }
  std::size_t element_count() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  bool operator==(const ParamMap& other) const;

 private:
  std::map<std::string, Matrix> tensors_;
};

/// Trainable parameters plus non-trainable buffers (normalization statistics).
struct Weights {
  ParamMap params;
  ParamMap buffers;

  bool operator==(const Weights& other) const = default;
};

enum class Mode { kTrain, kInference };

inline Batch single(Matrix m) {
  Batch b;
  b.push_back(std::move(m));
  return b;
}

}  // namespace avsc::nn
