#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "persemon/common.hpp"

namespace persemon {

// Dense row-major tensor of doubles. The one value type everything else
// (autodiff nodes, datasets, checkpoints) is built from.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double item() const;  // contract: numel() == 1

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  void fill(double v);
  void add_inplace(const Tensor& o);  // contract: same shape

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dies with ShapeError when cond is false.
void check_shape(bool cond, const std::string& msg);

// Uniform / gaussian fills with an explicit engine; all randomness in the
// project flows through seeded mt19937_64 instances.
void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi);
void fill_gaussian(Tensor& t, std::mt19937_64& rng, double mean, double stddev);

// --- Flat binary tensor files -------------------------------------------
//
// Layout (little endian):
//   8 bytes  magic "PSMTNSR1"
//   u32      rank
//   u64[r]   dims
//   f64[n]   row-major payload
//
// The same layout backs datasets and checkpoints; see README for details.
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

// FNV-1a 64-bit over a file's bytes; manifests use it to pin inputs.
uint64_t fnv1a_file(const std::string& path);
std::string hex64(uint64_t v);

}  // namespace persemon
