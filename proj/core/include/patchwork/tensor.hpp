// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float storage used by the model and its activation cache.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace patchwork {

class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(int r, int c) { return data_[index(r, c)]; }
  float operator()(int r, int c) const { return data_[index(r, c)]; }

  std::span<float> row(int r) {
    return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
  }
  std::span<const float> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * cols_ + c;
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

/// Three-axis tensor [a][b][c]; used for per-head activations.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int dim0, int dim1, int dim2, float fill = 0.0f)
      : dims_{dim0, dim1, dim2},
        data_(static_cast<std::size_t>(dim0) * dim1 * dim2, fill) {}

  int dim(int axis) const noexcept { return dims_[axis]; }

  float& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  float operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  std::span<float> vec(int i, int j) {
    return {data_.data() + index(i, j, 0), static_cast<std::size_t>(dims_[2])};
  }
  std::span<const float> vec(int i, int j) const {
    return {data_.data() + index(i, j, 0), static_cast<std::size_t>(dims_[2])};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
  }

  int dims_[3] = {0, 0, 0};
  std::vector<float> data_;
};

}  // namespace patchwork
