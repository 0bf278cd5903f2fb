#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "srhand/common.h"

namespace srhand {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Dense row-major tensor of arbitrary rank, backed by a single Eigen vector.
// Matrix views (for products, reductions) are taken with mat()/as_matrix().
template <typename S>
struct Tensor {
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  Shape shape;
  Vec data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) { data.setZero(count(shape)); }
  Tensor(Shape s, Vec d) : shape(std::move(s)), data(std::move(d)) {}

  static Index count(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, S v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }
  static Tensor scalar(S v) { return full({1}, v); }

  Index size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  Index dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  S& operator[](Index i) { return data[i]; }
  S operator[](Index i) const { return data[i]; }

  // 2D view with explicit dims (must multiply out to size()).
  MatMap<S> mat(Index rows, Index cols) { return MatMap<S>(data.data(), rows, cols); }
  ConstMatMap<S> mat(Index rows, Index cols) const {
    return ConstMatMap<S>(data.data(), rows, cols);
  }
  // View of a rank-2 tensor with its own dims.
  MatMap<S> as_matrix() { return mat(shape[0], shape[1]); }
  ConstMatMap<S> as_matrix() const { return mat(shape[0], shape[1]); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const { return data.allFinite(); }

  Tensor reshaped(Shape s) const {
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  template <typename T2>
  Tensor<T2> cast() const {
    Tensor<T2> t;
    t.shape = shape;
    t.data = data.template cast<T2>();
    return t;
  }
};

template <typename S>
Tensor<S> random_normal(Shape s, Rng& rng, S stddev = S(1)) {
  Tensor<S> t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

template <typename S>
Tensor<S> random_uniform(Shape s, Rng& rng, S lo = S(0), S hi = S(1)) {
  Tensor<S> t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace srhand
