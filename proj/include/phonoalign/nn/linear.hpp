// Copyright 2026 The phonoalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PHONOALIGN_NN_LINEAR_HPP_
#define PHONOALIGN_NN_LINEAR_HPP_

#include <limits>
#include <string>

#include "phonoalign/common.hpp"

namespace phonoalign::nn {

// Columns are batch items throughout: an input batch is in_dim x B.
template <typename Scalar>
struct Linear {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;    // out

  Linear() = default;
  Linear(int in_dim, int out_dim)
      : weight(MatrixX<Scalar>::Zero(out_dim, in_dim)), bias(VectorX<Scalar>::Zero(out_dim)) {}

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
  template <typename F>
  void for_each(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename Scalar, typename Derived>
MatrixX<Scalar> forward(const Linear<Scalar>& layer, const Eigen::MatrixBase<Derived>& x) {
  MatrixX<Scalar> y = layer.weight * x;
  y.colwise() += layer.bias;
  return y;
}

/// Accumulates parameter gradients into `grad` and returns d(loss)/d(x).
template <typename Scalar>
MatrixX<Scalar> backward(const Linear<Scalar>& layer, const MatrixX<Scalar>& x,
                         const MatrixX<Scalar>& dy, Linear<Scalar>& grad) {
  grad.weight.noalias() += dy * x.transpose();
  grad.bias += dy.rowwise().sum();
  return layer.weight.transpose() * dy;
}

template <typename Scalar>
MatrixX<Scalar> sigmoid(const MatrixX<Scalar>& x) {
  return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
}

template <typename Scalar>
MatrixX<Scalar> tanh(const MatrixX<Scalar>& x) {
  return x.array().tanh().matrix();
}

/// Column-wise softmax; -inf entries receive probability 0.
template <typename Scalar>
MatrixX<Scalar> softmax_columns(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Scalar m = logits.col(c).maxCoeff();
    p.col(c) = (logits.col(c).array() - m).exp().matrix();
    // Vectorised exp clamps -inf to a denormal; masked entries must be 0.
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (logits(r, c) == -std::numeric_limits<Scalar>::infinity()) p(r, c) = Scalar(0);
    }
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

template <typename Scalar>
void init_uniform(MatrixX<Scalar>& m, Scalar range, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>(uniform_real(rng, -range, range));
  }
}

}  // namespace phonoalign::nn

#endif  // PHONOALIGN_NN_LINEAR_HPP_
