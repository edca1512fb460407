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

#ifndef PHONOALIGN_NN_GRU_HPP_
#define PHONOALIGN_NN_GRU_HPP_

#include <string>

#include "phonoalign/nn/linear.hpp"

namespace phonoalign::nn {

/// Gated recurrent unit, gate blocks stacked as [reset; update; candidate]:
///   r = sig(Wx_r x + bx_r + Wh_r h + bh_r)
///   z = sig(Wx_z x + bx_z + Wh_z h + bh_z)
///   n = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
///   h' = (1 - z) * n + z * h
template <typename Scalar>
struct GruCell {
  MatrixX<Scalar> wx;  // 3H x I
  MatrixX<Scalar> wh;  // 3H x H
  VectorX<Scalar> bx;  // 3H
  VectorX<Scalar> bh;  // 3H

  GruCell() = default;
  GruCell(int input_dim, int hidden)
      : wx(MatrixX<Scalar>::Zero(3 * hidden, input_dim)),
        wh(MatrixX<Scalar>::Zero(3 * hidden, hidden)),
        bx(VectorX<Scalar>::Zero(3 * hidden)),
        bh(VectorX<Scalar>::Zero(3 * hidden)) {}

  int hidden() const { return static_cast<int>(wh.cols()); }
  int input_dim() const { return static_cast<int>(wx.cols()); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".wx", wx);
    f(prefix + ".wh", wh);
    f(prefix + ".bx", bx);
    f(prefix + ".bh", bh);
  }
  template <typename F>
  void for_each(const std::string& prefix, F&& f) const {
    f(prefix + ".wx", wx);
    f(prefix + ".wh", wh);
    f(prefix + ".bx", bx);
    f(prefix + ".bh", bh);
  }
};

template <typename Scalar>
struct GruStepCache {
  MatrixX<Scalar> x, h_prev, r, z, n, hn;
  RowVectorX<Scalar> mask;  // empty: every column active
};

/// One step for a batch of columns. Columns whose mask entry is 0 keep their
/// previous state (used for padded positions of variable-length batches).
template <typename Scalar>
MatrixX<Scalar> step(const GruCell<Scalar>& cell, const MatrixX<Scalar>& x,
                     const MatrixX<Scalar>& h, const RowVectorX<Scalar>& mask,
                     GruStepCache<Scalar>* cache) {
  const Eigen::Index hd = cell.hidden();
  MatrixX<Scalar> gx = cell.wx * x;
  gx.colwise() += cell.bx;
  MatrixX<Scalar> gh = cell.wh * h;
  gh.colwise() += cell.bh;
  MatrixX<Scalar> r = sigmoid<Scalar>(gx.topRows(hd) + gh.topRows(hd));
  MatrixX<Scalar> z = sigmoid<Scalar>(gx.middleRows(hd, hd) + gh.middleRows(hd, hd));
  MatrixX<Scalar> hn = gh.bottomRows(hd);
  MatrixX<Scalar> n =
      (gx.bottomRows(hd).array() + r.array() * hn.array()).tanh().matrix();
  MatrixX<Scalar> out = ((Scalar(1) - z.array()) * n.array() + z.array() * h.array()).matrix();
  if (mask.size() > 0) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      if (mask(c) == Scalar(0)) out.col(c) = h.col(c);
    }
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = h;
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(n);
    cache->hn = std::move(hn);
    cache->mask = mask;
  }
  return out;
}

/// Backward through one step. Returns d/dx; `dh_prev` receives d/dh.
template <typename Scalar>
MatrixX<Scalar> backward_step(const GruCell<Scalar>& cell, const GruStepCache<Scalar>& c,
                              const MatrixX<Scalar>& dh_out, GruCell<Scalar>& grad,
                              MatrixX<Scalar>& dh_prev) {
  const Eigen::Index hd = cell.hidden();
  MatrixX<Scalar> dh_new = dh_out;
  dh_prev.setZero(dh_out.rows(), dh_out.cols());
  if (c.mask.size() > 0) {
    for (Eigen::Index col = 0; col < dh_out.cols(); ++col) {
      if (c.mask(col) == Scalar(0)) {
        dh_prev.col(col) = dh_out.col(col);
        dh_new.col(col).setZero();
      }
    }
  }
  const auto one = Scalar(1);
  MatrixX<Scalar> dn = (dh_new.array() * (one - c.z.array())).matrix();
  MatrixX<Scalar> dz = (dh_new.array() * (c.h_prev.array() - c.n.array())).matrix();
  dh_prev.array() += dh_new.array() * c.z.array();

  MatrixX<Scalar> dn_pre = (dn.array() * (one - c.n.array().square())).matrix();
  MatrixX<Scalar> dr = (dn_pre.array() * c.hn.array()).matrix();
  MatrixX<Scalar> dr_pre = (dr.array() * c.r.array() * (one - c.r.array())).matrix();
  MatrixX<Scalar> dz_pre = (dz.array() * c.z.array() * (one - c.z.array())).matrix();

  MatrixX<Scalar> dgx(3 * hd, dh_out.cols());
  dgx << dr_pre, dz_pre, dn_pre;
  MatrixX<Scalar> dgh(3 * hd, dh_out.cols());
  dgh << dr_pre, dz_pre, (dn_pre.array() * c.r.array()).matrix();

  grad.wx.noalias() += dgx * c.x.transpose();
  grad.bx += dgx.rowwise().sum();
  grad.wh.noalias() += dgh * c.h_prev.transpose();
  grad.bh += dgh.rowwise().sum();
  dh_prev.noalias() += cell.wh.transpose() * dgh;
  return cell.wx.transpose() * dgx;
}

}  // namespace phonoalign::nn

#endif  // PHONOALIGN_NN_GRU_HPP_
