#pragma once

#include "kafuse/types.hpp"

namespace kafuse {

// Pairwise squared Euclidean distances between the columns of `m`.
// Each pair is summed directly over the rows, so identical columns give an
// exact zero and the result is exactly symmetric.
template <typename Derived>
MatrixX<typename Derived::Scalar> sq_dist_matrix(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Index n = m.cols();
  MatrixX<Scalar> d = MatrixX<Scalar>::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < j; ++i) {
      const Scalar s = (m.col(i) - m.col(j)).squaredNorm();
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

}  // namespace kafuse
