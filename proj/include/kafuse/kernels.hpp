#pragma once

#include "kafuse/distance.hpp"
#include "kafuse/types.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace kafuse {

struct KernelConfig {
  enum class Bandwidth { median_heuristic, fixed };
  Bandwidth policy = Bandwidth::median_heuristic;
  double fixed_sigma = 1.0;
};

// Gaussian kernels on the selected (Lambda X) and unselected ((I - Lambda) X)
// subspaces of one view, sharing the bandwidth.
template <typename Scalar>
struct KernelPair {
  MatrixX<Scalar> selected;
  MatrixX<Scalar> unselected;
  Scalar sigma{1};
};

// K_ij = exp(-||x_i - x_j||^2 / sigma^2). No factor 2 in the denominator.
template <typename Derived>
MatrixX<typename Derived::Scalar> gaussian_kernel(const Eigen::MatrixBase<Derived>& x,
                                                  typename Derived::Scalar sigma) {
  using Scalar = typename Derived::Scalar;
  if (!(sigma > Scalar(0)) || !std::isfinite(static_cast<double>(sigma)))
    throw ConfigError("kernel bandwidth must be positive and finite");
  const Scalar inv = Scalar(1) / (sigma * sigma);
  return (-inv * sq_dist_matrix(x).array()).exp().matrix();
}

// sqrt of the median nonzero pairwise squared distance. Falls back to 1 when
// every pair of columns coincides.
template <typename Derived>
typename Derived::Scalar median_bandwidth(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const auto d = sq_dist_matrix(x);
  std::vector<Scalar> vals;
  vals.reserve(static_cast<std::size_t>(d.size() / 2));
  for (Index j = 0; j < d.cols(); ++j)
    for (Index i = 0; i < j; ++i)
      if (d(i, j) > Scalar(0)) vals.push_back(d(i, j));
  if (vals.empty()) return Scalar(1);
  const std::size_t mid = vals.size() / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  Scalar med = vals[mid];
  if (vals.size() % 2 == 0) {
    const Scalar lower = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
    med = (med + lower) / Scalar(2);
  }
  return std::sqrt(med);
}

template <typename Derived>
typename Derived::Scalar resolve_bandwidth(const Eigen::MatrixBase<Derived>& x, const KernelConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  if (cfg.policy == KernelConfig::Bandwidth::fixed) {
    if (!(cfg.fixed_sigma > 0.0) || !std::isfinite(cfg.fixed_sigma))
      throw ConfigError("fixed kernel bandwidth must be positive and finite");
    return static_cast<Scalar>(cfg.fixed_sigma);
  }
  return median_bandwidth(x);
}

template <typename DerivedX, typename DerivedL>
KernelPair<typename DerivedX::Scalar> kernel_pair(const Eigen::MatrixBase<DerivedX>& x,
                                                  const Eigen::MatrixBase<DerivedL>& lambda,
                                                  typename DerivedX::Scalar sigma) {
  using Scalar = typename DerivedX::Scalar;
  const VectorX<Scalar> sel = lambda;
  const VectorX<Scalar> unsel = VectorX<Scalar>::Ones(sel.size()) - sel;
  KernelPair<Scalar> p;
  p.sigma = sigma;
  p.selected = gaussian_kernel((sel.asDiagonal() * x).eval(), sigma);
  p.unselected = gaussian_kernel((unsel.asDiagonal() * x).eval(), sigma);
  return p;
}

// H K H with H = I - 11^T/n, applied through row/column means.
template <typename Derived>
MatrixX<typename Derived::Scalar> center(const Eigen::MatrixBase<Derived>& k) {
  using Scalar = typename Derived::Scalar;
  const VectorX<Scalar> row_mean = k.rowwise().mean();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> col_mean = k.colwise().mean();
  const Scalar grand = row_mean.mean();
  MatrixX<Scalar> out = k;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean;
  out.array() += grand;
  return out;
}

// Tr(H Kc H Ku), evaluated as <H Kc H, H Ku H> so swapping the kernels gives
// the identical value.
template <typename Scalar>
Scalar alignment_score(const KernelPair<Scalar>& pair) {
  return center(pair.selected).cwiseProduct(center(pair.unselected)).sum();
}

// For every feature a: sum_ij M_ij (x_ai - x_aj)^2, M symmetric.
template <typename DerivedX, typename DerivedM>
VectorX<typename DerivedX::Scalar> weighted_pair_spread(const Eigen::MatrixBase<DerivedX>& x,
                                                        const Eigen::MatrixBase<DerivedM>& m) {
  using Scalar = typename DerivedX::Scalar;
  const Index n = x.cols();
  VectorX<Scalar> acc = VectorX<Scalar>::Zero(x.rows());
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < j; ++i) acc += m(i, j) * (x.col(i) - x.col(j)).cwiseAbs2();
  return Scalar(2) * acc;
}

// Gradient with respect to lambda of -weight * Tr(H Kc H Ku), where the pair
// was computed from (x, lambda, sigma). `weight` is omega_v^r in the solver.
template <typename DerivedX, typename DerivedL>
VectorX<typename DerivedX::Scalar> alignment_grad_lambda(const Eigen::MatrixBase<DerivedX>& x,
                                                         const Eigen::MatrixBase<DerivedL>& lambda,
                                                         const KernelPair<typename DerivedX::Scalar>& pair,
                                                         typename DerivedX::Scalar weight = 1) {
  using Scalar = typename DerivedX::Scalar;
  const Scalar inv = Scalar(2) / (pair.sigma * pair.sigma);
  const MatrixX<Scalar> m_sel = center(pair.unselected).cwiseProduct(pair.selected);
  const MatrixX<Scalar> m_unsel = center(pair.selected).cwiseProduct(pair.unselected);
  const VectorX<Scalar> s_sel = weighted_pair_spread(x, m_sel);
  const VectorX<Scalar> s_unsel = weighted_pair_spread(x, m_unsel);
  const auto lam = lambda.array();
  return (weight * inv * (lam * s_sel.array() - (Scalar(1) - lam) * s_unsel.array())).matrix();
}

}  // namespace kafuse
