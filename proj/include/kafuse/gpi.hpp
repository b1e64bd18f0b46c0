#pragma once

#include "kafuse/types.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace kafuse {

struct GpiConfig {
  double margin = 1.01;  // relaxation = margin * spectral-norm estimate of A
  double tol = 1e-6;     // relative change of the subproblem objective
  int max_iter = 100;
  int power_iters = 50;
  std::uint64_t seed = 0;  // only used to complete rank-deficient polar factors
};

template <typename Scalar>
struct GpiResult {
  MatrixX<Scalar> W;
  std::vector<Scalar> objective;  // entry 0 is the starting point
  int iterations = 0;
  bool converged = false;
  bool rank_deficient = false;
  int relaxation_raises = 0;  // times the relaxation had to be doubled
  Scalar relaxation{0};
};

// Tr(W^T A W - 2 W^T B).
template <typename DA, typename DB, typename DW>
typename DA::Scalar gpi_objective(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                  const Eigen::MatrixBase<DW>& w) {
  return (w.transpose() * a * w).trace() - typename DA::Scalar(2) * w.cwiseProduct(b).sum();
}

// Power-iteration estimate of ||A||_2 for symmetric A, from a fixed start
// vector so that repeated calls agree bitwise.
template <typename Derived>
typename Derived::Scalar spectral_norm_estimate(const Eigen::MatrixBase<Derived>& a, int iters) {
  using Scalar = typename Derived::Scalar;
  const Index m = a.rows();
  if (m == 0) return Scalar(0);
  VectorX<Scalar> v(m);
  for (Index i = 0; i < m; ++i) v(i) = Scalar(1) + Scalar(i % 7) / Scalar(7);
  v.normalize();
  Scalar est = 0;
  for (int it = 0; it < iters; ++it) {
    VectorX<Scalar> av = a * v;
    const Scalar nrm = av.norm();
    est = std::max(est, nrm);
    if (!(nrm > Scalar(0))) break;
    v = av / nrm;
  }
  return est;
}

// Orthonormal factor U V^T of m (thin SVD). When m is rank deficient the
// missing left singular directions are filled with a seeded orthonormal
// completion and `*deficient` is set.
template <typename Derived>
MatrixX<typename Derived::Scalar> polar_factor(const Eigen::MatrixBase<Derived>& m, std::uint64_t seed,
                                               bool* deficient = nullptr) {
  using Scalar = typename Derived::Scalar;
  using Mat = MatrixX<Scalar>;
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const Index c = m.cols();
  const Scalar cutoff = std::max<Scalar>(sv.size() ? sv(0) : Scalar(0), Scalar(1)) *
                        Scalar(m.rows()) * std::numeric_limits<Scalar>::epsilon();
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  if (rank == c) return svd.matrixU() * svd.matrixV().transpose();

  if (deficient) *deficient = true;
  Mat u = svd.matrixU();
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(0, 1);
  Mat extra(m.rows(), c - rank);
  for (Index j = 0; j < extra.cols(); ++j)
    for (Index i = 0; i < extra.rows(); ++i) extra(i, j) = normal(rng);
  const Mat kept = u.leftCols(rank);
  extra -= kept * (kept.transpose() * extra);
  Eigen::HouseholderQR<Mat> qr(extra);
  Mat basis = qr.householderQ() * Mat::Identity(m.rows(), c - rank);
  basis -= kept * (kept.transpose() * basis);
  Eigen::HouseholderQR<Mat> qr2(basis);
  u.rightCols(c - rank) = qr2.householderQ() * Mat::Identity(m.rows(), c - rank);
  return u * svd.matrixV().transpose();
}

// Generalized power iteration for  min Tr(W^T A W - 2 W^T B)  s.t. W^T W = I
// with A symmetric. Each step sets W to the polar factor of
// 2 (eta I - A) W + 2 B. If a step raises the objective the relaxation was
// too small for an indefinite or poorly estimated A; it is doubled and the
// step retried.
template <typename DA, typename DB, typename DW>
GpiResult<typename DA::Scalar> gpi_solve(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                         const Eigen::MatrixBase<DW>& w0, const GpiConfig& cfg) {
  using Scalar = typename DA::Scalar;
  using Mat = MatrixX<Scalar>;
  if (a.rows() != a.cols() || b.rows() != a.rows() || w0.rows() != a.rows() || w0.cols() != b.cols())
    throw ConfigError("gpi_solve: inconsistent shapes");
  if (w0.cols() > w0.rows()) throw ConfigError("gpi_solve: needs at least as many rows as columns");

  GpiResult<Scalar> res;
  res.relaxation = Scalar(cfg.margin) * spectral_norm_estimate(a, cfg.power_iters);
  res.W = w0;
  Scalar obj = gpi_objective(a, b, res.W);
  res.objective.push_back(obj);

  int raises = 0;
  for (int it = 0; it < cfg.max_iter; ++it) {
    res.iterations = it + 1;
    const Mat m = Scalar(2) * (res.relaxation * res.W - a * res.W) + Scalar(2) * b;
    bool deficient = false;
    Mat next = polar_factor(m, cfg.seed + static_cast<std::uint64_t>(it), &deficient);
    Scalar next_obj = gpi_objective(a, b, next);
    while (next_obj > obj + Scalar(1e-12) * (Scalar(1) + std::abs(obj)) && raises < 60) {
      ++raises;
      res.relaxation = res.relaxation > Scalar(0) ? Scalar(2) * res.relaxation : Scalar(1);
      const Mat m2 = Scalar(2) * (res.relaxation * res.W - a * res.W) + Scalar(2) * b;
      deficient = false;
      next = polar_factor(m2, cfg.seed + static_cast<std::uint64_t>(it), &deficient);
      next_obj = gpi_objective(a, b, next);
    }
    if (next_obj > obj) {
      // No descent available at this relaxation; keep the current point.
      res.converged = true;
      break;
    }
    res.rank_deficient = res.rank_deficient || deficient;
    const Scalar change = std::abs(obj - next_obj) / std::max(std::abs(obj), Scalar(1e-12));
    res.W = std::move(next);
    obj = next_obj;
    res.objective.push_back(obj);
    if (change < Scalar(cfg.tol)) {
      res.converged = true;
      break;
    }
  }
  res.relaxation_raises = raises;
  return res;
}

// Orthonormal m x c matrix from the QR factorization of a seeded Gaussian.
template <typename Scalar, typename Rng>
MatrixX<Scalar> random_orthonormal(Index m, Index c, Rng& rng) {
  using Mat = MatrixX<Scalar>;
  std::normal_distribution<Scalar> normal(0, 1);
  Mat g(m, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < m; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  return qr.householderQ() * Mat::Identity(m, c);
}

}  // namespace kafuse
