#pragma once

#include "kafuse/distance.hpp"
#include "kafuse/types.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace kafuse {

// Consistent graph Z, per-view graphs S^(v) and per-sample view weights q
// (column j holds the weights of sample j). Graph columns are k-sparse,
// nonnegative, sum to one and have a zero diagonal once updated.
struct GraphState {
  Matrix Z;
  std::vector<Matrix> S;
  Matrix q;
  Index k = 5;
};

struct GraphUpdateStats {
  Index fallbacks = 0;  // columns solved with the uniform 1/k rule
  Index ridged = 0;     // q columns that needed a ridge
  Index clipped = 0;    // q columns with negative weights clipped
};

// Denominators below this are treated as degenerate.
inline constexpr double kSimplexDegenerate = 1e-12;

inline void check_neighbor_count(Index k, Index n) {
  if (k < 1 || k > n - 2)
    throw ConfigError("neighbor count k=" + std::to_string(k) + " outside [1, n-2] for n=" + std::to_string(n));
}

// Indices of the `count` smallest entries of `a`, skipping `self` (pass -1 to
// keep every entry), ordered by value and then by index.
template <typename Derived>
std::vector<Index> smallest_entries(const Eigen::MatrixBase<Derived>& a, Index self, Index count) {
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(a.size()));
  for (Index i = 0; i < a.size(); ++i)
    if (i != self) idx.push_back(i);
  count = std::min<Index>(count, static_cast<Index>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), [&](Index l, Index r) {
    return a(l) < a(r) || (a(l) == a(r) && l < r);
  });
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

// k * a_(k+1) - sum_{i<=k} a_(i) over the ascending order of `a` without
// `self`. This is twice (1 + eta) for the Z column problem and twice
// (q^2 + gamma) for the S column problem.
template <typename Derived>
typename Derived::Scalar simplex_margin(const Eigen::MatrixBase<Derived>& a, Index self, Index k) {
  using Scalar = typename Derived::Scalar;
  const auto idx = smallest_entries(a, self, k + 1);
  Scalar head = 0;
  for (Index i = 0; i < k; ++i) head += a(idx[static_cast<std::size_t>(i)]);
  return Scalar(k) * a(idx[static_cast<std::size_t>(k)]) - head;
}

template <typename Scalar>
struct SimplexColumn {
  VectorX<Scalar> values;
  bool fallback = false;
};

// Closed-form k-sparse simplex column:
//   z_i = (a_(k+1) - a_i) / (k a_(k+1) - sum_{i<=k} a_(i)) on the k smallest,
// zero elsewhere and at `self`. A degenerate denominator gives 1/k on the
// k smallest.
template <typename Derived>
SimplexColumn<typename Derived::Scalar> sparse_simplex_column(const Eigen::MatrixBase<Derived>& a, Index self,
                                                              Index k) {
  using Scalar = typename Derived::Scalar;
  const auto idx = smallest_entries(a, self, k + 1);
  if (static_cast<Index>(idx.size()) < k + 1) throw ConfigError("column too short for k-sparse solve");
  Scalar head = 0;
  for (Index i = 0; i < k; ++i) head += a(idx[static_cast<std::size_t>(i)]);
  const Scalar next = a(idx[static_cast<std::size_t>(k)]);
  const Scalar denom = Scalar(k) * next - head;

  SimplexColumn<Scalar> col;
  col.values = VectorX<Scalar>::Zero(a.size());
  if (!(denom >= Scalar(kSimplexDegenerate))) {
    col.fallback = true;
    for (Index i = 0; i < k; ++i) col.values(idx[static_cast<std::size_t>(i)]) = Scalar(1) / Scalar(k);
    return col;
  }
  for (Index i = 0; i < k; ++i) {
    const Index r = idx[static_cast<std::size_t>(i)];
    col.values(r) = (next - a(r)) / denom;
  }
  return col;
}

// k-nearest-neighbour graph with probabilistic neighbours, column-wise from a
// distance matrix.
template <typename Derived>
MatrixX<typename Derived::Scalar> init_view_graph(const Eigen::MatrixBase<Derived>& dist, Index k,
                                                  GraphUpdateStats* stats = nullptr) {
  using Scalar = typename Derived::Scalar;
  const Index n = dist.cols();
  check_neighbor_count(k, n);
  MatrixX<Scalar> g(n, n);
  for (Index j = 0; j < n; ++j) {
    auto col = sparse_simplex_column(dist.col(j), j, k);
    if (col.fallback && stats) ++stats->fallbacks;
    g.col(j) = col.values;
  }
  return g;
}

// Fused neighbourhood of every sample: column j is sum_v q_vj S^(v)_{.j}.
template <typename Scalar>
MatrixX<Scalar> fused_graph(const std::vector<MatrixX<Scalar>>& s, const MatrixX<Scalar>& q) {
  MatrixX<Scalar> p = MatrixX<Scalar>::Zero(s.front().rows(), s.front().cols());
  for (std::size_t v = 0; v < s.size(); ++v) p += s[v] * q.row(static_cast<Index>(v)).asDiagonal();
  return p;
}

// Columns A_{.j} = alpha D_{.j} - 2 S~_j^T q_{.j} with D = 0.5 sq_dist(F).
template <typename Scalar>
MatrixX<Scalar> consensus_scores(const MatrixX<Scalar>& f, const std::vector<MatrixX<Scalar>>& s,
                                 const MatrixX<Scalar>& q, Scalar alpha) {
  return (alpha * Scalar(0.5)) * sq_dist_matrix(f) - Scalar(2) * fused_graph(s, q);
}

template <typename Scalar>
MatrixX<Scalar> update_z(const MatrixX<Scalar>& f, const std::vector<MatrixX<Scalar>>& s, const MatrixX<Scalar>& q,
                         Scalar alpha, Index k, GraphUpdateStats* stats = nullptr) {
  const MatrixX<Scalar> a = consensus_scores(f, s, q, alpha);
  const Index n = a.cols();
  check_neighbor_count(k, n);
  MatrixX<Scalar> z(n, n);
  for (Index j = 0; j < n; ++j) {
    auto col = sparse_simplex_column(a.col(j), j, k);
    if (col.fallback && stats) ++stats->fallbacks;
    z.col(j) = col.values;
  }
  return z;
}

// Columns N_{.j} = (beta/2) O_{.j} - 2 q_vj Z_{.j}.
template <typename Scalar, typename DerivedQ>
MatrixX<Scalar> view_scores(const MatrixX<Scalar>& o, const MatrixX<Scalar>& z,
                            const Eigen::MatrixBase<DerivedQ>& q_row, Scalar beta) {
  return (beta / Scalar(2)) * o - Scalar(2) * z * q_row.asDiagonal();
}

// `o` holds squared distances between the columns of Lambda^(v) X^(v);
// `q_row` is row v of q.
template <typename Scalar, typename DerivedQ>
MatrixX<Scalar> update_s(const MatrixX<Scalar>& o, const MatrixX<Scalar>& z, const Eigen::MatrixBase<DerivedQ>& q_row,
                         Scalar beta, Index k, GraphUpdateStats* stats = nullptr) {
  const MatrixX<Scalar> nv = view_scores(o, z, q_row, beta);
  const Index n = nv.cols();
  check_neighbor_count(k, n);
  MatrixX<Scalar> s(n, n);
  for (Index j = 0; j < n; ++j) {
    auto col = sparse_simplex_column(nv.col(j), j, k);
    if (col.fallback && stats) ++stats->fallbacks;
    s.col(j) = col.values;
  }
  return s;
}

// q = G^{-1} 1 / (1^T G^{-1} 1) for the V x V Gram matrix G = B B^T, with a
// ridge when G is singular and clip-and-renormalise for negative weights.
template <typename Scalar>
VectorX<Scalar> view_weights_from_gram(const MatrixX<Scalar>& gram, bool* ridged = nullptr,
                                       bool* clipped = nullptr) {
  const Index v = gram.rows();
  if (v == 1) return VectorX<Scalar>::Ones(1);
  const VectorX<Scalar> ones = VectorX<Scalar>::Ones(v);

  Eigen::LLT<MatrixX<Scalar>> llt(gram);
  bool singular = llt.info() != Eigen::Success || !(llt.rcond() > Scalar(1e-12));
  if (singular) {
    const Scalar eps = Scalar(1e-10) * gram.trace() / Scalar(v) + Scalar(1e-12);
    llt.compute(gram + eps * MatrixX<Scalar>::Identity(v, v));
    if (ridged) *ridged = true;
  }
  VectorX<Scalar> x = llt.solve(ones);
  VectorX<Scalar> q = x / x.sum();
  if (!q.allFinite()) return VectorX<Scalar>::Constant(v, Scalar(1) / Scalar(v));
  if ((q.array() < Scalar(0)).any()) {
    if (clipped) *clipped = true;
    q = q.cwiseMax(Scalar(0));
    const Scalar total = q.sum();
    if (total > Scalar(0))
      q /= total;
    else
      q.setConstant(Scalar(1) / Scalar(v));
  }
  return q;
}

// B_j B_j^T with B_j = 1_V Z_{.j}^T - S~_j.
template <typename Scalar>
MatrixX<Scalar> fusion_gram(const MatrixX<Scalar>& z, const std::vector<MatrixX<Scalar>>& s, Index j) {
  const Index v = static_cast<Index>(s.size());
  MatrixX<Scalar> b(v, z.rows());
  for (Index u = 0; u < v; ++u) b.row(u) = (z.col(j) - s[static_cast<std::size_t>(u)].col(j)).transpose();
  return b * b.transpose();
}

template <typename Scalar>
MatrixX<Scalar> update_q(const MatrixX<Scalar>& z, const std::vector<MatrixX<Scalar>>& s,
                         GraphUpdateStats* stats = nullptr) {
  const Index v = static_cast<Index>(s.size());
  const Index n = z.cols();
  MatrixX<Scalar> q(v, n);
  for (Index j = 0; j < n; ++j) {
    bool ridged = false, clipped = false;
    q.col(j) = view_weights_from_gram(fusion_gram(z, s, j), &ridged, &clipped);
    if (stats) {
      stats->ridged += ridged;
      stats->clipped += clipped;
    }
  }
  return q;
}

// Laplacian of the symmetrised weight matrix.
template <typename Derived>
MatrixX<typename Derived::Scalar> laplacian(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> sym = (w + w.transpose()) / Scalar(2);
  MatrixX<Scalar> l = -sym;
  l.diagonal() += sym.rowwise().sum();
  return l;
}

}  // namespace kafuse
