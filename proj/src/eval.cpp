#include "kafuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <thread>

namespace kafuse {

namespace {

// Relabels to 0..p-1 in order of first appearance.
std::vector<Index> compress(const LabelVector& y, Index* blocks) {
  std::map<int, Index> ids;
  std::vector<Index> out(static_cast<std::size_t>(y.size()));
  for (Index i = 0; i < y.size(); ++i) {
    auto [it, inserted] = ids.emplace(y(i), static_cast<Index>(ids.size()));
    out[static_cast<std::size_t>(i)] = it->second;
  }
  *blocks = static_cast<Index>(ids.size());
  return out;
}

Matrix contingency(const LabelVector& a, const LabelVector& b) {
  if (a.size() != b.size()) throw InputError("label vectors differ in length");
  if (a.size() == 0) throw InputError("label vectors are empty");
  Index pa = 0, pb = 0;
  const auto ca = compress(a, &pa);
  const auto cb = compress(b, &pb);
  Matrix t = Matrix::Zero(pa, pb);
  for (std::size_t i = 0; i < ca.size(); ++i) t(ca[i], cb[i]) += 1.0;
  return t;
}

double sq_distance(const Matrix& x, Index i, const Matrix& c, Index j) { return (x.col(i) - c.col(j)).squaredNorm(); }

}  // namespace

std::vector<Index> max_weight_assignment(const Matrix& weight) {
  const Index n = weight.rows();
  if (weight.cols() != n) throw InputError("assignment matrix must be square");
  if (n == 0) return {};
  const double top = weight.maxCoeff();
  // Hungarian method with potentials on cost = top - weight, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  auto cost = [&](Index i, Index j) { return top - weight(i - 1, j - 1); };
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) continue;
        const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] - v[js];
        if (cur < minv[js]) {
          minv[js] = cur;
          way[js] = j0;
        }
        if (minv[js] < delta) {
          delta = minv[js];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) {
          u[static_cast<std::size_t>(p[js])] += delta;
          v[js] -= delta;
        } else {
          minv[js] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<Index> row_to_col(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

double accuracy(const LabelVector& truth, const LabelVector& predicted) {
  const Matrix t = contingency(predicted, truth);
  const Index side = std::max(t.rows(), t.cols());
  Matrix square = Matrix::Zero(side, side);
  square.topLeftCorner(t.rows(), t.cols()) = t;
  const auto match = max_weight_assignment(square);
  double hits = 0;
  for (Index i = 0; i < side; ++i) hits += square(i, match[static_cast<std::size_t>(i)]);
  return hits / static_cast<double>(truth.size());
}

double nmi(const LabelVector& a, const LabelVector& b) {
  const Matrix t = contingency(a, b);
  const double n = static_cast<double>(a.size());
  const Vector ra = t.rowwise().sum();
  const Vector rb = t.colwise().sum().transpose();

  // Identical up to relabeling: every block meets exactly one block.
  bool identical = t.rows() == t.cols();
  for (Index i = 0; identical && i < t.rows(); ++i) identical = (t.row(i).array() > 0).count() == 1;
  if (identical) return 1.0;

  auto entropy = [n](const Vector& counts) {
    double h = 0;
    for (Index i = 0; i < counts.size(); ++i)
      if (counts(i) > 0) h -= counts(i) / n * std::log(counts(i) / n);
    return h;
  };
  const double ha = entropy(ra), hb = entropy(rb);
  if (t.rows() == 1 || t.cols() == 1 || ha <= 0.0 || hb <= 0.0) return 0.0;

  double mi = 0;
  for (Index j = 0; j < t.cols(); ++j)
    for (Index i = 0; i < t.rows(); ++i)
      if (t(i, j) > 0) mi += t(i, j) / n * std::log(n * t(i, j) / (ra(i) * rb(j)));
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

ClusteringResult kmeans(const Matrix& x, Index m, std::uint64_t seed, int max_iter) {
  const Index n = x.cols();
  if (m < 1) throw ConfigError("kmeans needs at least one cluster");
  if (m > n) throw ConfigError("kmeans: more clusters than samples");
  std::mt19937_64 rng(seed);

  ClusteringResult res;
  Matrix& c = res.centroids;
  c.resize(x.rows(), m);
  std::uniform_int_distribution<Index> first(0, n - 1);
  c.col(0) = x.col(first(rng));
  Vector nearest(n);
  for (Index i = 0; i < n; ++i) nearest(i) = sq_distance(x, i, c, 0);
  for (Index j = 1; j < m; ++j) {
    const double total = nearest.sum();
    Index pick = 0;
    if (total > 0.0) {
      const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += nearest(i);
        if (acc > target && nearest(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    c.col(j) = x.col(pick);
    for (Index i = 0; i < n; ++i) nearest(i) = std::min(nearest(i), sq_distance(x, i, c, j));
  }

  LabelVector assign = LabelVector::Constant(n, -1);
  Vector dist(n);
  for (int it = 1; it <= max_iter; ++it) {
    res.iterations = it;
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double bd = sq_distance(x, i, c, 0);
      for (Index j = 1; j < m; ++j) {
        const double d = sq_distance(x, i, c, j);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (assign(i) != best) changed = true;
      assign(i) = static_cast<int>(best);
      dist(i) = bd;
    }

    Vector count = Vector::Zero(m);
    for (Index i = 0; i < n; ++i) count(assign(i)) += 1.0;
    for (Index j = 0; j < m; ++j) {
      if (count(j) > 0) continue;
      Index far = 0;
      for (Index i = 1; i < n; ++i)
        if (dist(i) > dist(far) && count(assign(i)) > 1) far = i;
      if (count(assign(far)) <= 1) break;  // every point already alone
      count(assign(far)) -= 1.0;
      assign(far) = static_cast<int>(j);
      dist(far) = 0.0;
      count(j) = 1.0;
      changed = true;
    }

    c.setZero();
    for (Index i = 0; i < n; ++i) c.col(assign(i)) += x.col(i);
    for (Index j = 0; j < m; ++j)
      if (count(j) > 0) c.col(j) /= count(j);
    if (!changed) break;
  }

  res.inertia = 0;
  for (Index i = 0; i < n; ++i) res.inertia += sq_distance(x, i, c, assign(i));
  res.assignment = assign.array() + 1;
  return res;
}

Index selected_count(Index total, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("feature ratio must lie in (0, 1]");
  const auto l = static_cast<Index>(std::llround(ratio * static_cast<double>(total)));
  return std::clamp<Index>(l, 1, total);
}

Matrix stack_features(const MultiViewDataset& ds, const FeatureRanking& selected) {
  Matrix out(static_cast<Index>(selected.size()), ds.samples());
  for (std::size_t r = 0; r < selected.size(); ++r) {
    const auto& f = selected[r];
    out.row(static_cast<Index>(r)) = ds.views[static_cast<std::size_t>(f.view)].data.row(f.feature);
  }
  return out;
}

EvaluationReport evaluate_selection(const MultiViewDataset& ds, const FeatureRanking& ranking, double ratio, int runs,
                                    std::uint64_t seed, int threads) {
  if (!ds.labels) throw InputError("dataset has no labels to evaluate against");
  if (runs < 1) throw ConfigError("runs must be at least 1");
  const Index total = ds.total_features();
  if (static_cast<Index>(ranking.size()) != total) throw ConfigError("ranking must cover every feature");
  const Index l = selected_count(total, ratio);

  EvaluationReport rep;
  rep.runs = runs;
  rep.feature_ratio = ratio;
  rep.selected.assign(ranking.begin(), ranking.begin() + l);
  const Matrix x = stack_features(ds, rep.selected);
  const LabelVector& y = *ds.labels;
  Index classes = 0;
  compress(y, &classes);
  const Index m = ds.class_count ? static_cast<Index>(*ds.class_count) : classes;

  std::vector<double> acc(static_cast<std::size_t>(runs)), mi(static_cast<std::size_t>(runs));
  auto work = [&](int begin, int stride) {
    for (int r = begin; r < runs; r += stride) {
      const auto cl = kmeans(x, m, seed + static_cast<std::uint64_t>(r));
      acc[static_cast<std::size_t>(r)] = 100.0 * accuracy(y, cl.assignment);
      mi[static_cast<std::size_t>(r)] = 100.0 * nmi(y, cl.assignment);
    }
  };
  const int workers = std::clamp(threads, 1, runs);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }

  auto stats = [runs](const std::vector<double>& v, double* mean, double* sd) {
    double s = 0;
    for (double e : v) s += e;
    *mean = s / runs;
    double q = 0;
    for (double e : v) q += (e - *mean) * (e - *mean);
    *sd = runs > 1 ? std::sqrt(q / (runs - 1)) : 0.0;
  };
  stats(acc, &rep.acc_mean, &rep.acc_std);
  stats(mi, &rep.nmi_mean, &rep.nmi_std);
  return rep;
}

}  // namespace kafuse
