#include "kafuse/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace kafuse {

namespace {

Matrix selected(const Vector& lambda, const Matrix& x) { return lambda.asDiagonal() * x; }

// M H: subtract the mean of every row.
Matrix center_rows(Matrix m) {
  const Vector mean = m.rowwise().mean();
  m.colwise() -= mean;
  return m;
}

double regression_residual(const Matrix& w, const Vector& lambda, const Matrix& x, const Matrix& f) {
  return center_rows(w.transpose() * selected(lambda, x) - f).squaredNorm();
}

void check_finite(const ObjectiveTerms& terms, const std::string& where) {
  const std::string bad = terms.first_non_finite();
  if (!bad.empty()) throw NumericalError("non-finite objective term '" + bad + "' after " + where);
}

// Evaluates the objective, caching per-view quantities that depend only on
// lambda (distances of Lambda X and the alignment score). Two entries are
// kept per view so that a rejected lambda candidate does not evict the
// current one.
class ObjectiveEvaluator {
 public:
  ObjectiveEvaluator(const MultiViewDataset& ds, const SolverConfig& cfg) : ds_(ds), cfg_(cfg) {
    cache_.resize(ds.views.size());
  }

  const Matrix& distances(const ModelState& s, Index v) { return entry(s, v, false).o; }
  double alignment(const ModelState& s, Index v) { return entry(s, v, true).h; }

  ObjectiveTerms evaluate(const ModelState& s) {
    ObjectiveTerms t;
    const Index nv = ds_.view_count();
    for (Index v = 0; v < nv; ++v) {
      const auto vi = static_cast<std::size_t>(v);
      t.regression += s.theta(v) * s.theta(v) * regression_residual(s.W[vi], s.lambda[vi], ds_.views[vi].data, s.F);
    }
    if (cfg_.uses_alignment()) {
      for (Index v = 0; v < nv; ++v) t.alignment -= std::pow(s.omega(v), cfg_.r) * alignment(s, v);
    }
    if (cfg_.uses_graph()) {
      const auto& g = s.graph;
      const Index n = g.Z.cols();
      t.fusion = (g.Z - fused_graph(g.S, g.q)).squaredNorm();

      const Matrix a = consensus_scores(s.F, g.S, g.q, cfg_.alpha);
      for (Index j = 0; j < n; ++j) {
        const double eta = simplex_margin(a.col(j), j, g.k) / 2.0 - 1.0;
        t.consensus_reg += eta * g.Z.col(j).squaredNorm();
      }
      t.label_smoothness = cfg_.alpha * (s.F * laplacian(g.Z)).cwiseProduct(s.F).sum();

      for (Index v = 0; v < nv; ++v) {
        const auto vi = static_cast<std::size_t>(v);
        const Matrix& o = distances(s, v);
        const Matrix& sv = g.S[vi];
        t.view_smoothness += cfg_.beta * 0.5 * sv.cwiseProduct(o).sum();
        const Matrix scores = view_scores(o, g.Z, g.q.row(v), cfg_.beta);
        for (Index j = 0; j < n; ++j) {
          const double gamma = simplex_margin(scores.col(j), j, g.k) / 2.0 - g.q(v, j) * g.q(v, j);
          t.view_reg += gamma * sv.col(j).squaredNorm();
        }
      }
    }
    return t;
  }

 private:
  struct Entry {
    Vector lambda;
    Matrix o;
    bool has_o = false;
    bool has_h = false;
    double h = 0;
  };

  Entry& entry(const ModelState& s, Index v, bool need_h) {
    const auto vi = static_cast<std::size_t>(v);
    auto& slots = cache_[vi];
    const Vector& lambda = s.lambda[vi];
    Entry* hit = nullptr;
    for (auto& e : slots)
      if (e.lambda.size() == lambda.size() && e.lambda == lambda) hit = &e;
    if (!hit) {
      if (slots.size() == 2) slots.erase(slots.begin());
      slots.push_back(Entry{lambda, Matrix(), false, false, 0.0});
      hit = &slots.back();
    }
    const Matrix& x = ds_.views[vi].data;
    if (!need_h && !hit->has_o) {
      hit->o = sq_dist_matrix(selected(lambda, x));
      hit->has_o = true;
    }
    if (need_h && !hit->has_h) {
      hit->h = alignment_score(kernel_pair(x, lambda, s.sigma[vi]));
      hit->has_h = true;
    }
    return *hit;
  }

  const MultiViewDataset& ds_;
  const SolverConfig& cfg_;
  std::vector<std::vector<Entry>> cache_;
};

GpiConfig view_gpi_config(const SolverConfig& cfg, Index salt) {
  GpiConfig g = cfg.gpi;
  g.seed = cfg.gpi.seed ^ (cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(salt));
  return g;
}

void record_gpi(const GpiResult<double>& res, IterationFlags* flags) {
  if (!flags) return;
  flags->gpi_rank_deficient += res.rank_deficient;
  flags->gpi_relaxation_raises += res.relaxation_raises;
}

}  // namespace

Mode parse_mode(const std::string& s) {
  if (s == "full") return Mode::full;
  if (s == "graph_only") return Mode::graph_only;
  if (s == "kernel_only") return Mode::kernel_only;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::graph_only: return "graph_only";
    case Mode::kernel_only: return "kernel_only";
  }
  return "full";
}

Index SolverConfig::resolve_clusters(const MultiViewDataset& ds) const {
  if (clusters) return *clusters;
  if (ds.class_count) return *ds.class_count;
  throw ConfigError("cluster count c must be given when the dataset has no labels");
}

void SolverConfig::validate(const MultiViewDataset& ds) const {
  const Index n = ds.samples();
  auto nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
  if (!nonneg(alpha) || !nonneg(beta)) throw ConfigError("alpha and beta must be nonnegative");
  if (!(r > 1.0) || !std::isfinite(r)) throw ConfigError("r must be greater than 1");
  if (!nonneg(zeta)) throw ConfigError("zeta must be nonnegative");
  if (k < 1 || k > n - 2) throw ConfigError("k must lie in [1, n-2]");
  const Index c = resolve_clusters(ds);
  if (c < 2 || c > n - 1) throw ConfigError("c must lie in [2, n-1]");
  for (const auto& v : ds.views)
    if (v.dim() < c) throw ConfigError("c exceeds the feature count of view '" + v.name + "'");
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("step must be positive");
  if (max_halvings < 0) throw ConfigError("max_halvings must be nonnegative");
  if (lambda_iters < 1 || !nonneg(lambda_tol)) throw ConfigError("lambda iterations must be positive");
  if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (!nonneg(tol)) throw ConfigError("tol must be nonnegative");
  if (!(gpi.margin >= 1.0)) throw ConfigError("GPI margin must be at least 1");
  if (gpi.max_iter < 1 || gpi.power_iters < 1) throw ConfigError("GPI iteration counts must be positive");
  if (kernel.policy == KernelConfig::Bandwidth::fixed && !(kernel.fixed_sigma > 0.0))
    throw ConfigError("fixed kernel bandwidth must be positive");
}

double ObjectiveTerms::total() const {
  return regression + alignment + fusion + consensus_reg + label_smoothness + view_smoothness + view_reg;
}

std::string ObjectiveTerms::first_non_finite() const {
  const std::pair<const char*, double> terms[] = {
      {"regression", regression},   {"alignment", alignment},
      {"fusion", fusion},           {"consensus_reg", consensus_reg},
      {"label_smoothness", label_smoothness}, {"view_smoothness", view_smoothness},
      {"view_reg", view_reg}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value)) return name;
  return {};
}

std::string IterationFlags::summary() const {
  std::ostringstream os;
  const char* sep = "";
  auto put = [&](const char* name, Index v) {
    if (v) {
      os << sep << name << '=' << v;
      sep = ";";
    }
  };
  put("simplex_fallback", simplex_fallbacks);
  put("q_ridge", q_ridged);
  put("q_clip", q_clipped);
  put("theta_degenerate", theta_degenerate);
  put("omega_degenerate", omega_degenerate);
  put("gpi_rank_deficient", gpi_rank_deficient);
  put("gpi_relaxation_raise", gpi_relaxation_raises);
  put("lambda_backtrack_exhausted", lambda_backtrack_exhausted);
  if (!rejected_blocks.empty()) {
    os << sep << "rejected=";
    for (std::size_t i = 0; i < rejected_blocks.size(); ++i) os << (i ? "|" : "") << rejected_blocks[i];
  }
  return os.str();
}

ModelState initialize(const MultiViewDataset& ds, const SolverConfig& cfg) {
  ds.validate();
  cfg.validate(ds);
  const Index c = cfg.resolve_clusters(ds);
  const Index n = ds.samples();
  const Index nv = ds.view_count();

  std::mt19937_64 rng(cfg.seed);
  ModelState s;
  for (const auto& view : ds.views) s.W.push_back(random_orthonormal<double>(view.dim(), c, rng));
  s.F = random_orthonormal<double>(n, c, rng).transpose();
  for (const auto& view : ds.views)
    s.lambda.push_back(Vector::Constant(view.dim(), 1.0 / static_cast<double>(view.dim())));
  s.theta = Vector::Constant(nv, 1.0 / static_cast<double>(nv));
  s.omega = s.theta;
  for (const auto& view : ds.views) s.sigma.push_back(resolve_bandwidth(view.data, cfg.kernel));

  s.graph.k = cfg.k;
  s.graph.Z = Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  s.graph.q = Matrix::Constant(nv, n, 1.0 / static_cast<double>(nv));
  for (std::size_t v = 0; v < ds.views.size(); ++v)
    s.graph.S.push_back(init_view_graph(sq_dist_matrix(selected(s.lambda[v], ds.views[v].data)), cfg.k));

  for (std::size_t v = 0; v < ds.views.size(); ++v)
    s.bias.push_back(optimal_bias(s.W[v], s.lambda[v], ds.views[v].data, s.F));
  return s;
}

Vector optimal_bias(const Matrix& w, const Vector& lambda, const Matrix& x, const Matrix& f) {
  const double n = static_cast<double>(x.cols());
  return (f.rowwise().sum() - w.transpose() * selected(lambda, x).rowwise().sum()) / n;
}

Vector regression_residuals(const ModelState& s, const MultiViewDataset& ds) {
  Vector g(ds.view_count());
  for (std::size_t v = 0; v < ds.views.size(); ++v)
    g(static_cast<Index>(v)) = regression_residual(s.W[v], s.lambda[v], ds.views[v].data, s.F);
  return g;
}

Vector alignment_scores(const ModelState& s, const MultiViewDataset& ds) {
  Vector h(ds.view_count());
  for (std::size_t v = 0; v < ds.views.size(); ++v)
    h(static_cast<Index>(v)) = alignment_score(kernel_pair(ds.views[v].data, s.lambda[v], s.sigma[v]));
  return h;
}

std::vector<Matrix> update_W(const ModelState& s, const MultiViewDataset& ds, const SolverConfig& cfg,
                             IterationFlags* flags) {
  std::vector<Matrix> out;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const Matrix yh = center_rows(selected(s.lambda[v], ds.views[v].data));
    Matrix j = yh * yh.transpose();
    j = (0.5 * (j + j.transpose())).eval();
    const Matrix m = yh * s.F.transpose();
    auto res = gpi_solve(j, m, s.W[v], view_gpi_config(cfg, static_cast<Index>(v)));
    record_gpi(res, flags);
    out.push_back(std::move(res.W));
  }
  return out;
}

Matrix label_gram(const Matrix& z, const Vector& theta, double alpha, bool with_graph) {
  const Index n = z.rows();
  const double views = static_cast<double>(theta.size());
  const double theta_sq = theta.squaredNorm();
  Matrix g = with_graph ? Matrix(views * alpha * laplacian(z)) : Matrix::Zero(n, n);
  // - (sum_v theta_v^2) H
  g.diagonal().array() -= theta_sq;
  g.array() += theta_sq / static_cast<double>(n);
  return g;
}

Matrix label_target(const ModelState& s, const MultiViewDataset& ds) {
  const Index n = ds.samples();
  Matrix e = Matrix::Zero(n, s.F.rows());
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    Matrix p = selected(s.lambda[v], ds.views[v].data).transpose() * s.W[v];
    const Eigen::RowVectorXd mean = p.colwise().mean();
    p.rowwise() -= mean;
    const double t = s.theta(static_cast<Index>(v));
    e += t * t * p;
  }
  return e;
}

Matrix update_F(const ModelState& s, const MultiViewDataset& ds, const SolverConfig& cfg, IterationFlags* flags) {
  const Matrix g = label_gram(s.graph.Z, s.theta, cfg.alpha, cfg.uses_graph());
  const Matrix e = label_target(s, ds);
  const Matrix f0 = s.F.transpose();
  auto res = gpi_solve(g, e, f0, view_gpi_config(cfg, ds.view_count()));
  record_gpi(res, flags);
  return res.W.transpose();
}

Vector update_theta(const Vector& g, IterationFlags* flags) {
  constexpr double eps = 1e-12;
  const Index nv = g.size();
  const Index near_zero = (g.array() < eps).count();
  Vector theta(nv);
  if (near_zero > 0) {
    if (flags) ++flags->theta_degenerate;
    for (Index v = 0; v < nv; ++v) theta(v) = g(v) < eps ? 1.0 / static_cast<double>(near_zero) : 0.0;
    return theta;
  }
  theta = g.cwiseInverse();
  return theta / theta.sum();
}

Vector update_omega(const Vector& h, double r, IterationFlags* flags) {
  if (!(r > 1.0)) throw ConfigError("r must be greater than 1");
  constexpr double eps = 1e-12;
  const Index nv = h.size();
  const Index near_zero = (h.array() <= eps).count();
  Vector omega(nv);
  if (near_zero > 0) {
    if (flags) ++flags->omega_degenerate;
    for (Index v = 0; v < nv; ++v) omega(v) = h(v) <= eps ? 1.0 / static_cast<double>(near_zero) : 0.0;
    return omega;
  }
  // h^{1/(1-r)} in the log domain; the exponent is negative.
  const Vector logs = h.array().log() / (1.0 - r);
  omega = (logs.array() - logs.maxCoeff()).exp();
  return omega / omega.sum();
}

double soft_threshold(double x, double t) {
  const double mag = std::abs(x) - t;
  if (mag <= 0.0) return 0.0;
  return x > 0.0 ? mag : -mag;
}

LambdaSubproblem::LambdaSubproblem(const Matrix& x, const Matrix& w, const Matrix& f, const Matrix& s, double theta,
                                   double omega_r, double sigma, double beta, double zeta, bool with_alignment,
                                   bool with_graph)
    : x_(x),
      theta2_(theta * theta),
      omega_r_(omega_r),
      sigma_(sigma),
      beta_(beta),
      zeta_(zeta),
      with_alignment_(with_alignment),
      with_graph_(with_graph) {
  const Matrix xh = center_rows(x);
  Matrix xhx = xh * xh.transpose();
  xhx = (0.5 * (xhx + xhx.transpose())).eval();
  u_ = xhx.cwiseProduct(w * w.transpose());
  e_ = 2.0 * (xh * f.transpose()).cwiseProduct(w).rowwise().sum();
  if (with_graph_)
    smooth_diag_ = (x * laplacian(s)).cwiseProduct(x).rowwise().sum();
  else
    smooth_diag_ = Vector::Zero(x.rows());
}

double LambdaSubproblem::smooth_value(const Vector& lambda) const {
  double v = theta2_ * (lambda.dot(u_ * lambda) - lambda.dot(e_));
  if (with_alignment_) v -= omega_r_ * alignment_score(kernel_pair(x_, lambda, sigma_));
  if (with_graph_) v += beta_ * lambda.cwiseAbs2().dot(smooth_diag_);
  return v;
}

double LambdaSubproblem::value(const Vector& lambda) const { return smooth_value(lambda) + zeta_ * lambda.lpNorm<1>(); }

Vector LambdaSubproblem::gradient(const Vector& lambda) const {
  Vector g = theta2_ * ((u_ + u_.transpose()) * lambda - e_);
  if (with_alignment_) g += alignment_grad_lambda(x_, lambda, kernel_pair(x_, lambda, sigma_), omega_r_);
  if (with_graph_) g += 2.0 * beta_ * smooth_diag_.cwiseProduct(lambda);
  return g;
}

Vector LambdaSubproblem::prox_step(const Vector& lambda, const Vector& grad, double t) const {
  Vector out = lambda - t * grad;
  for (Index i = 0; i < out.size(); ++i) out(i) = std::clamp(soft_threshold(out(i), zeta_ * t), 0.0, 1.0);
  return out;
}

LambdaUpdate update_lambda(const ModelState& s, const MultiViewDataset& ds, const SolverConfig& cfg,
                           IterationFlags* flags) {
  LambdaUpdate out;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const auto vi = static_cast<Index>(v);
    const double omega_r = cfg.uses_alignment() ? std::pow(s.omega(vi), cfg.r) : 0.0;
    const LambdaSubproblem sub(ds.views[v].data, s.W[v], s.F, s.graph.S[v], s.theta(vi), omega_r, s.sigma[v],
                               cfg.beta, cfg.zeta, cfg.uses_alignment(), cfg.uses_graph());
    Vector lambda = s.lambda[v];
    double t_used = 0.0;
    double value = sub.value(lambda);
    for (int inner = 0; inner < cfg.lambda_iters; ++inner) {
      const Vector grad = sub.gradient(lambda);
      if (cfg.step_policy == StepPolicy::fixed) {
        lambda = sub.prox_step(lambda, grad, cfg.step);
        t_used = cfg.step;
        continue;
      }
      double t = cfg.step;
      bool accepted = false;
      for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
        Vector cand = sub.prox_step(lambda, grad, t);
        const double cand_value = sub.value(cand);
        if (cand_value <= value) {
          const double drop = (value - cand_value) / std::max(std::abs(value), 1e-12);
          lambda = std::move(cand);
          value = cand_value;
          t_used = t;
          accepted = true;
          if (drop < cfg.lambda_tol) inner = cfg.lambda_iters;
          break;
        }
      }
      if (!accepted) {
        if (inner == 0 && flags) ++flags->lambda_backtrack_exhausted;
        break;
      }
    }
    out.lambda.push_back(std::move(lambda));
    out.step.push_back(t_used);
  }
  return out;
}

ObjectiveTerms compute_objective(const ModelState& s, const MultiViewDataset& ds, const SolverConfig& cfg) {
  ObjectiveEvaluator eval(ds, cfg);
  return eval.evaluate(s);
}

FitResult fit(const MultiViewDataset& ds, const SolverConfig& cfg, const IterationObserver& observer) {
  using clock = std::chrono::steady_clock;
  FitResult result;
  ModelState& st = result.state;
  st = initialize(ds, cfg);

  ObjectiveEvaluator eval(ds, cfg);
  ObjectiveTerms cur = eval.evaluate(st);
  check_finite(cur, "initialization");
  result.trace.initial = cur;
  double prev = cur.total();

  for (int it = 1; it <= cfg.max_iter; ++it) {
    const auto t0 = clock::now();
    IterationFlags flags;
    GraphUpdateStats gstats;

    auto apply = [&](const char* name, auto& slot, auto candidate, bool feasible = true) {
      using std::swap;
      swap(slot, candidate);
      const ObjectiveTerms terms = eval.evaluate(st);
      check_finite(terms, std::string("update of ") + name);
      if (cfg.monotone_guard && feasible && terms.total() > cur.total()) {
        swap(slot, candidate);
        flags.rejected_blocks.emplace_back(name);
      } else {
        cur = terms;
      }
    };

    apply("W", st.W, update_W(st, ds, cfg, &flags));
    apply("F", st.F, update_F(st, ds, cfg, &flags));
    if (cfg.uses_graph()) {
      auto& g = st.graph;
      // Not compared while Z still has the self-loops of the uniform start.
      const bool z_feasible = g.Z.diagonal().cwiseAbs().maxCoeff() == 0.0;
      apply("Z", g.Z, update_z(st.F, g.S, g.q, cfg.alpha, g.k, &gstats), z_feasible);
      for (Index v = 0; v < ds.view_count(); ++v) {
        const std::string name = "S" + std::to_string(v + 1);
        apply(name.c_str(), g.S[static_cast<std::size_t>(v)],
              update_s(eval.distances(st, v), g.Z, g.q.row(v), cfg.beta, g.k, &gstats));
      }
      apply("q", g.q, update_q(g.Z, g.S, &gstats));
    }
    apply("theta", st.theta, update_theta(regression_residuals(st, ds), &flags));
    if (cfg.uses_alignment()) {
      Vector h(ds.view_count());
      for (Index v = 0; v < ds.view_count(); ++v) h(v) = eval.alignment(st, v);
      apply("omega", st.omega, update_omega(h, cfg.r, &flags));
    }
    apply("lambda", st.lambda, update_lambda(st, ds, cfg, &flags).lambda);

    for (std::size_t v = 0; v < ds.views.size(); ++v)
      st.bias[v] = optimal_bias(st.W[v], st.lambda[v], ds.views[v].data, st.F);

    flags.simplex_fallbacks = gstats.fallbacks;
    flags.q_ridged = gstats.ridged;
    flags.q_clipped = gstats.clipped;

    TraceEntry entry;
    entry.iteration = it;
    entry.terms = cur;
    entry.objective = cur.total();
    entry.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    entry.flags = std::move(flags);
    result.trace.entries.push_back(std::move(entry));

    if (observer) observer(it, st);

    const double now = cur.total();
    const double change = std::abs(prev - now) / (1.0 + std::abs(prev));
    prev = now;
    if (change < cfg.tol) {
      result.trace.converged = true;
      break;
    }
  }
  return result;
}

FeatureRanking rank_features(const ModelState& s) {
  FeatureRanking all;
  for (std::size_t v = 0; v < s.lambda.size(); ++v)
    for (Index i = 0; i < s.lambda[v].size(); ++i) all.push_back({static_cast<Index>(v), i, s.lambda[v](i)});
  std::stable_sort(all.begin(), all.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.view != b.view) return a.view < b.view;
    return a.feature < b.feature;
  });
  return all;
}

FeatureRanking rank_features(const ModelState& s, Index l) {
  FeatureRanking all = rank_features(s);
  if (l < 1 || l > static_cast<Index>(all.size()))
    throw ConfigError("l must lie in [1, " + std::to_string(all.size()) + "]");
  all.resize(static_cast<std::size_t>(l));
  return all;
}

}  // namespace kafuse
