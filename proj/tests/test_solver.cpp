#include "doctest.h"

#include "kafuse/solver.hpp"
#include "oracles.hpp"

#include <random>

using namespace kafuse;

namespace {

MultiViewDataset small_dataset(Index n, Index views, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.samples = n;
  spec.views = views;
  spec.classes = 3;
  spec.informative = 2;
  spec.duplicates = 1;
  spec.noise = 2;
  spec.seed = seed;
  return normalize(synth_generate(spec).data, Normalization::minmax);
}

oracle::ObjectiveInput oracle_input(const ModelState& s, const MultiViewDataset& ds, const SolverConfig& cfg) {
  oracle::ObjectiveInput in;
  for (std::size_t v = 0; v < ds.views.size(); ++v)
    in.views.push_back({ds.views[v].data, s.W[v], s.lambda[v], s.sigma[v]});
  in.f = s.F;
  in.theta = s.theta;
  in.omega = s.omega;
  in.z = s.graph.Z;
  in.s = s.graph.S;
  in.q = s.graph.q;
  in.alpha = cfg.alpha;
  in.beta = cfg.beta;
  in.r = cfg.r;
  in.k = cfg.k;
  in.alignment = cfg.uses_alignment();
  in.graph = cfg.uses_graph();
  return in;
}

double relative_gap(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

}  // namespace

TEST_CASE("mode names parse back") {
  for (auto m : {Mode::full, Mode::graph_only, Mode::kernel_only}) CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_mode("both"), ConfigError);
}

TEST_CASE("initial state") {
  MultiViewDataset ds;
  ds.views.push_back({"a", Matrix::Random(4, 10)});
  ds.views.push_back({"b", Matrix::Random(5, 10)});
  ds.class_count = 2;
  SolverConfig cfg;
  const ModelState s = initialize(ds, cfg);
  CHECK(s.theta.isApprox(Vector::Constant(2, 0.5)));
  CHECK(s.omega.isApprox(Vector::Constant(2, 0.5)));
  CHECK((s.graph.q.array() == 0.5).all());
  CHECK((s.lambda[0].array() == 0.25).all());
  CHECK((s.lambda[1].array() == 0.2).all());
  CHECK((s.F * s.F.transpose() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  for (const auto& w : s.W) CHECK((w.transpose() * w - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);

  const ModelState again = initialize(ds, cfg);
  CHECK(again.F == s.F);
  CHECK(again.W[1] == s.W[1]);
}

TEST_CASE("more clusters than the smallest view dimension is rejected") {
  MultiViewDataset ds;
  ds.views.push_back({"a", Matrix::Random(2, 10)});
  ds.class_count = 3;
  CHECK_THROWS_AS(initialize(ds, SolverConfig{}), ConfigError);
}

TEST_CASE("invalid hyperparameters are config errors") {
  const MultiViewDataset ds = small_dataset(12, 2, 1);
  SolverConfig cfg;
  cfg.r = 1.0;
  CHECK_THROWS_AS(cfg.validate(ds), ConfigError);
  cfg = {};
  cfg.k = 11;
  CHECK_THROWS_AS(cfg.validate(ds), ConfigError);
  cfg = {};
  cfg.alpha = -1;
  CHECK_THROWS_AS(cfg.validate(ds), ConfigError);
  cfg = {};
  CHECK_NOTHROW(cfg.validate(ds));
}

TEST_CASE("optimal bias") {
  const Matrix x = Matrix::Random(3, 6);
  CHECK(optimal_bias(Matrix::Zero(3, 2), Vector::Constant(3, 0.5), x, Matrix::Zero(2, 6)).isZero(0));
  Matrix f(2, 6);
  f.row(0).setConstant(0.7);
  f.row(1).setConstant(-0.2);
  const Vector b = optimal_bias(Matrix::Random(3, 2), Vector::Zero(3), x, f);
  CHECK(b(0) == doctest::Approx(0.7));
  CHECK(b(1) == doctest::Approx(-0.2));
}

TEST_CASE("theta update") {
  CHECK(update_theta(Vector::Constant(2, 1.0)).isApprox(Vector::Constant(2, 0.5)));
  Vector g(2);
  g << 1, 3;
  const Vector t = update_theta(g);
  CHECK(t(0) == doctest::Approx(0.75));
  CHECK(t(1) == doctest::Approx(0.25));
  g << 0, 5;
  IterationFlags flags;
  const Vector limit = update_theta(g, &flags);
  CHECK(limit(0) == 1.0);
  CHECK(limit(1) == 0.0);
  CHECK(flags.theta_degenerate == 1);
}

TEST_CASE("omega update") {
  Vector h(2);
  h << 1, 4;
  Vector w = update_omega(h, 2.0);
  CHECK(w(0) == doctest::Approx(0.8));
  CHECK(w(1) == doctest::Approx(0.2));
  h << 1, 8;
  w = update_omega(h, 3.0);
  const double tail = 1.0 / std::sqrt(8.0);
  CHECK(w(0) == doctest::Approx(1.0 / (1.0 + tail)).epsilon(1e-14));
  CHECK(w(1) == doctest::Approx(tail / (1.0 + tail)).epsilon(1e-14));
  CHECK(w(0) == doctest::Approx(0.738796).epsilon(1e-6));
  CHECK(update_omega(Vector::Constant(3, 2.5), 3.0).isApprox(Vector::Constant(3, 1.0 / 3.0)));
  h << 0, 1;
  IterationFlags flags;
  w = update_omega(h, 3.0, &flags);
  CHECK(w(0) == 1.0);
  CHECK(flags.omega_degenerate == 1);
}

TEST_CASE("soft threshold and the box clip") {
  CHECK(soft_threshold(0.5, 0.1) == doctest::Approx(0.4));
  CHECK(soft_threshold(-0.05, 0.1) == 0.0);
  CHECK(soft_threshold(-0.3, 0.1) == doctest::Approx(-0.2));

  const Matrix x = Matrix::Random(3, 8);
  const LambdaSubproblem sub(x, Matrix::Random(3, 2), Matrix::Random(2, 8), Matrix::Zero(8, 8), 0.5, 0.25, 1.0, 1.0,
                             1.0, true, false);
  Vector lambda(3), grad(3);
  lambda << 0.5, 0.1, 0.95;
  grad << 0.0, 2.0, -2.0;
  const Vector next = sub.prox_step(lambda, grad, 0.1);
  CHECK(next(0) == doctest::Approx(0.4));
  CHECK(next(1) == 0.0);
  CHECK(next(2) == 1.0);
}

TEST_CASE("zero gradient and zero l1 weight keep lambda") {
  const Matrix x = Matrix::Random(3, 8);
  const LambdaSubproblem sub(x, Matrix::Random(3, 2), Matrix::Random(2, 8), Matrix::Zero(8, 8), 0.5, 0.25, 1.0, 1.0,
                             0.0, true, false);
  Vector lambda(3);
  lambda << 0.2, 0.6, 0.9;
  CHECK(sub.prox_step(lambda, Vector::Zero(3), 0.3) == lambda);
}

TEST_CASE("lambda subproblem value and gradient match the oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  const Index d = 4, n = 9, c = 2;
  const Matrix x = Matrix::Random(d, n);
  const Matrix w = Matrix::Random(d, c);
  const Matrix f = Matrix::Random(c, n);
  Matrix s = Matrix::Random(n, n).cwiseAbs();
  s.diagonal().setZero();
  for (auto [alignment, graph] : {std::pair{true, true}, {false, true}, {true, false}}) {
    const LambdaSubproblem sub(x, w, f, s, 0.6, 0.3, 1.2, 0.7, 0.05, alignment, graph);
    Vector lambda(d);
    for (Index i = 0; i < d; ++i) lambda(i) = u(rng);
    auto smooth = [&](const Vector& l) {
      return oracle::lambda_smooth(x, w, f, s, 0.6, 0.3, 1.2, 0.7, l, alignment, graph);
    };
    // Equal up to the lambda-free constant theta^2 ||F H||^2.
    Vector other(d);
    for (Index i = 0; i < d; ++i) other(i) = u(rng);
    const double shift = sub.smooth_value(lambda) - smooth(lambda);
    CHECK(relative_gap(sub.smooth_value(other) - shift, smooth(other)) < 1e-12);
    CHECK(relative_gap(sub.value(other) - shift, smooth(other) + 0.05 * other.sum()) < 1e-12);
    const Vector fd = oracle::central_difference(smooth, lambda, 1e-5);
    CHECK((sub.gradient(lambda) - fd).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + fd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("label gram against an elementwise construction") {
  const Index n = 6;
  Matrix z = Matrix::Random(n, n).cwiseAbs();
  Vector theta(2);
  theta << 0.3, 0.7;
  const Matrix g = label_gram(z, theta, 0.9, true);
  const Matrix l = oracle::graph_laplacian(z);
  const Matrix h = oracle::centering(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double expect = 2 * 0.9 * l(i, j) - (0.09 + 0.49) * h(i, j);
      CHECK(g(i, j) == doctest::Approx(expect).epsilon(1e-13));
    }
  const Matrix kernel_only = label_gram(z, theta, 0.9, false);
  CHECK((kernel_only + 0.58 * h).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("objective terms match the oracle") {
  for (Mode mode : {Mode::full, Mode::graph_only, Mode::kernel_only}) {
    const MultiViewDataset ds = small_dataset(8, 2, 3);
    SolverConfig cfg;
    cfg.mode = mode;
    cfg.k = 3;
    cfg.max_iter = 2;
    const FitResult res = fit(ds, cfg);
    const double got = compute_objective(res.state, ds, cfg).total();
    const double expect = oracle::objective(oracle_input(res.state, ds, cfg));
    CHECK(relative_gap(got, expect) < 1e-9);
    CHECK(got == doctest::Approx(res.trace.entries.back().objective).epsilon(1e-12));
  }
}

TEST_CASE("ablation modes zero their dropped terms") {
  const MultiViewDataset ds = small_dataset(24, 2, 4);
  SolverConfig cfg;
  cfg.max_iter = 5;
  cfg.mode = Mode::graph_only;
  for (const auto& e : fit(ds, cfg).trace.entries) CHECK(e.terms.alignment == 0.0);
  cfg.mode = Mode::kernel_only;
  for (const auto& e : fit(ds, cfg).trace.entries) {
    CHECK(e.terms.fusion == 0.0);
    CHECK(e.terms.consensus_reg == 0.0);
    CHECK(e.terms.label_smoothness == 0.0);
    CHECK(e.terms.view_smoothness == 0.0);
    CHECK(e.terms.view_reg == 0.0);
  }
}

TEST_CASE("fit is monotone and keeps the feasible set") {
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    for (Mode mode : {Mode::full, Mode::graph_only, Mode::kernel_only}) {
      const MultiViewDataset ds = small_dataset(30, 2 + static_cast<Index>(seed % 2), 40 + seed);
      SolverConfig cfg;
      cfg.seed = seed;
      cfg.mode = mode;
      cfg.max_iter = 15;
      const FitResult res = fit(ds, cfg);
      const auto& e = res.trace.entries;
      REQUIRE_FALSE(e.empty());
      for (std::size_t i = 1; i < e.size(); ++i)
        CHECK(e[i].objective <= e[i - 1].objective + 1e-6 * (1.0 + std::abs(e[i - 1].objective)));
      for (const auto& l : res.state.lambda) {
        CHECK(l.minCoeff() >= 0.0);
        CHECK(l.maxCoeff() <= 1.0);
      }
      CHECK(res.state.theta.sum() == doctest::Approx(1.0));
      CHECK(res.state.omega.sum() == doctest::Approx(1.0));
    }
}

TEST_CASE("fit is deterministic") {
  const MultiViewDataset ds = small_dataset(30, 3, 9);
  SolverConfig cfg;
  cfg.max_iter = 8;
  cfg.seed = 3;
  const FitResult a = fit(ds, cfg);
  const FitResult b = fit(ds, cfg);
  REQUIRE(a.trace.entries.size() == b.trace.entries.size());
  for (std::size_t i = 0; i < a.trace.entries.size(); ++i)
    CHECK(a.trace.entries[i].objective == b.trace.entries[i].objective);
  for (std::size_t v = 0; v < a.state.lambda.size(); ++v) CHECK(a.state.lambda[v] == b.state.lambda[v]);
}

TEST_CASE("rank_features orders by score with ties by view then feature") {
  ModelState s;
  s.lambda.resize(2);
  s.lambda[0] = Vector(2);
  s.lambda[0] << 0.5, 0.2;
  s.lambda[1] = Vector(2);
  s.lambda[1] << 0.5, 0.9;
  const FeatureRanking r = rank_features(s);
  REQUIRE(r.size() == 4);
  CHECK((r[0].view == 1 && r[0].feature == 1));
  CHECK((r[1].view == 0 && r[1].feature == 0));
  CHECK((r[2].view == 1 && r[2].feature == 0));
  CHECK((r[3].view == 0 && r[3].feature == 1));
  CHECK(rank_features(s, 2).size() == 2);
  CHECK_THROWS_AS(rank_features(s, 0), ConfigError);
  CHECK_THROWS_AS(rank_features(s, 5), ConfigError);
}

TEST_CASE("iteration flag summary") {
  IterationFlags f;
  CHECK(f.summary().empty());
  f.q_clipped = 2;
  f.rejected_blocks = {"S1", "q"};
  CHECK(f.summary() == "q_clip=2;rejected=S1|q");
}
