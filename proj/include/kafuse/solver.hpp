#pragma once

#include "kafuse/dataset.hpp"
#include "kafuse/gpi.hpp"
#include "kafuse/graph.hpp"
#include "kafuse/kernels.hpp"
#include "kafuse/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kafuse {

// full: every term. graph_only drops the kernel-alignment term and omega;
// kernel_only drops the graph terms (Z, S, q and both smoothness terms).
enum class Mode { full, graph_only, kernel_only };

Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

enum class StepPolicy { fixed, backtracking };

struct SolverConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double r = 3.0;      // omega exponent, > 1
  double zeta = 0.01;  // l1 weight on lambda
  Index k = 5;         // graph neighbours
  std::optional<Index> clusters;  // c; defaults to the dataset class count

  StepPolicy step_policy = StepPolicy::backtracking;
  double step = 1e-2;     // proximal step (initial step when backtracking)
  int max_halvings = 30;
  int lambda_iters = 50;      // proximal steps per lambda update
  double lambda_tol = 1e-8;   // relative subproblem decrease that ends them

  KernelConfig kernel;
  GpiConfig gpi;
  double tol = 1e-4;  // |change| / (1 + |objective|)
  int max_iter = 100;
  std::uint64_t seed = 0;
  Mode mode = Mode::full;

  // Reject a block update whose result raises the total objective.
  bool monotone_guard = true;

  Index resolve_clusters(const MultiViewDataset& ds) const;
  // Throws ConfigError.
  void validate(const MultiViewDataset& ds) const;

  bool uses_alignment() const { return mode != Mode::graph_only; }
  bool uses_graph() const { return mode != Mode::kernel_only; }
};

struct ModelState {
  std::vector<Matrix> W;       // d_v x c, orthonormal columns
  Matrix F;                    // c x n, orthonormal rows
  std::vector<Vector> lambda;  // relaxed selection weights in [0, 1]
  Vector theta;                // regression view weights (simplex)
  Vector omega;                // alignment view weights (simplex)
  std::vector<Vector> bias;    // optimal b^(v) for the current W, lambda, F
  std::vector<double> sigma;   // kernel bandwidths, frozen at initialization
  GraphState graph;
};

// Breakdown of the objective; total() is the plain sum in declaration order.
struct ObjectiveTerms {
  double regression = 0;        // sum_v theta_v^2 ||W^T Lambda X H - F H||^2
  double alignment = 0;         // -sum_v omega_v^r Tr(H Kc H Ku)
  double fusion = 0;            // sum_j ||Z_j - q_j^T S~_j||^2
  double consensus_reg = 0;     // sum_j eta_j ||Z_j||^2
  double label_smoothness = 0;  // alpha Tr(F L_Z F^T)
  double view_smoothness = 0;   // beta sum_v Tr(Lambda X L_S X^T Lambda)
  double view_reg = 0;          // sum_v sum_j gamma_vj ||S_vj||^2

  double total() const;
  // Name of the first non-finite term, or empty.
  std::string first_non_finite() const;
};

struct IterationFlags {
  Index simplex_fallbacks = 0;
  Index q_ridged = 0;
  Index q_clipped = 0;
  Index theta_degenerate = 0;
  Index omega_degenerate = 0;
  Index gpi_rank_deficient = 0;
  Index gpi_relaxation_raises = 0;
  Index lambda_backtrack_exhausted = 0;
  std::vector<std::string> rejected_blocks;

  std::string summary() const;
};

struct TraceEntry {
  int iteration = 0;
  ObjectiveTerms terms;
  double objective = 0;
  double seconds = 0;
  IterationFlags flags;
};

struct ConvergenceTrace {
  ObjectiveTerms initial;
  std::vector<TraceEntry> entries;
  bool converged = false;
};

struct FeatureScore {
  Index view = 0;
  Index feature = 0;  // index within the view
  double score = 0;
};
using FeatureRanking = std::vector<FeatureScore>;

struct FitResult {
  ModelState state;
  ConvergenceTrace trace;
};

using IterationObserver = std::function<void(int iteration, const ModelState&)>;

ModelState initialize(const MultiViewDataset& ds, const SolverConfig& cfg);

// b = (F 1 - W^T Lambda X 1) / n.
Vector optimal_bias(const Matrix& w, const Vector& lambda, const Matrix& x, const Matrix& f);

// g^(v) = ||W^T Lambda X H - F H||_F^2 per view.
Vector regression_residuals(const ModelState& state, const MultiViewDataset& ds);
// h^(v) = Tr(H Kc H Ku) per view at the current lambda.
Vector alignment_scores(const ModelState& state, const MultiViewDataset& ds);

std::vector<Matrix> update_W(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                             IterationFlags* flags = nullptr);

// sum_v (alpha L_Z - theta_v^2 H); the alpha term is omitted in kernel_only.
Matrix label_gram(const Matrix& z, const Vector& theta, double alpha, bool with_graph);
// sum_v theta_v^2 H (Lambda X)^T W, n x c.
Matrix label_target(const ModelState& state, const MultiViewDataset& ds);
Matrix update_F(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                IterationFlags* flags = nullptr);

// theta_v proportional to 1/g_v; views with g_v < 1e-12 share the weight.
Vector update_theta(const Vector& g, IterationFlags* flags = nullptr);
// omega_v proportional to h_v^{1/(1-r)}; views with h_v <= 1e-12 share the weight.
Vector update_omega(const Vector& h, double r, IterationFlags* flags = nullptr);

// Relaxed lambda problem of one view with every other variable fixed:
//   theta^2 (l^T U l - l^T e) - omega^r Tr(H Kc H Ku) + beta Tr(Lambda X L_S X^T Lambda)
//   + zeta ||l||_1,   l in [0, 1]^d.
class LambdaSubproblem {
 public:
  LambdaSubproblem(const Matrix& x, const Matrix& w, const Matrix& f, const Matrix& s, double theta,
                   double omega_r, double sigma, double beta, double zeta, bool with_alignment, bool with_graph);

  double smooth_value(const Vector& lambda) const;
  double value(const Vector& lambda) const;
  Vector gradient(const Vector& lambda) const;
  // clip_[0,1](soft_threshold(lambda - t grad, zeta t))
  Vector prox_step(const Vector& lambda, const Vector& grad, double t) const;

  const Matrix& quadratic() const { return u_; }
  const Vector& linear() const { return e_; }

 private:
  Matrix x_;
  Matrix u_;
  Vector e_;
  Vector smooth_diag_;  // diag(X L_S X^T)
  double theta2_;
  double omega_r_;
  double sigma_;
  double beta_;
  double zeta_;
  bool with_alignment_;
  bool with_graph_;
};

double soft_threshold(double x, double t);

struct LambdaUpdate {
  std::vector<Vector> lambda;
  std::vector<double> step;  // last accepted step per view (0 when none)
};
LambdaUpdate update_lambda(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                           IterationFlags* flags = nullptr);

ObjectiveTerms compute_objective(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg);

// Alternating minimization in the order W, F, Z, S, q, theta, omega, lambda.
// Throws NumericalError naming the term when the objective becomes non-finite.
FitResult fit(const MultiViewDataset& ds, const SolverConfig& cfg, const IterationObserver& observer = {});

// Top-l features across all views by lambda, ties by (view, feature).
FeatureRanking rank_features(const ModelState& state, Index l);
FeatureRanking rank_features(const ModelState& state);

}  // namespace kafuse
