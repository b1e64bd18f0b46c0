#include "kafuse/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef KAFUSE_VERSION
#define KAFUSE_VERSION "0.0.0"
#endif

namespace kafuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format_number(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::string format_percent(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed, 2);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::uint64_t dataset_checksum(const MultiViewDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(ds.views.size()));
  for (const auto& v : ds.views) {
    mix(static_cast<std::uint64_t>(v.data.rows()));
    mix(static_cast<std::uint64_t>(v.data.cols()));
    for (Index j = 0; j < v.data.cols(); ++j)
      for (Index i = 0; i < v.data.rows(); ++i) {
        std::uint64_t bits;
        const double x = v.data(i, j);
        std::memcpy(&bits, &x, sizeof bits);
        mix(bits);
      }
  }
  if (ds.labels)
    for (Index i = 0; i < ds.labels->size(); ++i) mix(static_cast<std::uint64_t>(static_cast<std::int64_t>((*ds.labels)(i))));
  return h;
}

void write_ranking(const FeatureRanking& ranking, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "rank,view,feature,score\n";
  for (std::size_t r = 0; r < ranking.size(); ++r)
    out << r + 1 << ',' << ranking[r].view + 1 << ',' << ranking[r].feature + 1 << ','
        << format_number(ranking[r].score) << '\n';
}

FeatureRanking read_ranking(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFound("cannot open " + file.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "rank,view,feature,score") throw SchemaError(file.string() + ": unexpected header '" + line + "'");
  FeatureRanking out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      cells.push_back(rest.substr(0, pos));
    cells.push_back(rest);
    if (cells.size() != 4) throw SchemaError(file.string() + ": expected 4 cells on line " + std::to_string(row));
    auto parse_int = [&](std::string_view s) {
      long long v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || v < 1)
        throw SchemaError(file.string() + ": bad index on line " + std::to_string(row));
      return static_cast<Index>(v);
    };
    double score = 0;
    auto [p, ec] = std::from_chars(cells[3].data(), cells[3].data() + cells[3].size(), score);
    if (ec != std::errc() || p != cells[3].data() + cells[3].size())
      throw SchemaError(file.string() + ": bad score on line " + std::to_string(row));
    if (parse_int(cells[0]) != static_cast<Index>(out.size()) + 1)
      throw SchemaError(file.string() + ": ranks must be 1, 2, ... in order");
    out.push_back({parse_int(cells[1]) - 1, parse_int(cells[2]) - 1, score});
  }
  return out;
}

void write_trace(const ConvergenceTrace& trace, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "iter,objective,regression,alignment,fusion,consensus_reg,label_smoothness,view_smoothness,view_reg,"
         "seconds,flags\n";
  for (const auto& e : trace.entries) {
    const auto& t = e.terms;
    out << e.iteration << ',' << format_number(e.objective) << ',' << format_number(t.regression) << ','
        << format_number(t.alignment) << ',' << format_number(t.fusion) << ',' << format_number(t.consensus_reg)
        << ',' << format_number(t.label_smoothness) << ',' << format_number(t.view_smoothness) << ','
        << format_number(t.view_reg) << ',' << format_number(e.seconds) << ',' << e.flags.summary() << '\n';
  }
}

namespace {

struct SolverFlags {
  SolverConfig cfg;
  std::string mode = "full";
  std::string step_policy = "backtracking";
  std::string bandwidth = "median";
  double sigma = 1.0;
  int clusters = 0;
  bool raw = false;
};

struct DataFlags {
  std::string path;
  std::string normalization = "minmax";
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--data", f.path, "Dataset directory holding dataset.json")->required();
  cmd->add_option("--normalize", f.normalization, "Per-feature preprocessing: minmax, zscore or none")
      ->capture_default_str();
}

void add_solver_flags(CLI::App* cmd, SolverFlags& f) {
  auto& c = f.cfg;
  cmd->add_option("--alpha", c.alpha, "Label smoothness weight")->capture_default_str();
  cmd->add_option("--beta", c.beta, "View smoothness weight")->capture_default_str();
  cmd->add_option("--r", c.r, "Alignment view-weight exponent (> 1)")->capture_default_str();
  cmd->add_option("--zeta", c.zeta, "l1 weight on lambda")->capture_default_str();
  cmd->add_option("--k", c.k, "Graph neighbours")->capture_default_str();
  cmd->add_option("--c", f.clusters, "Cluster count (default: class count of the dataset)");
  cmd->add_option("--mode", f.mode, "full, graph_only or kernel_only")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--max-iter", c.max_iter, "Outer iteration cap")->capture_default_str();
  cmd->add_option("--tol", c.tol, "Stop when |change| / (1 + |objective|) falls below this")->capture_default_str();
  cmd->add_option("--step", c.step, "Proximal step (initial step when backtracking)")->capture_default_str();
  cmd->add_option("--step-policy", f.step_policy, "backtracking or fixed")->capture_default_str();
  cmd->add_option("--bandwidth", f.bandwidth, "Kernel bandwidth: median or fixed")->capture_default_str();
  cmd->add_option("--sigma", f.sigma, "Bandwidth when --bandwidth fixed")->capture_default_str();
  cmd->add_option("--lambda-iters", c.lambda_iters, "Proximal steps per lambda update")->capture_default_str();
  cmd->add_option("--lambda-tol", c.lambda_tol, "Relative lambda subproblem decrease that ends them")
      ->capture_default_str();
  cmd->add_option("--gpi-tol", c.gpi.tol, "Inner GPI tolerance")->capture_default_str();
  cmd->add_option("--gpi-max-iter", c.gpi.max_iter, "Inner GPI iteration cap")->capture_default_str();
  cmd->add_flag("--no-guard", f.raw, "Accept every block update even when it raises the objective");
}

SolverConfig resolve(const SolverFlags& f) {
  SolverConfig c = f.cfg;
  c.mode = parse_mode(f.mode);
  if (f.step_policy == "backtracking")
    c.step_policy = StepPolicy::backtracking;
  else if (f.step_policy == "fixed")
    c.step_policy = StepPolicy::fixed;
  else
    throw ConfigError("unknown step policy '" + f.step_policy + "'");
  if (f.bandwidth == "median") {
    c.kernel.policy = KernelConfig::Bandwidth::median_heuristic;
  } else if (f.bandwidth == "fixed") {
    c.kernel.policy = KernelConfig::Bandwidth::fixed;
    c.kernel.fixed_sigma = f.sigma;
  } else {
    throw ConfigError("unknown bandwidth policy '" + f.bandwidth + "'");
  }
  if (f.clusters != 0) c.clusters = f.clusters;
  c.monotone_guard = !f.raw;
  return c;
}

json config_json(const SolverConfig& c, const MultiViewDataset& ds) {
  return json{{"alpha", c.alpha},
              {"beta", c.beta},
              {"r", c.r},
              {"zeta", c.zeta},
              {"k", c.k},
              {"c", c.resolve_clusters(ds)},
              {"mode", to_string(c.mode)},
              {"seed", c.seed},
              {"max_iter", c.max_iter},
              {"tol", c.tol},
              {"step", c.step},
              {"step_policy", c.step_policy == StepPolicy::fixed ? "fixed" : "backtracking"},
              {"max_halvings", c.max_halvings},
              {"lambda_iters", c.lambda_iters},
              {"lambda_tol", c.lambda_tol},
              {"bandwidth", c.kernel.policy == KernelConfig::Bandwidth::fixed ? "fixed" : "median"},
              {"sigma", c.kernel.fixed_sigma},
              {"gpi", {{"margin", c.gpi.margin},
                       {"tol", c.gpi.tol},
                       {"max_iter", c.gpi.max_iter},
                       {"power_iters", c.gpi.power_iters},
                       {"seed", c.gpi.seed}}},
              {"monotone_guard", c.monotone_guard}};
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

json dataset_json(const DataFlags& f, const MultiViewDataset& ds) {
  return json{{"path", fs::absolute(f.path).lexically_normal().string()},
              {"name", ds.name},
              {"normalization", f.normalization},
              {"checksum_fnv1a", hex(dataset_checksum(ds))},
              {"samples", ds.samples()},
              {"views", ds.view_count()},
              {"features", ds.total_features()}};
}

void write_json(const json& j, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

MultiViewDataset load(const DataFlags& f) { return normalize(load_dataset(f.path), parse_normalization(f.normalization)); }

void report_header(std::ostream& out) { out << "ratio,selected,runs,acc_mean,acc_std,nmi_mean,nmi_std\n"; }

void report_row(std::ostream& out, const EvaluationReport& r) {
  out << format_number(r.feature_ratio) << ',' << r.selected.size() << ',' << r.runs << ','
      << format_percent(r.acc_mean) << ',' << format_percent(r.acc_std) << ',' << format_percent(r.nmi_mean) << ','
      << format_percent(r.nmi_std);
}

int cmd_select(const DataFlags& data, const SolverFlags& flags, const std::string& out_dir, bool verbose,
               int threads) {
  const std::string started = utc_now();
  const MultiViewDataset ds = load(data);
  const SolverConfig cfg = resolve(flags);
  cfg.validate(ds);
  fs::create_directories(out_dir);

  IterationObserver obs;
  if (verbose) obs = [](int it, const ModelState&) { std::cerr << "iteration " << it << " done\n"; };
  const FitResult res = fit(ds, cfg, obs);
  const FeatureRanking ranking = rank_features(res.state);

  const fs::path out(out_dir);
  write_ranking(ranking, out / "ranking.csv");
  write_trace(res.trace, out / "trace.csv");
  const double final_obj = res.trace.entries.empty() ? res.trace.initial.total() : res.trace.entries.back().objective;
  json m{{"tool", "kafuse"},
         {"version", KAFUSE_VERSION},
         {"command", "select"},
         {"config", config_json(cfg, ds)},
         {"dataset", dataset_json(data, ds)},
         {"threads", threads},
         {"started", started},
         {"finished", utc_now()},
         {"iterations", res.trace.entries.size()},
         {"converged", res.trace.converged},
         {"initial_objective", res.trace.initial.total()},
         {"final_objective", final_obj},
         {"outputs", {"ranking.csv", "trace.csv", "manifest.json"}}};
  write_json(m, out / "manifest.json");
  std::cout << "select: " << res.trace.entries.size() << " iterations, "
            << (res.trace.converged ? "converged" : "iteration cap reached") << ", objective "
            << format_number(final_obj) << ", outputs in " << out.string() << '\n';
  return exit_ok;
}

int cmd_eval(const DataFlags& data, const std::string& ranking_file, double ratio, int runs, std::uint64_t seed,
             const std::string& out_dir, int threads) {
  const std::string started = utc_now();
  const MultiViewDataset ds = load(data);
  if (!ds.labels) throw InputError("dataset has no labels; eval needs ground truth");
  const FeatureRanking ranking = read_ranking(ranking_file);
  if (static_cast<Index>(ranking.size()) != ds.total_features())
    throw SchemaError("ranking has " + std::to_string(ranking.size()) + " rows but the dataset has " +
                      std::to_string(ds.total_features()) + " features");
  for (const auto& f : ranking)
    if (f.view >= ds.view_count() || f.feature >= ds.views[static_cast<std::size_t>(f.view)].dim())
      throw SchemaError("ranking refers to a feature outside the dataset");
  const EvaluationReport rep = evaluate_selection(ds, ranking, ratio, runs, seed, threads);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  {
    std::ofstream csv(out / "report.csv");
    if (!csv) throw Error("cannot write report.csv");
    report_header(csv);
    report_row(csv, rep);
    csv << '\n';
  }
  json m{{"tool", "kafuse"},
         {"version", KAFUSE_VERSION},
         {"command", "eval"},
         {"dataset", dataset_json(data, ds)},
         {"ranking", fs::absolute(ranking_file).lexically_normal().string()},
         {"ratio", ratio},
         {"runs", runs},
         {"seed", seed},
         {"threads", threads},
         {"started", started},
         {"finished", utc_now()},
         {"outputs", {"report.csv", "eval_manifest.json"}}};
  write_json(m, out / "eval_manifest.json");
  std::cout << "eval: ACC " << format_percent(rep.acc_mean) << " +- " << format_percent(rep.acc_std) << ", NMI "
            << format_percent(rep.nmi_mean) << " +- " << format_percent(rep.nmi_std) << " over " << runs
            << " runs\n";
  return exit_ok;
}

struct SweepFlags {
  std::vector<double> ratios{0.3};
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<double> rs;
  int runs = 50;
  std::uint64_t eval_seed = 0;
};

int cmd_sweep(const DataFlags& data, const SolverFlags& flags, SweepFlags grid, const std::string& out_dir,
              bool verbose, int threads) {
  const std::string started = utc_now();
  const MultiViewDataset ds = load(data);
  if (!ds.labels) throw InputError("dataset has no labels; sweep needs ground truth");
  SolverConfig base = resolve(flags);
  if (grid.alphas.empty()) grid.alphas = {base.alpha};
  if (grid.betas.empty()) grid.betas = {base.beta};
  if (grid.rs.empty()) grid.rs = {base.r};
  if (grid.ratios.empty()) throw ConfigError("sweep grid is empty");
  for (double ratio : grid.ratios) selected_count(ds.total_features(), ratio);
  base.validate(ds);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  std::ofstream csv(out / "sweep.csv");
  if (!csv) throw Error("cannot write sweep.csv");
  csv << "alpha,beta,r,ratio,selected,runs,acc_mean,acc_std,nmi_mean,nmi_std,iterations,objective\n";
  std::size_t rows = 0;
  for (double a : grid.alphas)
    for (double b : grid.betas)
      for (double r : grid.rs) {
        SolverConfig cfg = base;
        cfg.alpha = a;
        cfg.beta = b;
        cfg.r = r;
        cfg.validate(ds);
        const FitResult res = fit(ds, cfg);
        const FeatureRanking ranking = rank_features(res.state);
        const double obj = res.trace.entries.empty() ? res.trace.initial.total() : res.trace.entries.back().objective;
        for (double ratio : grid.ratios) {
          const EvaluationReport rep = evaluate_selection(ds, ranking, ratio, grid.runs, grid.eval_seed, threads);
          csv << format_number(a) << ',' << format_number(b) << ',' << format_number(r) << ',';
          report_row(csv, rep);
          csv << ',' << res.trace.entries.size() << ',' << format_number(obj) << '\n';
          ++rows;
        }
        if (verbose)
          std::cerr << "alpha=" << format_number(a) << " beta=" << format_number(b) << " r=" << format_number(r)
                    << " done\n";
      }
  json m{{"tool", "kafuse"},
         {"version", KAFUSE_VERSION},
         {"command", "sweep"},
         {"config", config_json(base, ds)},
         {"dataset", dataset_json(data, ds)},
         {"grid", {{"alpha", grid.alphas}, {"beta", grid.betas}, {"r", grid.rs}, {"ratio", grid.ratios}}},
         {"runs", grid.runs},
         {"eval_seed", grid.eval_seed},
         {"threads", threads},
         {"started", started},
         {"finished", utc_now()},
         {"outputs", {"sweep.csv", "sweep_manifest.json"}}};
  write_json(m, out / "sweep_manifest.json");
  std::cout << "sweep: " << rows << " rows written to " << (out / "sweep.csv").string() << '\n';
  return exit_ok;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  const SyntheticDataset s = synth_generate(spec);
  write_dataset(s.data, out_dir);
  write_ground_truth(s.truth, fs::path(out_dir) / "ground_truth.json");
  std::cout << "synth: " << s.data.view_count() << " views, " << s.data.samples() << " samples, "
            << s.data.total_features() << " features written to " << out_dir << '\n';
  return exit_ok;
}

int resolve_threads(int flag) {
  const char* env = std::getenv("KAFUSE_THREADS");
  if (!env || !*env) return flag;
  int v = 0;
  const std::string_view s(env);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 1)
    throw ConfigError("KAFUSE_THREADS must be a positive integer");
  return v;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Multi-view unsupervised feature selection with kernel alignment and adaptive graph fusion", "kafuse"};
  app.set_version_flag("--version", std::string(KAFUSE_VERSION));
  app.require_subcommand(1);
  int threads = 1;
  bool verbose = false;
  app.add_option("--threads", threads, "Worker threads for repeated k-means runs (KAFUSE_THREADS overrides)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");

  DataFlags data;
  SolverFlags solver;
  std::string out_dir = "kafuse_out";

  auto* select = app.add_subcommand("select", "Run the optimizer and rank every feature");
  add_data_flags(select, data);
  add_solver_flags(select, solver);
  select->add_option("--out", out_dir, "Output directory")->capture_default_str();

  std::string ranking_file;
  double ratio = 0.3;
  int runs = 50;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Cluster the top-ranked features and report ACC/NMI");
  add_data_flags(eval, data);
  eval->add_option("--ranking", ranking_file, "ranking.csv written by select")->required();
  eval->add_option("--ratio", ratio, "Fraction of features kept")->capture_default_str();
  eval->add_option("--runs", runs, "k-means repetitions")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Seed of the first k-means run")->capture_default_str();
  eval->add_option("--out", out_dir, "Output directory")->capture_default_str();

  SweepFlags grid;
  auto* sweep = app.add_subcommand("sweep", "Fit and evaluate over ratio and parameter grids");
  add_data_flags(sweep, data);
  add_solver_flags(sweep, solver);
  sweep->add_option("--ratios", grid.ratios, "Comma-separated feature ratios")->delimiter(',');
  sweep->add_option("--alphas", grid.alphas, "Comma-separated alpha grid (default: --alpha)")->delimiter(',');
  sweep->add_option("--betas", grid.betas, "Comma-separated beta grid (default: --beta)")->delimiter(',');
  sweep->add_option("--rs", grid.rs, "Comma-separated r grid (default: --r)")->delimiter(',');
  sweep->add_option("--runs", grid.runs, "k-means repetitions per point")->capture_default_str();
  sweep->add_option("--eval-seed", grid.eval_seed, "Seed of the first k-means run")->capture_default_str();
  sweep->add_option("--out", out_dir, "Output directory")->capture_default_str();

  SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with planted feature roles");
  synth->add_option("--samples", spec.samples, "Sample count")->capture_default_str();
  synth->add_option("--classes", spec.classes, "Class count")->capture_default_str();
  synth->add_option("--views", spec.views, "View count")->capture_default_str();
  synth->add_option("--informative", spec.informative, "Informative features per view")->capture_default_str();
  synth->add_option("--duplicates", spec.duplicates, "Exact copies per view")->capture_default_str();
  synth->add_option("--nonlinear", spec.nonlinear, "tanh copies per view")->capture_default_str();
  synth->add_option("--noise", spec.noise, "Noise features per view")->capture_default_str();
  synth->add_option("--noise-std", spec.noise_std, "Within-class spread")->capture_default_str();
  synth->add_option("--separation", spec.separation, "Class centre scale")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_ok : exit_usage;
  }

  try {
    threads = resolve_threads(threads);
    if (*select) return cmd_select(data, solver, out_dir, verbose, threads);
    if (*eval) return cmd_eval(data, ranking_file, ratio, runs, eval_seed, out_dir, threads);
    if (*sweep) return cmd_sweep(data, solver, grid, out_dir, verbose, threads);
    if (*synth) return cmd_synth(spec, synth_out);
  } catch (const NumericalError& e) {
    std::cerr << "kafuse: numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const Error& e) {
    std::cerr << "kafuse: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    std::cerr << "kafuse: " << e.what() << '\n';
    return exit_failure;
  }
  return exit_usage;
}

}  // namespace kafuse
