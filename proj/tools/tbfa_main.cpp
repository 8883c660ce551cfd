// Command-line front end: simulate benchmark datasets, fit bilinear t factor
// models, select factor counts by BIC, emit factor scores and standard
// errors, and run the benchmark studies.
//
// Exit codes: 0 success, 2 usage/validation, 3 fit did not converge within
// the iteration budget, 4 numerical failure.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/estimation.hpp"
#include "tbfa/inference.hpp"
#include "tbfa/mds_io.hpp"
#include "tbfa/model.hpp"
#include "tbfa/params.hpp"
#include "tbfa/rng.hpp"
#include "tbfa/selection.hpp"
#include "tbfa/simbench.hpp"

namespace {

using nlohmann::json;

// Non-throwing outcome (fit hit t_max): remembered here, returned from main.
int g_exit = 0;

json matrix_to_json(const tbfa::Matrix& m) {
  json rows = json::array();
  for (tbfa::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (tbfa::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const tbfa::Vector& v) {
  json arr = json::array();
  for (tbfa::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

json params_to_json(const tbfa::TbfaParams& p) {
  json out;
  out["d_c"] = p.d_c();
  out["d_r"] = p.d_r();
  out["q_c"] = p.q_c();
  out["q_r"] = p.q_r();
  if (p.gaussian)
    out["nu"] = "inf";
  else
    out["nu"] = p.nu;
  out["gaussian"] = p.gaussian;
  out["W"] = matrix_to_json(p.W);
  out["C"] = matrix_to_json(p.C);
  out["psi_c"] = vector_to_json(p.psi_c);
  out["R"] = matrix_to_json(p.R);
  out["psi_r"] = vector_to_json(p.psi_r);
  return out;
}

std::pair<tbfa::Index, tbfa::Index> parse_range(const std::string& text) {
  const auto dash = text.find('-');
  try {
    if (dash == std::string::npos) {
      const long v = std::stol(text);
      if (v < 0) throw tbfa::UsageError("negative factor count: " + text);
      return {v, v};
    }
    const long lo = std::stol(text.substr(0, dash));
    const long hi = std::stol(text.substr(dash + 1));
    if (lo < 0 || hi < lo)
      throw tbfa::UsageError("malformed range (want LO-HI with LO <= HI): " +
                             text);
    return {lo, hi};
  } catch (const tbfa::UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw tbfa::UsageError("malformed range: " + text);
  }
}

tbfa::OutlierSpec parse_contaminate(const std::string& text) {
  const auto c1 = text.find(':');
  const auto c2 = text.find(':', c1 == std::string::npos ? 0 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw tbfa::UsageError("--contaminate wants FAMILY:SITUATION:P, got " +
                           text);
  tbfa::OutlierSpec spec;
  spec.family = tbfa::parse_outlier_family(text.substr(0, c1));
  spec.situation =
      tbfa::parse_outlier_situation(text.substr(c1 + 1, c2 - c1 - 1));
  try {
    spec.proportion = std::stod(text.substr(c2 + 1));
  } catch (const std::exception&) {
    throw tbfa::UsageError("malformed contamination proportion in " + text);
  }
  if (!(spec.proportion >= 0.0 && spec.proportion < 0.5))
    throw tbfa::UsageError("contamination proportion must lie in [0, 0.5)");
  return spec;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string kind = "data1";
  long n = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string contaminate;
  std::string format = "text";
  long d_c_override = 0;
};

void run_simulate(const SimulateArgs& a) {
  tbfa::GeneratorSpec spec;
  spec.kind = tbfa::parse_generator_kind(a.kind);
  spec.n = a.n;
  if (a.d_c_override > 0) spec.d_c_override = a.d_c_override;
  if (a.format != "text" && a.format != "binary")
    throw tbfa::UsageError("--format must be text or binary");

  const tbfa::RngStream rng(a.seed);
  tbfa::RngStream gen_rng = rng.child(1);
  auto [ds, truth] = tbfa::generate(spec, gen_rng);
  if (!a.contaminate.empty()) {
    const tbfa::OutlierSpec ospec = parse_contaminate(a.contaminate);
    tbfa::RngStream inj_rng = rng.child(2);
    ds = tbfa::inject_outliers(ds, truth, ospec, inj_rng);
  }
  if (a.format == "binary")
    tbfa::write_dataset_binary(a.out, ds);
  else
    tbfa::write_dataset_text(a.out, ds);
  if (!ds.labels.empty()) tbfa::write_labels(a.out + ".labels", ds.labels);
  tbfa::write_params(a.out + ".params", truth);
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string data;
  long q_c = 0, q_r = 0;
  std::string algorithm = "px-aecm";
  double tol = 1e-8;
  long t_max = 1000;
  std::uint64_t seed = 0;
  bool gaussian = false;
  std::string out;
};

tbfa::FitConfig fit_config(const std::string& algorithm, double tol,
                           long t_max, std::uint64_t seed, bool gaussian) {
  tbfa::FitConfig cfg;
  cfg.algorithm = tbfa::parse_algorithm(algorithm);
  cfg.tol = tol;
  cfg.t_max = static_cast<int>(t_max);
  cfg.seed = seed;
  cfg.gaussian_mode = gaussian;
  cfg.validate();
  return cfg;
}

void run_fit(const FitArgs& a) {
  const tbfa::MatrixDataset ds = tbfa::read_dataset(a.data);
  if (a.q_c < 0 || a.q_c > tbfa::max_factors(ds.d_c))
    throw tbfa::UsageError(
        "--qc out of range: max_factors(" + std::to_string(ds.d_c) +
        ") = " + std::to_string(tbfa::max_factors(ds.d_c)));
  if (a.q_r < 0 || a.q_r > tbfa::max_factors(ds.d_r))
    throw tbfa::UsageError(
        "--qr out of range: max_factors(" + std::to_string(ds.d_r) +
        ") = " + std::to_string(tbfa::max_factors(ds.d_r)));
  const tbfa::FitConfig cfg =
      fit_config(a.algorithm, a.tol, a.t_max, a.seed, a.gaussian);
  const tbfa::FitResult res = tbfa::fit(ds, a.q_c, a.q_r, cfg);

  json report;
  report["algorithm"] = tbfa::algorithm_name(cfg.algorithm);
  report["seed"] = cfg.seed;
  report["gaussian"] = cfg.gaussian_mode;
  report["q_c"] = a.q_c;
  report["q_r"] = a.q_r;
  report["converged"] = res.converged;
  report["iterations"] = res.iterations;
  report["elapsed_seconds"] = res.elapsed_seconds;
  report["nu_saturated"] = res.nu_saturated;
  report["loglik"] = res.log_likelihood();
  report["loglik_trace"] = res.loglik_trace;
  report["bic"] = tbfa::bic(res, ds);
  report["tau"] = res.final_tau;
  report["params"] = params_to_json(res.params);
  tbfa::write_file_atomic(a.out, report.dump(2) + "\n");
  tbfa::write_params(a.out + ".params", res.params);
  if (!res.converged) g_exit = 3;
}

// ---------------------------------------------------------------------------

struct SelectArgs {
  std::string data;
  std::string qc_range = "1-3";
  std::string qr_range = "1-3";
  std::string algorithm = "px-aecm";
  double tol = 1e-8;
  long t_max = 1000;
  std::uint64_t seed = 0;
  bool gaussian = false;
  std::string out;
};

void run_select(const SelectArgs& a) {
  const tbfa::MatrixDataset ds = tbfa::read_dataset(a.data);
  const auto qc = parse_range(a.qc_range);
  const auto qr = parse_range(a.qr_range);
  const tbfa::FitConfig cfg =
      fit_config(a.algorithm, a.tol, a.t_max, a.seed, a.gaussian);
  const tbfa::SelectionReport rep = tbfa::grid_select(ds, qc, qr, cfg);

  json grid = json::array();
  for (const tbfa::SelectionCell& c : rep.grid) {
    json cell;
    cell["q_c"] = c.q_c;
    cell["q_r"] = c.q_r;
    cell["fitted"] = c.fitted;
    cell["converged"] = c.converged;
    cell["bic"] = c.bic;
    cell["loglik"] = c.loglik;
    if (std::isinf(c.nu_hat))
      cell["nu_hat"] = "inf";
    else
      cell["nu_hat"] = c.nu_hat;
    if (!c.fitted) cell["diagnostic"] = c.diagnostic;
    grid.push_back(std::move(cell));
  }
  json report;
  report["grid"] = std::move(grid);
  report["best"] = {{"q_c", rep.best_q_c}, {"q_r", rep.best_q_r}};
  tbfa::write_file_atomic(a.out, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct ScoresArgs {
  std::string data, params, out;
};

void run_scores(const ScoresArgs& a) {
  const tbfa::MatrixDataset ds = tbfa::read_dataset(a.data);
  const tbfa::TbfaParams p = tbfa::read_params(a.params);
  tbfa::require_dims(p.d_c() == ds.d_c && p.d_r() == ds.d_r,
                     "scores: parameter/data shape mismatch");
  if (p.q_c() < 1 || p.q_r() < 1)
    throw tbfa::UsageError("scores need at least one factor per side");
  const tbfa::DerivedState d = tbfa::derive(p);
  tbfa::MatrixDataset scores;
  scores.d_c = p.q_c();
  scores.d_r = p.q_r();
  scores.observations.reserve(ds.observations.size());
  for (const tbfa::Matrix& x : ds.observations)
    scores.observations.push_back(tbfa::factor_scores(p, d, x));
  tbfa::write_dataset_text(a.out, scores);
}

// ---------------------------------------------------------------------------

struct StderrArgs {
  std::string params;
  long n = 0;
  std::string mask = "triangular";
  std::string out;
};

void run_stderr(const StderrArgs& a) {
  const tbfa::TbfaParams p = tbfa::read_params(a.params);
  tbfa::LoadingMask mask = tbfa::LoadingMask::Triangular;
  bool fix_first = true;
  if (a.mask == "corner") {
    mask = tbfa::LoadingMask::Corner;
  } else if (a.mask == "full") {
    mask = tbfa::LoadingMask::Full;
    fix_first = false;
  } else if (a.mask != "triangular") {
    throw tbfa::UsageError("--mask must be triangular, corner, or full");
  }
  const tbfa::ParamLayout layout = tbfa::ParamLayout::make(p, mask, fix_first);
  const tbfa::StandardErrors se = tbfa::standard_errors(p, a.n, layout);
  std::string csv = "parameter,se\r\n";
  for (tbfa::Index k = 0; k < layout.size(); ++k)
    csv += se.labels[static_cast<std::size_t>(k)] + "," +
           tbfa::format_g17(se.values(k)) + "\r\n";
  tbfa::write_file_atomic(a.out, csv);
}

// ---------------------------------------------------------------------------

struct BenchConvergenceArgs {
  std::uint64_t seed = 0;
  std::string out_prefix = "bench";
  double tol = 1e-8;
  long t_max = 1000;
  bool full_data3 = false;
};

void run_bench_convergence(const BenchConvergenceArgs& a) {
  const tbfa::RngStream rng(a.seed);
  std::vector<std::pair<std::string, tbfa::MatrixDataset>> datasets;
  const auto add = [&datasets](const std::string& name,
                               tbfa::GeneratorSpec spec, tbfa::RngStream rs) {
    auto [ds, truth] = tbfa::generate(spec, rs);
    (void)truth;
    datasets.emplace_back(name, std::move(ds));
  };
  tbfa::GeneratorSpec d1;
  d1.kind = tbfa::GeneratorKind::Data1;
  d1.n = 500;
  add("data1", d1, rng.child(1));
  tbfa::GeneratorSpec d2;
  d2.kind = tbfa::GeneratorKind::Data2;
  d2.n = 500;
  add("data2", d2, rng.child(2));
  tbfa::GeneratorSpec d3;
  d3.kind = tbfa::GeneratorKind::Data3;
  d3.n = 100;
  d3.d_c_override = a.full_data3 ? 2000 : 500;
  add("data3", d3, rng.child(3));

  tbfa::FitConfig cfg;
  cfg.tol = a.tol;
  cfg.t_max = static_cast<int>(a.t_max);
  const std::vector<tbfa::Algorithm> algs = {
      tbfa::Algorithm::Ecme, tbfa::Algorithm::PxEcme, tbfa::Algorithm::Aecm,
      tbfa::Algorithm::PxAecm};
  const tbfa::ConvergenceResult res =
      tbfa::convergence_study(datasets, 3, 3, algs, cfg, rng.child(4));

  tbfa::write_file_atomic(a.out_prefix + "_convergence.csv",
                          tbfa::convergence_csv(res));
  json traces = json::array();
  for (const tbfa::ConvergenceTrace& t : res.traces) {
    json entry;
    entry["dataset"] = t.dataset;
    entry["algorithm"] = tbfa::algorithm_name(t.algorithm);
    entry["iterations"] = t.iterations;
    entry["converged"] = t.converged;
    entry["loglik"] = t.loglik;
    entry["seconds"] = t.seconds;
    traces.push_back(std::move(entry));
  }
  tbfa::write_file_atomic(a.out_prefix + "_convergence.json",
                          json{{"traces", std::move(traces)}}.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct BenchRobustnessArgs {
  std::vector<std::string> families = {"FC"};
  std::vector<std::string> situations = {"I"};
  std::vector<double> p_values = {0.005, 0.01, 0.02, 0.05, 0.09};
  std::vector<std::string> methods = {"tbfa", "bfa", "tfa", "fa"};
  long reps = 10;
  long n = 1000;
  std::uint64_t seed = 0;
  std::string algorithm = "px-aecm";
  double tol = 1e-8;
  long t_max = 1000;
  std::string out = "robustness.csv";
};

void run_bench_robustness(const BenchRobustnessArgs& a) {
  std::vector<tbfa::OutlierFamily> families;
  for (const std::string& f : a.families)
    families.push_back(tbfa::parse_outlier_family(f));
  std::vector<tbfa::OutlierSituation> situations;
  for (const std::string& s : a.situations)
    situations.push_back(tbfa::parse_outlier_situation(s));
  std::vector<tbfa::FitMethod> methods;
  for (const std::string& m : a.methods)
    methods.push_back(tbfa::parse_fit_method(m));
  const tbfa::FitConfig cfg =
      fit_config(a.algorithm, a.tol, a.t_max, a.seed, false);
  const tbfa::RobustnessResult res =
      tbfa::robustness_study(a.p_values, families, situations, methods,
                             a.reps, a.n, cfg, tbfa::RngStream(a.seed));
  tbfa::write_file_atomic(a.out, tbfa::robustness_csv(res));
}

// ---------------------------------------------------------------------------

struct BenchAccuracyArgs {
  std::string runs = "100:100,500:100,5000:25";
  std::uint64_t seed = 0;
  std::string algorithm = "px-aecm";
  double tol = 1e-8;
  long t_max = 1000;
  std::string out = "accuracy.csv";
};

void run_bench_accuracy(const BenchAccuracyArgs& a) {
  std::vector<tbfa::AccuracyRun> runs;
  std::size_t start = 0;
  while (start <= a.runs.size()) {
    const std::size_t comma = a.runs.find(',', start);
    const std::string part = a.runs.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    const std::size_t colon = part.find(':');
    if (colon == std::string::npos)
      throw tbfa::UsageError("--runs wants N:REPS pairs, got " + part);
    try {
      runs.push_back({std::stol(part.substr(0, colon)),
                      std::stol(part.substr(colon + 1))});
    } catch (const std::exception&) {
      throw tbfa::UsageError("malformed --runs entry: " + part);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const tbfa::FitConfig cfg =
      fit_config(a.algorithm, a.tol, a.t_max, a.seed, false);
  const tbfa::AccuracyResult res =
      tbfa::accuracy_study(runs, cfg, tbfa::RngStream(a.seed));
  tbfa::write_file_atomic(a.out, tbfa::accuracy_csv(res));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilinear factor analysis with matrix-variate t errors"};
  app.require_subcommand(1);

  auto sim = std::make_shared<SimulateArgs>();
  CLI::App* simulate = app.add_subcommand("simulate", "generate a dataset");
  simulate->add_option("--kind", sim->kind,
                       "data1 | data2 | data3 | accuracy");
  simulate->add_option("--n", sim->n, "sample size (0 = recipe default)");
  simulate->add_option("--seed", sim->seed, "rng seed");
  simulate->add_option("--out", sim->out, "output dataset path")->required();
  simulate->add_option("--contaminate", sim->contaminate,
                       "FAMILY:SITUATION:P outlier injection");
  simulate->add_option("--format", sim->format, "text | binary");
  simulate->add_option("--dc", sim->d_c_override,
                       "override d_c (data3 desk scaling)");
  simulate->callback([sim] { run_simulate(*sim); });

  auto fit_args = std::make_shared<FitArgs>();
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit a model");
  fit_cmd->add_option("--data", fit_args->data, "dataset path")->required();
  fit_cmd->add_option("--qc", fit_args->q_c, "column factors")->required();
  fit_cmd->add_option("--qr", fit_args->q_r, "row factors")->required();
  fit_cmd->add_option("--algorithm", fit_args->algorithm,
                      "ecme | px-ecme | aecm | px-aecm");
  fit_cmd->add_option("--tol", fit_args->tol, "relative tolerance");
  fit_cmd->add_option("--tmax", fit_args->t_max, "iteration budget");
  fit_cmd->add_option("--seed", fit_args->seed, "rng seed (initialization)");
  fit_cmd->add_flag("--gaussian", fit_args->gaussian, "matrix-normal fit");
  fit_cmd->add_option("--out", fit_args->out, "report path")->required();
  fit_cmd->callback([fit_args] { run_fit(*fit_args); });

  auto sel = std::make_shared<SelectArgs>();
  CLI::App* select = app.add_subcommand("select", "BIC grid search");
  select->add_option("--data", sel->data, "dataset path")->required();
  select->add_option("--qc-range", sel->qc_range, "LO-HI column factors");
  select->add_option("--qr-range", sel->qr_range, "LO-HI row factors");
  select->add_option("--algorithm", sel->algorithm, "fit algorithm");
  select->add_option("--tol", sel->tol, "relative tolerance");
  select->add_option("--tmax", sel->t_max, "iteration budget");
  select->add_option("--seed", sel->seed, "rng seed");
  select->add_flag("--gaussian", sel->gaussian, "matrix-normal fits");
  select->add_option("--out", sel->out, "report path")->required();
  select->callback([sel] { run_select(*sel); });

  auto sc = std::make_shared<ScoresArgs>();
  CLI::App* scores = app.add_subcommand("scores", "posterior factor scores");
  scores->add_option("--data", sc->data, "dataset path")->required();
  scores->add_option("--params", sc->params, "parameter file")->required();
  scores->add_option("--out", sc->out, "output path")->required();
  scores->callback([sc] { run_scores(*sc); });

  auto se = std::make_shared<StderrArgs>();
  CLI::App* stderr_cmd =
      app.add_subcommand("stderr", "information-based standard errors");
  stderr_cmd->add_option("--params", se->params, "parameter file")->required();
  stderr_cmd->add_option("--n", se->n, "sample size")->required();
  stderr_cmd->add_option("--mask", se->mask, "triangular | corner | full");
  stderr_cmd->add_option("--out", se->out, "output path")->required();
  stderr_cmd->callback([se] { run_stderr(*se); });

  CLI::App* bench = app.add_subcommand("bench", "benchmark studies");
  bench->require_subcommand(1);

  auto bc = std::make_shared<BenchConvergenceArgs>();
  CLI::App* bconv = bench->add_subcommand("convergence",
                                          "algorithm race on data1/2/3");
  bconv->add_option("--seed", bc->seed, "rng seed");
  bconv->add_option("--out-prefix", bc->out_prefix, "artifact prefix");
  bconv->add_option("--tol", bc->tol, "relative tolerance");
  bconv->add_option("--tmax", bc->t_max, "iteration budget");
  bconv->add_flag("--full-data3", bc->full_data3, "d_c=2000 (default 500)");
  bconv->callback([bc] { run_bench_convergence(*bc); });

  auto br = std::make_shared<BenchRobustnessArgs>();
  CLI::App* brob = bench->add_subcommand("robustness", "contamination sweep");
  brob->add_option("--family", br->families, "FC | OC | FC+OC (repeatable)");
  brob->add_option("--situation", br->situations, "I..IV (repeatable)");
  brob->add_option("--p", br->p_values, "outlier proportions (repeatable)");
  brob->add_option("--method", br->methods, "tbfa|bfa|tfa|fa (repeatable)");
  brob->add_option("--reps", br->reps, "repetitions per cell");
  brob->add_option("--n", br->n, "clean sample size");
  brob->add_option("--seed", br->seed, "rng seed");
  brob->add_option("--algorithm", br->algorithm, "fit algorithm");
  brob->add_option("--tol", br->tol, "relative tolerance");
  brob->add_option("--tmax", br->t_max, "iteration budget");
  brob->add_option("--out", br->out, "CSV path");
  brob->callback([br] { run_bench_robustness(*br); });

  auto ba = std::make_shared<BenchAccuracyArgs>();
  CLI::App* bacc = bench->add_subcommand("accuracy", "repetition study");
  bacc->add_option("--runs", ba->runs, "comma-separated N:REPS pairs");
  bacc->add_option("--seed", ba->seed, "rng seed");
  bacc->add_option("--algorithm", ba->algorithm, "fit algorithm");
  bacc->add_option("--tol", ba->tol, "relative tolerance");
  bacc->add_option("--tmax", ba->t_max, "iteration budget");
  bacc->add_option("--out", ba->out, "CSV path");
  bacc->callback([ba] { run_bench_accuracy(*ba); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const tbfa::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tbfa::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tbfa::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tbfa::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tbfa::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const tbfa::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return g_exit;
}
