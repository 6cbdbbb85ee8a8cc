// Command-line front end. Talks to the library only through lapdiag.h.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lapdiag/lapdiag.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitAccept = 0;
constexpr int kExitError = 2;
constexpr int kExitReject = 3;
constexpr const char* kConfigSchema = "lapdiag-calibration/1";

struct Failure {
  lapdiag_status status;
  std::string message;
};

void check(lapdiag_status s) {
  if (s != LAPDIAG_OK) throw Failure{s, lapdiag_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  lapdiag_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{LAPDIAG_ERR_IO, "cannot open '" + path + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Failure{LAPDIAG_ERR_IO, "cannot write '" + path + "'"};
  out << content;
  if (!out) throw Failure{LAPDIAG_ERR_IO, "write to '" + path + "' failed"};
}

// a/b/name.json -> a/b/name<suffix>
std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Integrand = std::unique_ptr<lapdiag_integrand, Deleter<lapdiag_integrand, lapdiag_integrand_free>>;
using Grid = std::unique_ptr<lapdiag_grid, Deleter<lapdiag_grid, lapdiag_grid_free>>;
using Config = std::unique_ptr<lapdiag_config, Deleter<lapdiag_config, lapdiag_config_free>>;
using Report = std::unique_ptr<lapdiag_report, Deleter<lapdiag_report, lapdiag_report_free>>;

// One per run; written next to the primary output.
struct Manifest {
  std::string command;
  json inputs = json::object();
  json outputs = json::array();
  json timing = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void output(const std::string& path) { outputs.push_back(path); }

  void write(const std::string& path, int exit_code, const std::optional<Failure>& failure) const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json doc{{"command", command},
             {"inputs", inputs},
             {"versions", {{"tool", lapdiag_version()}, {"config_schema", kConfigSchema}}},
             {"outputs", outputs},
             {"exit_code", exit_code},
             {"timing", timing}};
    doc["timing"]["total"] = secs;
    if (failure) doc["error"] = {{"status", lapdiag_status_name(failure->status)}, {"message", failure->message}};
    write_file(path, doc.dump(2) + "\n");
  }
};

struct Source {
  std::string builtin;
  std::string spec;

  void add(CLI::App* app) {
    auto* b = app->add_option("--builtin", builtin, "Built-in integrand, e.g. banana or mvt:nu=38,d=2");
    auto* s = app->add_option("--spec", spec, "External integrand spec file (JSON)");
    b->excludes(s);
    s->excludes(b);
  }

  Integrand load() const {
    lapdiag_integrand* out = nullptr;
    if (!builtin.empty()) check(lapdiag_integrand_builtin(builtin.c_str(), &out));
    else if (!spec.empty()) check(lapdiag_integrand_from_spec_file(spec.c_str(), &out));
    else throw Failure{LAPDIAG_ERR_INVALID_ARGUMENT, "one of --builtin or --spec is required"};
    return Integrand(out);
  }

  void record(json& inputs) const {
    if (!builtin.empty()) inputs["builtin"] = builtin;
    if (!spec.empty()) inputs["spec"] = spec;
  }
};

struct GridArgs {
  int dim = 0;
  std::string family;
  double scale = 3.6;

  void add(CLI::App* app) {
    app->add_option("--dim", dim, "Dimension")->required()->check(CLI::PositiveNumber);
    app->add_option("--grid", family, "Grid family")->required()->check(CLI::IsMember({"cross2d", "ckf", "gh2"}));
    app->add_option("--scale", scale, "Radius of the inner gh2 orbit")->capture_default_str()->check(CLI::PositiveNumber);
  }

  Grid make() const {
    lapdiag_grid* g = nullptr;
    check(lapdiag_grid_create(family.c_str(), dim, scale, &g));
    return Grid(g);
  }

  void record(json& inputs) const {
    inputs["dim"] = dim;
    inputs["grid"] = family;
    if (family == "gh2") inputs["scale"] = scale;
  }
};

Config load_config(const std::string& path) {
  lapdiag_config* c = nullptr;
  check(lapdiag_config_from_json(read_file(path).c_str(), &c));
  return Config(c);
}

// Returns the exit code; the manifest is written by the caller.
using Action = std::function<int(Manifest&)>;

int run(const Action& action, Manifest& m, const std::string& manifest_path) {
  std::optional<Failure> failure;
  int code = kExitError;
  try {
    code = action(m);
  } catch (const Failure& f) {
    failure = f;
    std::cerr << "lapdiag: " << lapdiag_status_name(f.status) << ": " << f.message << "\n";
    const long long pt = lapdiag_last_error_point();
    if (pt >= 0 && f.status == LAPDIAG_ERR_NON_FINITE_LOGF) std::cerr << "lapdiag: offending point index " << pt << "\n";
    const double rc = lapdiag_last_error_rcond();
    if (!std::isnan(rc)) std::cerr << "lapdiag: rcond " << fmt(rc) << "\n";
  }
  try {
    m.write(manifest_path, code, failure);
  } catch (const Failure& f) {
    std::cerr << "lapdiag: " << f.message << "\n";
    return kExitError;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplace approximation diagnostic via Bayesian quadrature"};
  app.set_version_flag("--version", std::string(lapdiag_version()));
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: LG_THREADS or all cores)");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Calibrate hyperparameters for a grid family and dimension");
  GridArgs cal_grid;
  cal_grid.add(cal);
  std::string cal_out, cal_method, cal_solver, cal_table;
  double cal_lambda = NAN, cal_gamma = NAN, cal_l2_step = 0.01, cal_l2_half = 10.0, cal_quantile = 1.96;
  double cal_threshold = 0.95;
  std::vector<double> cal_candidates;
  cal->add_option("--out", cal_out, "Calibration file to write")->required();
  cal->add_option("--method", cal_method, "l2_optimized, target_m1 or fixed (default by dimension)")
      ->check(CLI::IsMember({"l2_optimized", "target_m1", "fixed"}));
  cal->add_option("--lambda", cal_lambda, "Length-scale for --method fixed");
  cal->add_option("--gamma", cal_gamma, "Override the gamma rule");
  cal->add_option("--l2-step", cal_l2_step, "Cell width of the L2 quadrature")->capture_default_str();
  cal->add_option("--l2-halfwidth", cal_l2_half, "Half-width of the L2 quadrature box")->capture_default_str();
  cal->add_option("--candidates", cal_candidates, "Length-scales for the target sweep");
  cal->add_option("--quantile", cal_quantile, "Normal quantile of the rejection rule")->capture_default_str();
  cal->add_option("--la-threshold", cal_threshold, "Laplace ratio defining nu_d")->capture_default_str();
  cal->add_option("--solver", cal_solver, "auto, dense or fskq")->check(CLI::IsMember({"auto", "dense", "fskq"}));
  cal->add_option("--table", cal_table, "Also write the sweep or L2 start table as CSV");

  // diagnose
  auto* dia = app.add_subcommand("diagnose", "Diagnose the Laplace approximation of an integrand");
  Source dia_src;
  dia_src.add(dia);
  std::string dia_calib, dia_out = "report.json", dia_orbits, dia_solver;
  double dia_quantile = NAN;
  bool dia_jitter = false;
  dia->add_option("--calib", dia_calib, "Calibration file")->required();
  dia->add_option("--out", dia_out, "Report JSON")->capture_default_str();
  dia->add_option("--orbits", dia_orbits, "Orbit contribution CSV (default next to the report)");
  dia->add_option("--solver", dia_solver, "auto, dense or fskq")->check(CLI::IsMember({"auto", "dense", "fskq"}));
  dia->add_option("--quantile", dia_quantile, "Override the calibrated quantile");
  dia->add_flag("--jitter", dia_jitter, "Add 1e-12 of the largest diagonal to the Gram matrix");

  // sweep
  auto* swp = app.add_subcommand("sweep", "m1 of the calibration function over a length-scale sweep");
  GridArgs swp_grid;
  swp_grid.add(swp);
  std::string swp_out;
  double swp_nu = 0.0, swp_gamma = NAN, swp_from = 0.5, swp_to = 10.0, swp_step = 0.1;
  std::vector<double> swp_lambdas;
  swp->add_option("--out", swp_out, "CSV to write")->required();
  swp->add_option("--nu", swp_nu, "Degrees of freedom (default: the nu rule)");
  swp->add_option("--gamma", swp_gamma, "Measure spread (default: the gamma rule)");
  swp->add_option("--lambdas", swp_lambdas, "Explicit length-scales");
  swp->add_option("--from", swp_from, "First length-scale")->capture_default_str();
  swp->add_option("--to", swp_to, "Last length-scale")->capture_default_str();
  swp->add_option("--step", swp_step, "Length-scale increment")->capture_default_str()->check(CLI::PositiveNumber);

  // oracle
  auto* ora = app.add_subcommand("oracle", "Reference integrals and L2 errors");
  ora->require_subcommand(1);
  auto* ois = ora->add_subcommand("is", "Importance sampling with a multivariate t proposal");
  Source is_src;
  is_src.add(ois);
  std::string is_out, is_hist;
  long long is_n = 100000;
  double is_df = 5.0;
  unsigned long long is_seed = 1;
  ois->add_option("--out", is_out, "CSV to write")->required();
  ois->add_option("--n", is_n, "Samples")->capture_default_str()->check(CLI::PositiveNumber);
  ois->add_option("--df", is_df, "Proposal degrees of freedom")->capture_default_str()->check(CLI::PositiveNumber);
  ois->add_option("--seed", is_seed, "Seed")->capture_default_str();
  ois->add_option("--histogram", is_hist, "Weight histogram CSV");

  auto* oq = ora->add_subcommand("quadrature", "Midpoint-rule integral over a box (d <= 3)");
  Source q_src;
  q_src.add(oq);
  std::string q_out;
  double q_half = 10.0, q_step = 0.01;
  oq->add_option("--out", q_out, "CSV to write")->required();
  oq->add_option("--halfwidth", q_half, "Box half-width")->capture_default_str()->check(CLI::PositiveNumber);
  oq->add_option("--step", q_step, "Cell width")->capture_default_str()->check(CLI::PositiveNumber);

  auto* ol2 = ora->add_subcommand("l2", "L2 error of the posterior mean surface (d <= 2)");
  Source l2_src;
  l2_src.add(ol2);
  std::string l2_out, l2_calib, l2_surface;
  double l2_half = 10.0, l2_step = 0.01;
  int l2_stride = 10;
  ol2->add_option("--calib", l2_calib, "Calibration file")->required();
  ol2->add_option("--out", l2_out, "CSV to write")->required();
  ol2->add_option("--halfwidth", l2_half, "Box half-width")->capture_default_str()->check(CLI::PositiveNumber);
  ol2->add_option("--step", l2_step, "Cell width")->capture_default_str()->check(CLI::PositiveNumber);
  ol2->add_option("--surface", l2_surface, "Difference surface CSV");
  ol2->add_option("--stride", l2_stride, "Surface export stride in cells")->capture_default_str()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  Manifest m;
  if (*cal) {
    m.command = "calibrate";
    cal_grid.record(m.inputs);
    m.inputs["out"] = cal_out;
    return run(
        [&](Manifest& man) {
          Grid grid = cal_grid.make();
          lapdiag_calibrate_options o;
          lapdiag_calibrate_options_init(&o);
          if (!cal_method.empty()) o.method = cal_method.c_str();
          if (!std::isnan(cal_lambda)) {
            o.lambda = cal_lambda;
            if (cal_method.empty()) o.method = "fixed";
          }
          o.gamma = cal_gamma;
          o.la_threshold = cal_threshold;
          o.quantile = cal_quantile;
          if (!cal_solver.empty()) o.solver = cal_solver.c_str();
          o.l2_halfwidth = cal_l2_half;
          o.l2_step = cal_l2_step;
          if (!cal_candidates.empty()) {
            o.candidates = cal_candidates.data();
            o.n_candidates = cal_candidates.size();
          }
          man.inputs["method"] = o.method ? o.method : "default";
          man.inputs["l2_step"] = cal_l2_step;
          lapdiag_config* raw = nullptr;
          const lapdiag_status s = lapdiag_calibrate(grid.get(), &o, &raw);
          if (s == LAPDIAG_ERR_ALL_CANDIDATES_FAILED || s == LAPDIAG_ERR_OPTIMIZATION_DIVERGED) {
            const Failure f{s, lapdiag_last_error()};
            std::vector<double> lam = cal_candidates;
            if (lam.empty())
              for (int i = 5; i <= 100; ++i) lam.push_back(i / 10.0);
            char* csv = nullptr;
            if (lapdiag_lambda_sweep_csv(grid.get(), 0.0, cal_gamma, lam.data(), lam.size(), &csv) == LAPDIAG_OK)
              std::cerr << take(csv);
            throw f;
          }
          check(s);
          Config cfg(raw);
          char* text = nullptr;
          check(lapdiag_config_to_json(cfg.get(), &text));
          write_file(cal_out, take(text) + "\n");
          man.output(cal_out);
          if (!cal_table.empty()) {
            char* csv = nullptr;
            check(lapdiag_config_table_csv(cfg.get(), &csv));
            write_file(cal_table, take(csv));
            man.output(cal_table);
          }
          lapdiag_config_info info;
          check(lapdiag_config_get(cfg.get(), &info));
          std::cout << "nu=" << fmt(info.nu) << " gamma=" << fmt(info.gamma) << " lambda=" << fmt(info.lambda)
                    << " alpha=" << fmt(std::exp(info.log_alpha)) << " achieved_m1=" << fmt(info.achieved_m1)
                    << " rcond=" << fmt(info.rcond) << " boundary_residual=" << fmt(info.boundary_residual)
                    << " out=" << cal_out << "\n";
          return kExitAccept;
        },
        m, sibling(cal_out, ".manifest.json"));
  }

  if (*dia) {
    m.command = "diagnose";
    dia_src.record(m.inputs);
    m.inputs["calib"] = dia_calib;
    m.inputs["out"] = dia_out;
    const std::string orbits = dia_orbits.empty() ? sibling(dia_out, ".orbits.csv") : dia_orbits;
    return run(
        [&](Manifest& man) {
          Integrand f = dia_src.load();
          Config cfg = load_config(dia_calib);
          if (!dia_solver.empty()) check(lapdiag_config_set_solver(cfg.get(), dia_solver.c_str()));
          if (dia_jitter) check(lapdiag_config_set_jitter(cfg.get(), 1));
          if (!std::isnan(dia_quantile)) check(lapdiag_config_set_quantile(cfg.get(), dia_quantile));
          lapdiag_report* raw = nullptr;
          check(lapdiag_diagnose(f.get(), cfg.get(), threads, &raw));
          Report rep(raw);
          char* text = nullptr;
          check(lapdiag_report_json(rep.get(), &text));
          write_file(dia_out, take(text) + "\n");
          man.output(dia_out);
          check(lapdiag_report_orbit_csv(rep.get(), &text));
          write_file(orbits, take(text));
          man.output(orbits);
          lapdiag_summary s;
          check(lapdiag_report_summary(rep.get(), &s));
          man.timing = {{"evaluate", s.seconds_evaluate}, {"solve", s.seconds_solve}};
          std::cout << "decision=" << (s.reject ? "reject" : "accept") << " boundary=" << s.boundary
                    << " m1=" << fmt(s.m1) << " la=" << fmt(s.la) << " c1=" << fmt(s.c1) << " delta=" << fmt(s.delta)
                    << " epsilon=" << fmt(s.epsilon) << " p=" << fmt(s.p_value) << " log_p=" << fmt(s.log_p_value)
                    << " n=" << s.n_points << " report=" << dia_out << "\n";
          return s.reject ? kExitReject : kExitAccept;
        },
        m, sibling(dia_out, ".manifest.json"));
  }

  if (*swp) {
    m.command = "sweep";
    swp_grid.record(m.inputs);
    m.inputs["out"] = swp_out;
    return run(
        [&](Manifest& man) {
          Grid grid = swp_grid.make();
          std::vector<double> lam = swp_lambdas;
          if (lam.empty()) {
            const int n = static_cast<int>(std::floor((swp_to - swp_from) / swp_step + 1e-9));
            for (int i = 0; i <= n; ++i) lam.push_back(swp_from + i * swp_step);
          }
          man.inputs["lambdas"] = lam;
          if (swp_nu > 0) man.inputs["nu"] = swp_nu;
          if (!std::isnan(swp_gamma)) man.inputs["gamma"] = swp_gamma;
          char* csv = nullptr;
          check(lapdiag_lambda_sweep_csv(grid.get(), swp_nu, swp_gamma, lam.data(), lam.size(), &csv));
          write_file(swp_out, take(csv));
          man.output(swp_out);
          std::cout << "rows=" << lam.size() << " out=" << swp_out << "\n";
          return kExitAccept;
        },
        m, sibling(swp_out, ".manifest.json"));
  }

  if (*ois) {
    m.command = "oracle";
    m.inputs["oracle"] = "is";
    is_src.record(m.inputs);
    m.inputs["n"] = is_n;
    m.inputs["df"] = is_df;
    m.inputs["seed"] = is_seed;
    return run(
        [&](Manifest& man) {
          Integrand f = is_src.load();
          lapdiag_is_result r;
          char* hist = nullptr;
          check(lapdiag_oracle_importance(f.get(), is_n, is_df, is_seed, &r, is_hist.empty() ? nullptr : &hist));
          std::ostringstream csv;
          csv << "estimate,std_error,ci_lo,ci_hi,n_samples,max_weight_fraction,ess\n"
              << fmt(r.estimate) << ',' << fmt(r.std_error) << ',' << fmt(r.ci_lo) << ',' << fmt(r.ci_hi) << ','
              << r.n_samples << ',' << fmt(r.max_weight_fraction) << ',' << fmt(r.ess) << '\n';
          write_file(is_out, csv.str());
          man.output(is_out);
          if (!is_hist.empty()) {
            write_file(is_hist, take(hist));
            man.output(is_hist);
          }
          std::cout << "estimate=" << fmt(r.estimate) << " std_error=" << fmt(r.std_error) << " ci=[" << fmt(r.ci_lo)
                    << "," << fmt(r.ci_hi) << "] ess=" << fmt(r.ess) << " out=" << is_out << "\n";
          return kExitAccept;
        },
        m, sibling(is_out, ".manifest.json"));
  }

  if (*oq) {
    m.command = "oracle";
    m.inputs["oracle"] = "quadrature";
    q_src.record(m.inputs);
    m.inputs["halfwidth"] = q_half;
    m.inputs["step"] = q_step;
    return run(
        [&](Manifest& man) {
          Integrand f = q_src.load();
          double v = 0.0;
          check(lapdiag_oracle_riemann(f.get(), q_half, q_step, &v));
          write_file(q_out, "integral,halfwidth,step\n" + fmt(v) + "," + fmt(q_half) + "," + fmt(q_step) + "\n");
          man.output(q_out);
          std::cout << "integral=" << fmt(v) << " out=" << q_out << "\n";
          return kExitAccept;
        },
        m, sibling(q_out, ".manifest.json"));
  }

  if (*ol2) {
    m.command = "oracle";
    m.inputs["oracle"] = "l2";
    l2_src.record(m.inputs);
    m.inputs["calib"] = l2_calib;
    m.inputs["halfwidth"] = l2_half;
    m.inputs["step"] = l2_step;
    return run(
        [&](Manifest& man) {
          Integrand f = l2_src.load();
          Config cfg = load_config(l2_calib);
          lapdiag_config_info info;
          check(lapdiag_config_get(cfg.get(), &info));
          double v = 0.0;
          char* surface = nullptr;
          check(lapdiag_oracle_l2(cfg.get(), f.get(), l2_half, l2_step, l2_surface.empty() ? 0 : l2_stride, &v,
                                  l2_surface.empty() ? nullptr : &surface));
          write_file(l2_out, "lambda,gamma,l2_error\n" + fmt(info.lambda) + "," + fmt(info.gamma) + "," + fmt(v) + "\n");
          man.output(l2_out);
          if (!l2_surface.empty()) {
            write_file(l2_surface, take(surface));
            man.output(l2_surface);
          }
          std::cout << "l2_error=" << fmt(v) << " out=" << l2_out << "\n";
          return kExitAccept;
        },
        m, sibling(l2_out, ".manifest.json"));
  }
  return kExitError;
}
