#include "lapdiag/lapdiag.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include "lapdiag/bq_engine.hpp"
#include "lapdiag/calibration.hpp"
#include "lapdiag/error.hpp"
#include "lapdiag/external.hpp"
#include "lapdiag/grids.hpp"
#include "lapdiag/oracles.hpp"
#include "util.hpp"

struct lapdiag_integrand {
  lapdiag::IntegrandSpec spec;
};

struct lapdiag_grid {
  lapdiag::PreliminaryGrid grid;
};

struct lapdiag_config {
  lapdiag::CalibrationResult result;
};

struct lapdiag_report {
  lapdiag::DiagnosticReport report;
};

namespace {

using lapdiag::ErrorCode;
using lapdiag::detail::format_double;

struct LastError {
  std::string message;
  long long point = -1;
  double rcond = std::numeric_limits<double>::quiet_NaN();
};

thread_local LastError g_last;

lapdiag_status set_error(lapdiag_status code, std::string msg, long long point = -1,
                         double rcond = std::numeric_limits<double>::quiet_NaN()) {
  g_last.message = std::move(msg);
  g_last.point = point;
  g_last.rcond = rcond;
  return code;
}

template <class F>
lapdiag_status guard(F&& body) {
  g_last = LastError{};
  try {
    body();
    return LAPDIAG_OK;
  } catch (const lapdiag::Error& e) {
    return set_error(static_cast<lapdiag_status>(e.code()), e.what(),
                     e.point_index ? static_cast<long long>(*e.point_index) : -1, e.rcond);
  } catch (const nlohmann::json::exception& e) {
    return set_error(LAPDIAG_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(LAPDIAG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(LAPDIAG_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(LAPDIAG_ERR_INTERNAL, "unknown failure");
  }
}

void require(bool ok, const char* what) {
  if (!ok) lapdiag::fail(ErrorCode::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string table_csv(const lapdiag::CalibrationResult& r) {
  std::ostringstream os;
  if (r.target) {
    os << "lambda,m1,rcond,ok\n";
    for (const auto& row : r.target->table)
      os << format_double(row.lambda) << ',' << format_double(row.ok ? row.m1 : std::nan("")) << ','
         << format_double(row.rcond) << ',' << (row.ok ? 1 : 0) << '\n';
  } else if (r.l2) {
    os << "start,lambda,objective,iterations,ok,status\n";
    for (const auto& s : r.l2->starts)
      os << format_double(s.start) << ',' << format_double(s.lambda) << ',' << format_double(s.objective) << ','
         << s.iterations << ',' << (s.ok ? 1 : 0) << ',' << s.status << '\n';
  }
  return os.str();
}

}  // namespace

extern "C" {

const char* lapdiag_version(void) { return LAPDIAG_VERSION; }

const char* lapdiag_status_name(lapdiag_status status) {
  if (status == LAPDIAG_OK) return "Ok";
  return lapdiag::to_string(static_cast<ErrorCode>(status));
}

const char* lapdiag_last_error(void) { return g_last.message.c_str(); }
long long lapdiag_last_error_point(void) { return g_last.point; }
double lapdiag_last_error_rcond(void) { return g_last.rcond; }
void lapdiag_string_free(char* s) { std::free(s); }

lapdiag_status lapdiag_integrand_builtin(const char* name, lapdiag_integrand** out) {
  return guard([&] {
    require(name && out, "null argument");
    *out = new lapdiag_integrand{lapdiag::parse_builtin(name)};
  });
}

lapdiag_status lapdiag_integrand_callback(const char* name, int dim, lapdiag_logf_fn fn, void* user,
                                          const double* mode, const double* hessian, const double* scale_hint,
                                          lapdiag_integrand** out) {
  return guard([&] {
    require(fn && mode && out && dim > 0, "null argument or non-positive dimension");
    const lapdiag::Vector m = Eigen::Map<const lapdiag::Vector>(mode, dim);
    lapdiag::IntegrandSpec::PointFn point = [fn, user, dim](const Eigen::Ref<const lapdiag::Vector>& x) {
      return fn(x.data(), dim, user);
    };
    lapdiag::Matrix h;
    if (hessian) {
      h = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(hessian, dim, dim);
    } else {
      lapdiag::IntegrandSpec::BatchFn batch = [point](const lapdiag::Matrix& pts) {
        lapdiag::Vector v(pts.rows());
        for (Eigen::Index i = 0; i < pts.rows(); ++i) v[i] = point(pts.row(i).transpose());
        return v;
      };
      const lapdiag::Vector hint =
          scale_hint ? lapdiag::Vector(Eigen::Map<const lapdiag::Vector>(scale_hint, dim)) : lapdiag::Vector();
      h = lapdiag::finite_difference_hessian(batch, m, hint);
    }
    *out = new lapdiag_integrand{lapdiag::IntegrandSpec(name ? name : "callback", point, m, h)};
  });
}

lapdiag_status lapdiag_integrand_from_spec_file(const char* path, lapdiag_integrand** out) {
  return guard([&] {
    require(path && out, "null argument");
    *out = new lapdiag_integrand{lapdiag::load_external_integrand(path)};
  });
}

void lapdiag_integrand_free(lapdiag_integrand* integrand) { delete integrand; }

int lapdiag_integrand_dim(const lapdiag_integrand* integrand) { return integrand ? integrand->spec.dim() : 0; }

lapdiag_status lapdiag_integrand_log_laplace(const lapdiag_integrand* integrand, double* out) {
  return guard([&] {
    require(integrand && out, "null argument");
    *out = lapdiag::log_laplace(lapdiag::gaussian_approx(integrand->spec));
  });
}

lapdiag_status lapdiag_grid_create(const char* family, int dim, double scale, lapdiag_grid** out) {
  return guard([&] {
    require(family && out, "null argument");
    *out = new lapdiag_grid{lapdiag::make_grid(lapdiag::parse_grid_family(family), dim, scale)};
  });
}

lapdiag_status lapdiag_grid_from_json(const char* json, lapdiag_grid** out) {
  return guard([&] {
    require(json && out, "null argument");
    *out = new lapdiag_grid{lapdiag::grid_from_json(nlohmann::json::parse(json))};
  });
}

lapdiag_status lapdiag_grid_to_json(const lapdiag_grid* grid, char** out) {
  return guard([&] {
    require(grid && out, "null argument");
    *out = dup_string(lapdiag::grid_to_json(grid->grid).dump(2));
  });
}

long long lapdiag_grid_size(const lapdiag_grid* grid) { return grid ? static_cast<long long>(grid->grid.size()) : 0; }
int lapdiag_grid_dim(const lapdiag_grid* grid) { return grid ? grid->grid.dim() : 0; }

lapdiag_status lapdiag_grid_points(const lapdiag_grid* grid, double* out, size_t capacity) {
  return guard([&] {
    require(grid && out, "null argument");
    const auto& p = grid->grid.points();
    require(capacity >= static_cast<size_t>(p.size()), "output buffer too small");
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out, p.rows(), p.cols()) = p;
  });
}

void lapdiag_grid_free(lapdiag_grid* grid) { delete grid; }

void lapdiag_calibrate_options_init(lapdiag_calibrate_options* opts) {
  if (!opts) return;
  opts->method = nullptr;
  opts->lambda = std::nan("");
  opts->gamma = std::nan("");
  opts->la_threshold = lapdiag::kDefaultLaThreshold;
  opts->quantile = lapdiag::kDefaultQuantile;
  opts->solver = nullptr;
  opts->l2_halfwidth = 10.0;
  opts->l2_step = 0.01;
  opts->candidates = nullptr;
  opts->n_candidates = 0;
}

lapdiag_status lapdiag_calibrate(const lapdiag_grid* grid, const lapdiag_calibrate_options* opts,
                                 lapdiag_config** out) {
  return guard([&] {
    require(grid && out, "null argument");
    lapdiag_calibrate_options o;
    lapdiag_calibrate_options_init(&o);
    if (opts) o = *opts;
    lapdiag::CalibrateOptions co;
    if (o.method) co.method = lapdiag::parse_calibration_method(o.method);
    if (std::isfinite(o.lambda)) co.lambda = o.lambda;
    if (std::isfinite(o.gamma)) co.gamma = o.gamma;
    co.la_threshold = o.la_threshold;
    co.quantile = o.quantile;
    if (o.solver) co.solver = lapdiag::parse_solver_path(o.solver);
    co.l2.halfwidth = o.l2_halfwidth;
    co.l2.step = o.l2_step;
    if (o.candidates && o.n_candidates > 0) co.candidates.assign(o.candidates, o.candidates + o.n_candidates);
    *out = new lapdiag_config{lapdiag::calibrate(grid->grid, co)};
  });
}

lapdiag_status lapdiag_config_create(const lapdiag_grid* grid, double lambda, double gamma, double log_alpha,
                                     lapdiag_config** out) {
  return guard([&] {
    require(grid && out, "null argument");
    lapdiag::CalibrationResult r;
    r.config.grid = grid->grid;
    r.config.lambda = lambda;
    r.config.gamma = gamma;
    r.config.log_alpha = log_alpha;
    r.config.validate();
    r.nu = std::nan("");
    r.achieved_m1 = std::nan("");
    r.boundary_residual = std::nan("");
    r.rcond = std::nan("");
    *out = new lapdiag_config{std::move(r)};
  });
}

lapdiag_status lapdiag_config_from_json(const char* json, lapdiag_config** out) {
  return guard([&] {
    require(json && out, "null argument");
    *out = new lapdiag_config{lapdiag::calibration_from_json(nlohmann::json::parse(json))};
  });
}

lapdiag_status lapdiag_config_to_json(const lapdiag_config* config, char** out) {
  return guard([&] {
    require(config && out, "null argument");
    *out = dup_string(lapdiag::calibration_to_json(config->result).dump(2));
  });
}

lapdiag_status lapdiag_config_table_csv(const lapdiag_config* config, char** out) {
  return guard([&] {
    require(config && out, "null argument");
    *out = dup_string(table_csv(config->result));
  });
}

lapdiag_status lapdiag_config_get(const lapdiag_config* config, lapdiag_config_info* out) {
  return guard([&] {
    require(config && out, "null argument");
    const auto& r = config->result;
    out->dim = r.config.dim();
    out->n_points = static_cast<long long>(r.config.grid.size());
    out->nu = r.nu;
    out->gamma = r.config.gamma;
    out->lambda = r.config.lambda;
    out->log_alpha = r.config.log_alpha;
    out->quantile = r.config.quantile;
    out->achieved_m1 = r.achieved_m1;
    out->boundary_residual = r.boundary_residual;
    out->rcond = r.rcond;
  });
}

lapdiag_status lapdiag_config_set_solver(lapdiag_config* config, const char* solver) {
  return guard([&] {
    require(config && solver, "null argument");
    config->result.config.solver = lapdiag::parse_solver_path(solver);
  });
}

lapdiag_status lapdiag_config_set_jitter(lapdiag_config* config, int enabled) {
  return guard([&] {
    require(config, "null argument");
    config->result.config.jitter = enabled != 0;
  });
}

lapdiag_status lapdiag_config_set_quantile(lapdiag_config* config, double quantile) {
  return guard([&] {
    require(config && quantile > 0.0 && std::isfinite(quantile), "quantile must be positive");
    config->result.config.quantile = quantile;
  });
}

void lapdiag_config_free(lapdiag_config* config) { delete config; }

lapdiag_status lapdiag_diagnose(const lapdiag_integrand* integrand, const lapdiag_config* config, int threads,
                                lapdiag_report** out) {
  return guard([&] {
    require(integrand && config && out, "null argument");
    *out = new lapdiag_report{lapdiag::diagnose(integrand->spec, config->result.config, threads)};
  });
}

lapdiag_status lapdiag_report_summary(const lapdiag_report* report, lapdiag_summary* out) {
  return guard([&] {
    require(report && out, "null argument");
    const auto& r = report->report;
    const auto& p = r.posterior;
    out->dim = r.dim;
    out->n_points = static_cast<long long>(r.n_points);
    out->reject = p.reject ? 1 : 0;
    out->boundary = p.boundary ? 1 : 0;
    out->m1 = p.m1();
    out->c1 = p.c1();
    out->m1_rel = p.m1_rel;
    out->c1_rel = p.c1_rel;
    out->la = std::exp(p.log_la);
    out->delta = p.delta;
    out->epsilon = p.epsilon;
    out->p_value = p.p_value;
    out->log_p_value = p.log_p_value;
    out->boundary_residual = p.boundary_residual;
    out->rcond = p.rcond;
    out->seconds_evaluate = r.seconds_evaluate;
    out->seconds_solve = r.seconds_solve;
  });
}

lapdiag_status lapdiag_report_json(const lapdiag_report* report, char** out) {
  return guard([&] {
    require(report && out, "null argument");
    *out = dup_string(lapdiag::report_to_json(report->report).dump(2));
  });
}

lapdiag_status lapdiag_report_orbit_csv(const lapdiag_report* report, char** out) {
  return guard([&] {
    require(report && out, "null argument");
    *out = dup_string(lapdiag::orbit_contributions_csv(report->report));
  });
}

void lapdiag_report_free(lapdiag_report* report) { delete report; }

lapdiag_status lapdiag_find_nu(int dim, double la_threshold, int* out) {
  return guard([&] {
    require(out, "null argument");
    *out = lapdiag::find_nu(dim, la_threshold);
  });
}

lapdiag_status lapdiag_gamma_rule(double nu, int dim, double* out) {
  return guard([&] {
    require(out, "null argument");
    *out = lapdiag::gamma_rule(nu, dim);
  });
}

lapdiag_status lapdiag_mvt_laplace(double nu, int dim, double* out) {
  return guard([&] {
    require(out && dim > 0, "null argument or non-positive dimension");
    *out = lapdiag::mvt_laplace(nu, dim);
  });
}

lapdiag_status lapdiag_lambda_sweep_csv(const lapdiag_grid* grid, double nu, double gamma, const double* lambdas,
                                        size_t n, char** out) {
  return guard([&] {
    require(grid && out, "null argument");
    const int d = grid->grid.dim();
    if (!(nu > 0.0)) nu = lapdiag::find_nu(d);
    if (!std::isfinite(gamma)) gamma = lapdiag::gamma_rule(nu, d);
    const std::vector<double> cands =
        lambdas && n > 0 ? std::vector<double>(lambdas, lambdas + n) : lapdiag::default_lambda_candidates();
    const auto rows = lapdiag::lambda_sweep(grid->grid, nu, gamma, cands);
    std::ostringstream os;
    os << "lambda,m1,m1_rel,rcond,ok,error\n";
    for (const auto& r : rows) {
      std::string err = r.error;
      for (char& c : err)
        if (c == ',' || c == '\n') c = ' ';
      os << format_double(r.lambda) << ',' << format_double(r.ok ? r.m1 : std::nan("")) << ','
         << format_double(r.ok ? r.m1_rel : std::nan("")) << ',' << format_double(r.rcond) << ','
         << (r.ok ? 1 : 0) << ',' << err << '\n';
    }
    *out = dup_string(os.str());
  });
}

lapdiag_status lapdiag_oracle_importance(const lapdiag_integrand* integrand, long long n_samples, double df,
                                         unsigned long long seed, lapdiag_is_result* out, char** histogram_csv) {
  return guard([&] {
    require(integrand && out, "null argument");
    const auto r = lapdiag::importance_sample(integrand->spec, n_samples, df, seed);
    out->estimate = r.estimate;
    out->std_error = r.std_error;
    out->ci_lo = r.ci_lo;
    out->ci_hi = r.ci_hi;
    out->n_samples = r.n_samples;
    out->max_weight_fraction = r.max_weight_fraction;
    out->ess = r.ess;
    if (histogram_csv) *histogram_csv = dup_string(lapdiag::weight_histogram_csv(r));
  });
}

lapdiag_status lapdiag_oracle_riemann(const lapdiag_integrand* integrand, double halfwidth, double step, double* out) {
  return guard([&] {
    require(integrand && out, "null argument");
    *out = lapdiag::riemann_integrate(integrand->spec, halfwidth, step);
  });
}

lapdiag_status lapdiag_oracle_l2(const lapdiag_config* config, const lapdiag_integrand* integrand, double halfwidth,
                                 double step, int csv_stride, double* out, char** surface_csv) {
  return guard([&] {
    require(config && integrand && out, "null argument");
    const auto r = lapdiag::l2_error(config->result.config, integrand->spec, halfwidth, step,
                                     surface_csv ? csv_stride : 0);
    *out = r.value;
    if (surface_csv) *surface_csv = dup_string(r.surface_csv);
  });
}

}  // extern "C"
