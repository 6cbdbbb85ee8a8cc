#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lapdiag/bq_engine.hpp"
#include "lapdiag/external.hpp"
#include "fixtures.hpp"

using namespace lapdiag;
using testsupport::code_of;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / ("lapdiag_external_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

nlohmann::json spec_doc(const std::string& behaviour, int dim, nlohmann::json mode, nlohmann::json hessian) {
  return {{"dim", dim},
          {"mode", std::move(mode)},
          {"hessian", std::move(hessian)},
          {"evaluator", {{"exec", MOCK_EVALUATOR}, {"args", {behaviour}}}}};
}

nlohmann::json identity(int d) {
  nlohmann::json h = nlohmann::json::array();
  for (int i = 0; i < d; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < d; ++j) row.push_back(i == j ? -1.0 : 0.0);
    h.push_back(row);
  }
  return h;
}

IntegrandSpec load(const nlohmann::json& doc, const std::string& name) {
  const fs::path p = scratch() / (name + ".json");
  write_text_file(p.string(), doc.dump());
  return load_external_integrand(p.string());
}

DiagnosticConfig cross_config() {
  DiagnosticConfig c;
  c.grid = cross2d_grid();
  c.lambda = 4.2241;
  c.gamma = 1.2734;
  c.log_alpha = std::log(0.023142);
  return c;
}

}  // namespace

TEST_CASE("external banana matches the builtin", "[external]") {
  const auto doc = spec_doc("banana", 2, {0.0, -1.5}, {{-1.0 / 3.0, 0.0}, {0.0, -1.0}});
  const IntegrandSpec ext = load(doc, "banana");
  CHECK(ext.dim() == 2);
  const IntegralPosterior a = diagnose(ext, cross_config(), 1).posterior;
  const IntegralPosterior b = diagnose(banana_integrand(), cross_config(), 1).posterior;
  CHECK(a.delta == b.delta);
  CHECK(a.m1_rel == b.m1_rel);
  CHECK(a.reject == b.reject);
}

TEST_CASE("finite-difference hessian through the protocol", "[external]") {
  const IntegrandSpec ext = load(spec_doc("gauss", 3, {0.0, 0.0, 0.0}, "finite-difference"), "fd");
  CHECK((ext.hessian() + Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);
  const DiagnosticReport rep = diagnose(ext, [] {
    DiagnosticConfig c;
    c.grid = ckf_grid(3);
    c.lambda = 1.5;
    c.gamma = 1.2;
    return c;
  }(), 1);
  CHECK_FALSE(rep.posterior.reject);
}

TEST_CASE("zero values may be sent as null or -inf", "[external]") {
  const IntegrandSpec ext = load(spec_doc("tails", 2, {0.0, 0.0}, identity(2)), "tails");
  Matrix pts(3, 2);
  pts << 3.0, 0.0, -3.0, 0.0, 0.0, 0.0;
  const Vector v = ext.log_f_batch(pts);
  CHECK(v[0] == -std::numeric_limits<double>::infinity());
  CHECK(v[1] == -std::numeric_limits<double>::infinity());
  CHECK(std::isfinite(v[2]));
  CHECK(residual_vector(ext, gaussian_approx(ext), cross2d_grid(), 1.0).allFinite());
}

TEST_CASE("large requests are split into batches", "[external]") {
  ExternalSpec s = parse_external_spec(spec_doc("gauss", 2, {0.0, 0.0}, identity(2)));
  SubprocessEvaluator ev(s, 1000);
  const Matrix pts = Matrix::Random(4500, 2);
  const Vector v = ev.evaluate(pts);
  REQUIRE(v.size() == 4500);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    CHECK(std::abs(v[i] - (-0.5 * pts.row(i).squaredNorm() - std::log(2.0 * M_PI))) < 1e-12);
}

TEST_CASE("protocol failures", "[external][errors]") {
  const IntegrandSpec nan_spec = load(spec_doc("nan", 2, {0.0, 0.0}, identity(2)), "nan2");
  CHECK(code_of([&] { residual_vector(nan_spec, gaussian_approx(nan_spec), cross2d_grid(), 1.0); }) ==
        ErrorCode::kNonFiniteLogF);
  for (const char* b : {"short", "wrongid", "crash", "refuse"}) {
    INFO(b);
    CHECK(code_of([&] {
            const IntegrandSpec s = load(spec_doc(b, 2, {0.0, 0.0}, identity(2)), b);
            s.log_f_batch(Matrix::Zero(4, 2));
          }) == ErrorCode::kEvaluator);
  }
  auto missing = spec_doc("gauss", 2, {0.0, 0.0}, identity(2));
  missing["evaluator"]["exec"] = "/nonexistent/evaluator";
  CHECK(code_of([&] { load(missing, "missing"); }) == ErrorCode::kEvaluator);
}

TEST_CASE("spec file validation", "[external][errors]") {
  CHECK(code_of([] { parse_external_spec(spec_doc("gauss", 2, {0.0}, identity(2))); }) == ErrorCode::kDimensionMismatch);
  CHECK(code_of([] { parse_external_spec(spec_doc("gauss", 2, {0.0, 0.0}, identity(3))); }) ==
        ErrorCode::kDimensionMismatch);
  CHECK(code_of([] { parse_external_spec(spec_doc("gauss", 2, {0.0, 0.0}, "numeric")); }) ==
        ErrorCode::kInvalidArgument);
  CHECK(code_of([] { parse_external_spec(nlohmann::json{{"dim", 2}}); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { load_external_integrand("/nonexistent/spec.json"); }) == ErrorCode::kIo);
  CHECK(code_of([] { load(spec_doc("gauss", 2, {0.0, 0.0}, {{1.0, 0.0}, {0.0, 1.0}}), "pos"); }) ==
        ErrorCode::kNotNegativeDefinite);

  auto rel = spec_doc("gauss", 2, {0.0, 0.0}, identity(2));
  rel["evaluator"]["exec"] = "./" + fs::path(MOCK_EVALUATOR).filename().string();
  const ExternalSpec s = parse_external_spec(rel, fs::path(MOCK_EVALUATOR).parent_path().string());
  CHECK(fs::weakly_canonical(s.exec) == fs::weakly_canonical(MOCK_EVALUATOR));
  rel["evaluator"]["exec"] = "python3";
  CHECK(parse_external_spec(rel, "/somewhere").exec == "python3");
}
