#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lapdiag/integrand.hpp"

namespace lapdiag {

nlohmann::json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Sidecar description of an external integrand:
/// {dim, mode, hessian: [[...]] | "finite-difference", evaluator: {exec, args}, scale_hint?}.
struct ExternalSpec {
  int dim = 0;
  Vector mode;
  std::optional<Matrix> hessian;  // empty means finite differences
  Vector scale_hint;
  std::string exec;
  std::vector<std::string> args;
  std::string name;
};

/// Relative exec paths with a directory part are resolved against `base_dir`;
/// bare names are looked up on PATH.
ExternalSpec parse_external_spec(const nlohmann::json& doc, const std::string& base_dir = ".");

/// A child process speaking newline-delimited JSON on stdin/stdout.
///
/// After the handshake {"handshake": {dim, mode, hessian}} the child answers
/// with one line (conventionally {"ready": true}). Each request
/// {"id": k, "points": [[...], ...]} is answered by {"id": k, "logf": [...]},
/// where null or "-inf" stands for f = 0. Calls are serialized internally.
class SubprocessEvaluator {
 public:
  SubprocessEvaluator(const ExternalSpec& spec, std::size_t batch_size = 4096);
  ~SubprocessEvaluator();
  SubprocessEvaluator(const SubprocessEvaluator&) = delete;
  SubprocessEvaluator& operator=(const SubprocessEvaluator&) = delete;

  Vector evaluate(const Matrix& points);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Starts the evaluator, computes a finite-difference Hessian if requested
/// and returns a batch-backed IntegrandSpec that owns the child process.
IntegrandSpec load_external_integrand(const std::string& spec_path);
IntegrandSpec make_external_integrand(const ExternalSpec& spec);

}  // namespace lapdiag
