#include "lapdiag/external.hpp"

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <pthread.h>
#include <sys/wait.h>
#include <unistd.h>

#include "lapdiag/error.hpp"

namespace lapdiag {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, "'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << content;
  out.flush();
  if (!out) fail(ErrorCode::kIo, "write to '" + path + "' failed");
}

namespace {

Vector to_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_log_value(const nlohmann::json& v) {
  if (v.is_null()) return -std::numeric_limits<double>::infinity();
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "-inf" || s == "-Infinity") return -std::numeric_limits<double>::infinity();
    if (s == "inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  }
  fail(ErrorCode::kEvaluator, "evaluator returned an unreadable log-value: " + v.dump());
}

}  // namespace

ExternalSpec parse_external_spec(const nlohmann::json& doc, const std::string& base_dir) {
  try {
    ExternalSpec s;
    s.dim = doc.at("dim").get<int>();
    if (s.dim < 1) fail(ErrorCode::kInvalidArgument, "spec dim must be positive");
    s.mode = to_vector(doc.at("mode"));
    if (s.mode.size() != s.dim) fail(ErrorCode::kDimensionMismatch, "spec mode length differs from dim");
    const auto& h = doc.at("hessian");
    if (h.is_string()) {
      if (h.get<std::string>() != "finite-difference")
        fail(ErrorCode::kInvalidArgument, "hessian must be a matrix or \"finite-difference\"");
    } else {
      Matrix m(s.dim, s.dim);
      if (h.size() != static_cast<std::size_t>(s.dim)) fail(ErrorCode::kDimensionMismatch, "hessian row count differs from dim");
      for (int i = 0; i < s.dim; ++i) {
        const auto row = h.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
        if (row.size() != static_cast<std::size_t>(s.dim))
          fail(ErrorCode::kDimensionMismatch, "hessian column count differs from dim");
        for (int j = 0; j < s.dim; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
      }
      s.hessian = m;
    }
    if (doc.contains("scale_hint")) {
      s.scale_hint = to_vector(doc.at("scale_hint"));
      if (s.scale_hint.size() != s.dim) fail(ErrorCode::kDimensionMismatch, "scale_hint length differs from dim");
    }
    const auto& ev = doc.at("evaluator");
    std::filesystem::path exec = ev.at("exec").get<std::string>();
    if (exec.is_relative() && exec.has_parent_path()) exec = std::filesystem::path(base_dir) / exec;
    s.exec = exec.string();
    if (ev.contains("args")) s.args = ev.at("args").get<std::vector<std::string>>();
    s.name = doc.value("name", "external:" + std::filesystem::path(s.exec).filename().string());
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed integrand spec: ") + e.what());
  }
}

struct SubprocessEvaluator::Impl {
  pid_t pid = -1;
  int to_child = -1;
  FILE* from_child = nullptr;
  std::size_t batch = 4096;
  long long next_id = 0;
  int dim = 0;
  std::mutex mu;

  void write_line(const std::string& line) {
    sigset_t set, old;
    sigemptyset(&set);
    sigaddset(&set, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &set, &old);
    const char* p = line.data();
    std::size_t left = line.size();
    bool broken = false;
    while (left > 0) {
      const ssize_t w = ::write(to_child, p, left);
      if (w < 0) {
        if (errno == EINTR) continue;
        broken = true;
        break;
      }
      p += w;
      left -= static_cast<std::size_t>(w);
    }
    if (broken) {
      // Swallow the SIGPIPE raised while it was blocked.
      timespec zero{0, 0};
      while (sigtimedwait(&set, nullptr, &zero) > 0) {
      }
    }
    pthread_sigmask(SIG_SETMASK, &old, nullptr);
    if (broken) fail(ErrorCode::kEvaluator, "evaluator closed its input");
  }

  nlohmann::json read_line() {
    char* buf = nullptr;
    std::size_t cap = 0;
    const ssize_t n = ::getline(&buf, &cap, from_child);
    std::string line = n > 0 ? std::string(buf, static_cast<std::size_t>(n)) : std::string();
    std::free(buf);
    if (n <= 0) fail(ErrorCode::kEvaluator, "evaluator exited or closed its output");
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kEvaluator, std::string("evaluator sent malformed JSON: ") + e.what());
    }
  }

  void shutdown() {
    if (to_child >= 0) ::close(to_child);
    to_child = -1;
    if (from_child) std::fclose(from_child);
    from_child = nullptr;
    if (pid > 0) {
      int status = 0;
      for (int i = 0; i < 200; ++i) {
        if (::waitpid(pid, &status, WNOHANG) == pid) {
          pid = -1;
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      pid = -1;
    }
  }
};

SubprocessEvaluator::SubprocessEvaluator(const ExternalSpec& spec, std::size_t batch_size)
    : impl_(std::make_unique<Impl>()) {
  impl_->batch = std::max<std::size_t>(1, batch_size);
  impl_->dim = spec.dim;
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) fail(ErrorCode::kEvaluator, "pipe failed");
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    fail(ErrorCode::kEvaluator, "pipe failed");
  }
  std::vector<std::string> argv_store{spec.exec};
  argv_store.insert(argv_store.end(), spec.args.begin(), spec.args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) fail(ErrorCode::kEvaluator, "fork failed");
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  impl_->pid = pid;
  impl_->to_child = in_pipe[1];
  impl_->from_child = ::fdopen(out_pipe[0], "r");

  try {
    nlohmann::json hs = {{"dim", spec.dim}, {"mode", std::vector<double>(spec.mode.data(), spec.mode.data() + spec.dim)}};
    hs["hessian"] = spec.hessian ? matrix_json(*spec.hessian) : nlohmann::json("finite-difference");
    impl_->write_line(nlohmann::json{{"handshake", hs}}.dump() + "\n");
    const nlohmann::json reply = impl_->read_line();
    if (reply.contains("error")) fail(ErrorCode::kEvaluator, "evaluator rejected the handshake: " + reply["error"].dump());
  } catch (...) {
    impl_->shutdown();
    throw;
  }
}

SubprocessEvaluator::~SubprocessEvaluator() {
  if (impl_) impl_->shutdown();
}

Vector SubprocessEvaluator::evaluate(const Matrix& points) {
  if (points.cols() != impl_->dim) fail(ErrorCode::kDimensionMismatch, "points have the wrong dimension for the evaluator");
  std::lock_guard lock(impl_->mu);
  Vector out(points.rows());
  for (Eigen::Index start = 0; start < points.rows(); start += static_cast<Eigen::Index>(impl_->batch)) {
    const Eigen::Index count = std::min<Eigen::Index>(static_cast<Eigen::Index>(impl_->batch), points.rows() - start);
    const long long id = impl_->next_id++;
    nlohmann::json req;
    req["id"] = id;
    req["points"] = matrix_json(points.middleRows(start, count));
    impl_->write_line(req.dump() + "\n");
    const nlohmann::json resp = impl_->read_line();
    if (resp.contains("error")) fail(ErrorCode::kEvaluator, "evaluator reported an error: " + resp["error"].dump());
    if (!resp.contains("id") || resp["id"] != id) fail(ErrorCode::kEvaluator, "evaluator response id does not match the request");
    const auto& lf = resp.at("logf");
    if (!lf.is_array() || lf.size() != static_cast<std::size_t>(count))
      fail(ErrorCode::kEvaluator, "evaluator returned " + std::to_string(lf.size()) + " values for " +
                                      std::to_string(count) + " points");
    for (Eigen::Index i = 0; i < count; ++i) out[start + i] = parse_log_value(lf[static_cast<std::size_t>(i)]);
  }
  return out;
}

IntegrandSpec make_external_integrand(const ExternalSpec& spec) {
  auto ev = std::make_shared<SubprocessEvaluator>(spec);
  IntegrandSpec::BatchFn fn = [ev](const Matrix& pts) { return ev->evaluate(pts); };
  const Matrix h = spec.hessian ? *spec.hessian : finite_difference_hessian(fn, spec.mode, spec.scale_hint);
  return IntegrandSpec::from_batch(spec.name, fn, spec.mode, h);
}

IntegrandSpec load_external_integrand(const std::string& spec_path) {
  const auto doc = read_json_file(spec_path);
  const auto base = std::filesystem::path(spec_path).parent_path().string();
  return make_external_integrand(parse_external_spec(doc, base.empty() ? "." : base));
}

}  // namespace lapdiag
