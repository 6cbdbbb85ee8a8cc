// Test double for the external integrand protocol.
// Usage: mock_evaluator <behaviour>

#include <cmath>
#include <iostream>
#include <string>

#include <json.hpp>

using nlohmann::json;

namespace {

double banana(const json& p) {
  const double u = p[0].get<double>();
  const double v = p[1].get<double>() - 0.5 * (u * u - 3.0);
  return -std::log(2.0 * M_PI) - 0.5 * std::log(3.0) - u * u / 6.0 - 0.5 * v * v;
}

double gauss(const json& p) {
  double acc = 0.0;
  for (const auto& x : p) acc += x.get<double>() * x.get<double>();
  return -0.5 * acc - 0.5 * p.size() * std::log(2.0 * M_PI);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "gauss";
  std::string line;
  if (!std::getline(std::cin, line)) return 1;
  const json hs = json::parse(line).at("handshake");
  if (mode == "refuse") {
    std::cout << json{{"error", "unsupported"}}.dump() << std::endl;
    return 0;
  }
  std::cout << json{{"ready", true}, {"dim", hs.at("dim")}}.dump() << std::endl;
  if (mode == "crash") return 2;
  while (std::getline(std::cin, line)) {
    const json req = json::parse(line);
    json out = json::array();
    for (const auto& p : req.at("points")) {
      if (mode == "banana") {
        out.push_back(banana(p));
      } else if (mode == "tails") {
        // f = 0 beyond |x_1| > 2.5, spelled both ways.
        const double x = p[0].get<double>();
        if (x > 2.5) out.push_back(nullptr);
        else if (x < -2.5) out.push_back("-inf");
        else out.push_back(gauss(p));
      } else if (mode == "nan") {
        out.push_back(p[0].get<double>() > 2.5 ? json("nan") : json(gauss(p)));
      } else {
        out.push_back(gauss(p));
      }
    }
    if (mode == "short") out.erase(out.begin());
    json resp{{"id", mode == "wrongid" ? req.at("id").get<long>() + 1 : req.at("id").get<long>()}, {"logf", out}};
    std::cout << resp.dump() << std::endl;
  }
  return 0;
}
