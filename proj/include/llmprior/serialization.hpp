#pragma once

#include "llmprior/density_grid.hpp"
#include "llmprior/distributions.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>

namespace llmprior {

using json = nlohmann::json;

/// Shortest decimal text that parses back to exactly `v`; locale independent.
/// Integral values keep a trailing ".0", as in the JSON output.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("cannot format number");
  std::string s(buf, ptr);
  if (std::isfinite(v) && s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

namespace detail {

inline double number_at(const json& j, const std::string& what) {
  if (!j.is_number()) throw std::invalid_argument("'" + what + "' must be a number");
  return j.get<double>();
}

inline const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument(std::string("missing key '") + key + "'");
  return *it;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array() || j.empty()) throw std::invalid_argument("'" + what + "' must be a non-empty array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_at(j[i], what);
  return v;
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw std::invalid_argument("'" + what + "' must be a non-empty array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  Matrix m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
      throw std::invalid_argument("'" + what + "' must be square");
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = number_at(row[static_cast<std::size_t>(c)], what);
  }
  return m;
}

}  // namespace detail

inline json to_json(const BetaParams& p) { return {{"family", "beta"}, {"a", p.a()}, {"b", p.b()}}; }

inline json to_json(const Gmm& g) {
  json weights = json::array(), means = json::array(), chols = json::array();
  for (std::size_t k = 0; k < g.size(); ++k) {
    weights.push_back(g.weights()[k]);
    const auto& c = g.component(k);
    json m = json::array();
    for (Eigen::Index i = 0; i < c.dimension(); ++i) m.push_back(c.mean()[i]);
    means.push_back(std::move(m));
    json l = json::array();
    for (Eigen::Index r = 0; r < c.dimension(); ++r) {
      json row = json::array();
      for (Eigen::Index s = 0; s < c.dimension(); ++s) row.push_back(c.chol_factor()(r, s));
      l.push_back(std::move(row));
    }
    chols.push_back(std::move(l));
  }
  return {{"family", "gmm"}, {"weights", weights}, {"means", means}, {"chol_factors", chols}};
}

inline json to_json(const Prior& p) {
  return std::visit([](const auto& d) { return to_json(d); }, p);
}

inline BetaParams beta_from_json(const json& j) {
  return {detail::number_at(detail::field(j, "a"), "a"), detail::number_at(detail::field(j, "b"), "b")};
}

inline Gmm gmm_from_json(const json& j) {
  const auto& w = detail::field(j, "weights");
  const auto& m = detail::field(j, "means");
  const auto& l = detail::field(j, "chol_factors");
  if (!w.is_array() || !m.is_array() || !l.is_array()) throw std::invalid_argument("gmm fields must be arrays");
  if (m.size() != w.size() || l.size() != w.size()) throw std::invalid_argument("gmm field lengths differ");
  std::vector<double> weights;
  std::vector<GaussianComponent> comps;
  for (std::size_t k = 0; k < w.size(); ++k) {
    weights.push_back(detail::number_at(w[k], "weights"));
    comps.emplace_back(detail::vector_from_json(m[k], "means"), detail::matrix_from_json(l[k], "chol_factors"));
  }
  return {std::move(weights), std::move(comps)};
}

/// Parses {"family":"beta",...} or {"family":"gmm",...}.
inline Prior prior_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("prior must be a JSON object");
  const auto& fam = detail::field(j, "family");
  if (!fam.is_string()) throw std::invalid_argument("'family' must be a string");
  switch (family_from_string(fam.get<std::string>())) {
    case Family::beta: return beta_from_json(j);
    case Family::gmm: return gmm_from_json(j);
  }
  throw std::invalid_argument("unknown family");
}

inline json to_json(const DensityGrid& g) { return {{"points", g.points}, {"values", g.values}}; }

inline DensityGrid grid_from_json(const json& j) {
  DensityGrid g;
  g.points = detail::field(j, "points").get<std::vector<double>>();
  g.values = detail::field(j, "values").get<std::vector<double>>();
  if (g.points.size() != g.values.size() || g.points.size() < 2) throw std::invalid_argument("malformed density grid");
  g.spacing = (g.points.back() - g.points.front()) / static_cast<double>(g.points.size() - 1);
  return g;
}

/// CSV with header "x,density", '.' decimal separator, one newline-terminated row per point.
inline std::string grid_to_csv(const DensityGrid& g) {
  std::string out = "x,density\n";
  out.reserve(out.size() + g.size() * 40);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out += format_double(g.points[i]);
    out += ',';
    out += format_double(g.values[i]);
    out += '\n';
  }
  return out;
}

inline DensityGrid grid_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "x,density") throw std::invalid_argument("CSV header must be 'x,density'");
  DensityGrid g;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("malformed CSV row");
    double x = 0.0, v = 0.0;
    auto r1 = std::from_chars(line.data(), line.data() + comma, x);
    auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), v);
    if (r1.ec != std::errc{} || r2.ec != std::errc{}) throw std::invalid_argument("malformed CSV number");
    g.points.push_back(x);
    g.values.push_back(v);
  }
  if (g.size() < 2) throw std::invalid_argument("CSV grid needs at least two rows");
  g.spacing = (g.points.back() - g.points.front()) / static_cast<double>(g.size() - 1);
  return g;
}

}  // namespace llmprior
