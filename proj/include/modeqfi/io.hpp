#pragma once

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "modeqfi/modes.hpp"

namespace modeqfi {

using Json = nlohmann::json;

// State files: {"xbar": [...], "sigma": [[...], ...]}, row-major, interleaved (q1, p1, q2, p2, ...).

inline Json state_to_json(const GaussianState& s) {
  Json sigma = Json::array();
  for (Eigen::Index i = 0; i < s.sigma.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < s.sigma.cols(); ++j) row.push_back(s.sigma(i, j));
    sigma.push_back(std::move(row));
  }
  return Json{{"xbar", std::vector<double>(s.xbar.data(), s.xbar.data() + s.xbar.size())}, {"sigma", sigma}};
}

namespace detail {

inline const Json& require_field(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorKind::InputError, path + "." + key + ": missing");
  return j.at(key);
}

inline double as_number(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(ErrorKind::InputError, path + ": expected a number");
  return j.get<double>();
}

inline Vector as_vector(const Json& j, const std::string& path) {
  if (!j.is_array()) fail(ErrorKind::InputError, path + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = as_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

inline Matrix as_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(ErrorKind::InputError, path + ": expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::string row_path = path + "[" + std::to_string(i) + "]";
    const Vector row = as_vector(j[static_cast<std::size_t>(i)], row_path);
    if (i == 0) m.resize(rows, row.size());
    if (row.size() != m.cols()) fail(ErrorKind::InputError, row_path + ": ragged row");
    m.row(i) = row.transpose();
  }
  return m;
}

}  // namespace detail

inline GaussianState state_from_json(const Json& j, const std::string& path = "$", const Tolerances& tol = kDefaultTolerances) {
  const Vector xbar = detail::as_vector(detail::require_field(j, "xbar", path), path + ".xbar");
  const Matrix sigma = detail::as_matrix(detail::require_field(j, "sigma", path), path + ".sigma");
  try {
    return make_state(xbar, sigma, tol);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

// Sampled mode files: '#' header lines "domain a b", "spacing h", "modes n" and optionally "theta x",
// then rows "t, Re u_0, Im u_0, ..., Re u_{n-1}, Im u_{n-1}[, Re ∂u_0, Im ∂u_0, ...]".

struct LoadedModeSamples {
  ModeSamples samples;
  double domain_start = 0.0;
  double domain_end = 0.0;
  std::optional<double> theta;
};

inline LoadedModeSamples read_mode_samples(std::istream& in) {
  LoadedModeSamples out;
  std::optional<int> modes;
  std::optional<double> spacing;
  bool have_domain = false;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string key;
      h >> key;
      if (key == "domain") {
        if (!(h >> out.domain_start >> out.domain_end)) fail(ErrorKind::InputError, where + ": malformed domain");
        have_domain = true;
      } else if (key == "spacing") {
        double v;
        if (!(h >> v)) fail(ErrorKind::InputError, where + ": malformed spacing");
        spacing = v;
      } else if (key == "modes") {
        int v;
        if (!(h >> v) || v < 1) fail(ErrorKind::InputError, where + ": malformed mode count");
        modes = v;
      } else if (key == "theta") {
        double v;
        if (!(h >> v)) fail(ErrorKind::InputError, where + ": malformed theta");
        out.theta = v;
      }
      continue;
    }
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        fail(ErrorKind::InputError, where + ": non-numeric cell '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (!modes || !spacing || !have_domain) fail(ErrorKind::InputError, "header must declare domain, spacing and modes");
  if (rows.size() < 3) fail(ErrorKind::InputError, "need at least three sample rows");
  const std::size_t n = static_cast<std::size_t>(*modes);
  const std::size_t width = rows.front().size();
  if (width != 1 + 4 * n) fail(ErrorKind::InputError, "expected " + std::to_string(1 + 4 * n) + " columns (t, values, derivatives)");
  const auto points = static_cast<Eigen::Index>(rows.size());
  out.samples.start = rows.front()[0];
  out.samples.spacing = *spacing;
  out.samples.values.resize(points, static_cast<Eigen::Index>(n));
  out.samples.derivatives.resize(points, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < points; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (r.size() != width) fail(ErrorKind::InputError, "row " + std::to_string(i) + ": ragged row");
    const double expected = out.samples.start + static_cast<double>(i) * *spacing;
    if (std::abs(r[0] - expected) > 1e-9 * std::max(1.0, std::abs(expected)))
      fail(ErrorKind::InputError, "row " + std::to_string(i) + ": grid is not uniform with the declared spacing");
    for (std::size_t k = 0; k < n; ++k) {
      out.samples.values(i, static_cast<Eigen::Index>(k)) = Complex(r[1 + 2 * k], r[2 + 2 * k]);
      out.samples.derivatives(i, static_cast<Eigen::Index>(k)) = Complex(r[1 + 2 * n + 2 * k], r[2 + 2 * n + 2 * k]);
    }
  }
  return out;
}

inline LoadedModeSamples load_mode_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InputError, "cannot open mode sample file " + path);
  return read_mode_samples(in);
}

inline void write_mode_samples(std::ostream& out, const ModeSamples& s, std::optional<double> theta = std::nullopt) {
  const auto points = s.values.rows(), n = s.values.cols();
  out << std::setprecision(17);
  out << "# domain " << s.start << ' ' << s.start + static_cast<double>(points - 1) * s.spacing << '\n';
  out << "# spacing " << s.spacing << '\n';
  out << "# modes " << n << '\n';
  if (theta) out << "# theta " << *theta << '\n';
  for (Eigen::Index i = 0; i < points; ++i) {
    out << s.start + static_cast<double>(i) * s.spacing;
    for (Eigen::Index k = 0; k < n; ++k) out << ',' << s.values(i, k).real() << ',' << s.values(i, k).imag();
    for (Eigen::Index k = 0; k < n; ++k) out << ',' << s.derivatives(i, k).real() << ',' << s.derivatives(i, k).imag();
    out << '\n';
  }
}

}  // namespace modeqfi
