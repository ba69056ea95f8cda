#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "modeqfi/applications.hpp"
#include "modeqfi/io.hpp"

namespace modeqfi::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

enum ExitCode { kOk = 0, kInvariantFailure = 1, kInputError = 2, kNumericalError = 3 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InputError:
    case ErrorKind::InvalidDimension:
    case ErrorKind::ShapeError:
    case ErrorKind::UnphysicalState:
    case ErrorKind::DomainError:
      return kInputError;
    default:
      return kNumericalError;
  }
}

struct GlobalOptions {
  std::string out;
  std::string format = "csv";
  int grid = 0;  ///< 0 selects each command's default
  double tol = 1e-6;
  int threads = 1;
};

/// What a run did, written next to every output file.
struct RunManifest {
  std::string command;
  std::string scenario_hash;
  Json parameters;
  Tolerances tolerances;
  double comparison_tolerance = 0.0;
  double wall_time_seconds = 0.0;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;

  Json to_json() const {
    return Json{{"tool", "modeqfi"},
                {"version", kVersion},
                {"schema_version", kSchemaVersion},
                {"command", command},
                {"scenario_hash", scenario_hash},
                {"parameters", parameters},
                {"tolerances",
                 {{"phys", tolerances.phys},
                  {"symm", tolerances.symm},
                  {"symp", tolerances.symp},
                  {"recon", tolerances.recon},
                  {"sing", tolerances.sing},
                  {"zero", tolerances.zero},
                  {"xcheck", tolerances.xcheck},
                  {"ortho", tolerances.ortho},
                  {"rank", tolerances.rank},
                  {"comparison", comparison_tolerance}}},
                {"wall_time_seconds", wall_time_seconds},
                {"warnings", warnings},
                {"notes", notes}};
  }
};

/// 64-bit FNV-1a of the canonical JSON dump; stable across platforms.
inline std::string scenario_hash(const Json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Cell = std::variant<double, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  std::string csv() const {
    std::string s;
    for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
    s += '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) s += ',';
        s += std::holds_alternative<double>(row[i]) ? format_number(std::get<double>(row[i])) : std::get<std::string>(row[i]);
      }
      s += '\n';
    }
    return s;
  }

  Json json() const {
    Json rows_json = Json::array();
    for (const auto& row : rows) {
      Json r = Json::object();
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (std::holds_alternative<double>(row[i]))
          r[columns[i]] = std::get<double>(row[i]);
        else
          r[columns[i]] = std::get<std::string>(row[i]);
      }
      rows_json.push_back(std::move(r));
    }
    return Json{{"columns", columns}, {"rows", rows_json}};
  }
};

/// One swept parameter of a scan.
struct SweepSpec {
  std::string operation;
  Json fixed;
  std::string parameter;
  double min = 0.0;
  double max = 1.0;
  int count = 2;
  bool log = false;
  std::string out;
  std::string format = "csv";

  void validate() const {
    if (count < 2) fail(ErrorKind::InputError, "sweep of " + parameter + " needs at least two points");
    if (!(min < max)) fail(ErrorKind::InputError, "sweep of " + parameter + " needs min < max");
    if (log && !(min > 0.0)) fail(ErrorKind::InputError, "log sweep of " + parameter + " needs a positive minimum");
    if (format != "csv" && format != "json") fail(ErrorKind::InputError, "format must be csv or json");
  }

  std::vector<double> points() const {
    std::vector<double> v(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const double f = static_cast<double>(i) / (count - 1);
      v[static_cast<std::size_t>(i)] = log ? std::pow(10.0, std::log10(min) + f * (std::log10(max) - std::log10(min))) : min + f * (max - min);
    }
    v.back() = max;
    return v;
  }

  Json to_json() const {
    return Json{{"operation", operation}, {"fixed", fixed}, {"parameter", parameter}, {"min", min},
                {"max", max},             {"count", count}, {"log", log},             {"format", format}};
  }
};

/// Evaluates f(i) for i < count on `threads` workers; results stay in index order.
template <class T, class F>
std::vector<T> parallel_map(std::size_t count, int threads, F f) {
  std::vector<T> out(count);
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = f(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < count; i += workers) out[i] = f(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline void emit(const Table& table, RunManifest& manifest, const GlobalOptions& g, std::ostream& stdout_stream,
                 std::chrono::steady_clock::time_point started) {
  manifest.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::string body;
  if (g.format == "json") {
    Json j = table.json();
    j["manifest"] = manifest.to_json();
    body = j.dump(2) + "\n";
  } else {
    body = table.csv();
  }
  if (g.out.empty()) {
    stdout_stream << body;
    return;
  }
  std::ofstream f(g.out, std::ios::binary);
  if (!f) fail(ErrorKind::InputError, "cannot write " + g.out);
  f << body;
  std::ofstream m(g.out + ".manifest.json", std::ios::binary);
  if (!m) fail(ErrorKind::InputError, "cannot write manifest for " + g.out);
  m << manifest.to_json().dump(2) << "\n";
}

inline std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::InputError, what + ": cannot parse '" + item + "'");
    }
  }
  if (v.empty()) fail(ErrorKind::InputError, what + ": empty list");
  return v;
}

// ---------------------------------------------------------------------------
// displacement-scan
// ---------------------------------------------------------------------------

struct DisplacementScanOptions {
  std::string n0 = "10,1";
  std::string chi = "0,0.25,0.5,0.75,1";
  double n1_min = 1e-2;
  double n1_max = 10.0;
  double width = 1.0;
  std::string engine = "closed-form";
};

/// Thermal beam with a squeezed-thermal derivative mode, normalized to the vacuum-derivative QFI.
inline Table displacement_scan(const DisplacementScanOptions& o, const GlobalOptions& g, RunManifest& manifest) {
  if (o.engine != "closed-form" && o.engine != "pipeline") fail(ErrorKind::InputError, "--engine must be closed-form or pipeline");
  if (!(o.width > 0.0)) fail(ErrorKind::InputError, "--width must be positive");
  const auto n0s = parse_list(o.n0, "--n0");
  const auto chis = parse_list(o.chi, "--chi");
  SweepSpec sweep{"displacement-scan", Json{{"n0", n0s}, {"chi", chis}, {"width", o.width}, {"engine", o.engine}},
                  "N1", o.n1_min, o.n1_max, (g.grid > 0 ? g.grid : 41) - 1, true, g.out, g.format};
  sweep.validate();
  std::vector<double> n1s{0.0};
  for (double v : sweep.points()) n1s.push_back(v);

  struct Point { double n0, chi, n1; };
  std::vector<Point> points;
  for (double n0 : n0s)
    for (double chi : chis)
      for (double n1 : n1s) points.push_back({n0, chi, n1});

  const auto geometry = BeamGeometry::gaussian(o.width);
  auto qfi_at = [&](double n0, double chi, double n1) {
    const BeamScenario s = BeamScenario::from_chi(chi, n1, n0, geometry);
    if (o.engine == "pipeline") return mode_encoded_qfi(beam_problem(s, BeamSource::Thermal), manifest.tolerances).total;
    return displacement_qfi_general(s);
  };
  const auto values = parallel_map<double>(points.size(), g.threads, [&](std::size_t i) {
    return qfi_at(points[i].n0, points[i].chi, points[i].n1);
  });

  Table t{{"n0", "chi", "N1", "qfi", "qfi_normalized"}, {}};
  for (std::size_t i = 0; i < points.size(); ++i) {
    // baseline: the same beam with its derivative mode in vacuum (N1 = 0)
    const double baseline = qfi_at(points[i].n0, 0.0, 0.0);
    t.rows.push_back({points[i].n0, points[i].chi, points[i].n1, values[i], values[i] / baseline});
  }
  manifest.parameters = sweep.to_json();
  manifest.notes.push_back("N1 grid: 0 followed by a log grid on [n1-min, n1-max]; default [0.01, 10]");
  manifest.notes.push_back("qfi_normalized divides by the QFI with the derivative mode in vacuum");
  return t;
}

// ---------------------------------------------------------------------------
// pulse-scan
// ---------------------------------------------------------------------------

struct PulseScanOptions {
  std::string r = "0,0.5,1";
  std::string sources = "thermal,coherent-in-phase,coherent-out-of-phase";
  double n0 = 1.0;
  double tau_min = 0.01;
  double tau_max = 6.0;
  double width = 1.0;
  std::string engine = "closed-form";
};

inline Table pulse_scan(const PulseScanOptions& o, const GlobalOptions& g, RunManifest& manifest) {
  if (o.engine != "closed-form" && o.engine != "pipeline") fail(ErrorKind::InputError, "--engine must be closed-form or pipeline");
  if (!(o.width > 0.0)) fail(ErrorKind::InputError, "--width must be positive");
  if (!(o.n0 >= 0.0)) fail(ErrorKind::InputError, "--n0 must be non-negative");
  const auto rs = parse_list(o.r, "--r");
  std::vector<std::string> sources;
  {
    std::stringstream ss(o.sources);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item != "thermal" && item != "coherent-in-phase" && item != "coherent-out-of-phase")
        fail(ErrorKind::InputError, "--sources: unknown source '" + item + "'");
      sources.push_back(item);
    }
  }
  SweepSpec sweep{"pulse-scan", Json{{"r", rs}, {"sources", sources}, {"n0", o.n0}, {"width", o.width}, {"engine", o.engine}},
                  "tau_over_w", o.tau_min, o.tau_max, g.grid > 0 ? g.grid : 120, false, g.out, g.format};
  sweep.validate();
  if (!(o.tau_min > 0.0)) fail(ErrorKind::InputError, "--tau-min must be positive");
  const auto taus = sweep.points();

  auto qfi_at = [&](const std::string& source, double r, double tau_over_w) {
    const double tau = tau_over_w * o.width;
    const PulseConstants c = gaussian_pulse_constants(tau, o.width);
    const double phi = source == "coherent-out-of-phase" ? std::numbers::pi : 0.0;
    if (o.engine == "pipeline") {
      const PulseScenario s{tau, o.n0, r, phi};
      const auto src = source == "thermal" ? PulseSource::Thermal : PulseSource::Coherent;
      return mode_encoded_qfi(gaussian_pulse_problem(s, src, o.width), manifest.tolerances).total;
    }
    return source == "thermal" ? pulse_qfi_thermal_squeezed(o.n0, r, c) : pulse_qfi_coherent_squeezed(o.n0, r, phi, c);
  };

  struct Point { double tau; std::string source; double r; };
  std::vector<Point> points;
  for (double r : rs)
    for (const auto& s : sources)
      for (double tau : taus) points.push_back({tau, s, r});
  const auto values = parallel_map<double>(points.size(), g.threads, [&](std::size_t i) {
    return qfi_at(points[i].source, points[i].r, points[i].tau);
  });
  // each r panel is divided by the maximum of its own thermal curve
  std::vector<double> norms;
  for (double r : rs) {
    const auto thermal = parallel_map<double>(taus.size(), g.threads, [&](std::size_t i) { return qfi_at("thermal", r, taus[i]); });
    norms.push_back(*std::max_element(thermal.begin(), thermal.end()));
  }

  Table t{{"tau_over_w", "source", "r", "qfi", "qfi_normalized"}, {}};
  const std::size_t per_panel = sources.size() * taus.size();
  for (std::size_t i = 0; i < points.size(); ++i)
    t.rows.push_back({points[i].tau, points[i].source, points[i].r, values[i], values[i] / norms[i / per_panel]});

  for (double tau : {taus.front(), taus.back()}) {
    const auto c = gaussian_pulse_constants(tau * o.width, o.width);
    for (const auto& f : c.flags)
      if (f.rfind("underflow", 0) == 0) manifest.warnings.push_back(f + " at tau/w=" + format_number(tau));
  }
  if (taus.front() * taus.front() / 4.0 < 2.0)
    manifest.warnings.push_back("series:small-separation used for tau/w below 2*sqrt(2)");
  manifest.parameters = sweep.to_json();
  manifest.notes.push_back("tau/w grid defaults to [0.01, 6]");
  manifest.notes.push_back("qfi_normalized divides by the maximum over the grid of the thermal curve with the same r");
  return t;
}

// ---------------------------------------------------------------------------
// qfi-eval
// ---------------------------------------------------------------------------

inline Json breakdown_json(const QfiBreakdown& b, double zero) {
  Json terms = Json::array();
  for (const auto& t : b.terms)
    if (std::abs(t.a) > zero)
      terms.push_back(Json{{"j", t.j}, {"k", t.k}, {"l", t.l}, {"a", t.a}, {"denominator", t.denominator}, {"contribution", t.contribution}});
  Json groups = Json::object();
  for (const auto& [k, v] : b.groups) groups[k] = v;
  return Json{{"total", b.total}, {"f_sigma", b.f_sigma}, {"f_xbar", b.f_xbar}, {"f_sigma_trace", b.f_sigma_trace},
              {"groups", groups}, {"terms", terms},     {"clamped_eigenvalues", b.clamped}};
}

namespace detail {

inline double number_or(const Json& j, const std::string& key, double fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  return modeqfi::detail::as_number(j.at(key), path + "." + key);
}

inline std::string string_field(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = modeqfi::detail::require_field(j, key, path);
  if (!v.is_string()) fail(ErrorKind::InputError, path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline std::shared_ptr<const ModeFamily> family_from_json(const Json& f, const std::string& path, const std::string& base_dir) {
  const std::string type = string_field(f, "type", path);
  if (type == "static") {
    const int n = static_cast<int>(number_or(f, "modes", 1, path));
    if (n < 1) fail(ErrorKind::InputError, path + ".modes: must be positive");
    return std::make_shared<AnalyticModeFamily>(n, [n](double) {
      return ModeOverlaps{CMatrix::Identity(n, n), CMatrix::Zero(n, n), CMatrix::Zero(n, n)};
    });
  }
  if (type == "hermite-gauss") {
    const int n = static_cast<int>(number_or(f, "modes", 1, path));
    return std::make_shared<AnalyticModeFamily>(hermite_gauss_family(n, number_or(f, "width", 1.0, path)));
  }
  if (type == "beam") {
    const BeamGeometry g{number_or(f, "eta", 0.0, path), number_or(f, "xi", 0.0, path), number_or(f, "zeta", 0.0, path)};
    return beam_family(g, static_cast<int>(number_or(f, "modes", 2, path)));
  }
  if (type == "gaussian-pulse") return gaussian_pulse_family(number_or(f, "width", 1.0, path));
  if (type == "sampled") {
    std::string file = string_field(f, "path", path);
    if (!file.empty() && file[0] != '/' && !base_dir.empty()) file = base_dir + "/" + file;
    const std::string rule = f.contains("rule") ? string_field(f, "rule", path) : "trapezoid";
    if (rule != "trapezoid" && rule != "simpson") fail(ErrorKind::InputError, path + ".rule: must be trapezoid or simpson");
    auto loaded = load_mode_samples(file);
    return std::make_shared<SampledModeFamily>(
        SampledModeFamily::snapshot(std::move(loaded.samples), rule == "simpson" ? QuadratureRule::Simpson : QuadratureRule::Trapezoid));
  }
  fail(ErrorKind::InputError, path + ".type: unknown family type '" + type + "'");
}

inline Vector vector_or_zero(const Json& j, const std::string& key, Eigen::Index size, const std::string& path) {
  if (!j.contains(key)) return Vector::Zero(size);
  Vector v = modeqfi::detail::as_vector(j.at(key), path + "." + key);
  if (v.size() != size) fail(ErrorKind::InputError, path + "." + key + ": expected length " + std::to_string(size));
  return v;
}

inline Matrix matrix_or_zero(const Json& j, const std::string& key, Eigen::Index size, const std::string& path) {
  if (!j.contains(key)) return Matrix::Zero(size, size);
  Matrix m = modeqfi::detail::as_matrix(j.at(key), path + "." + key);
  if (m.rows() != size || m.cols() != size) fail(ErrorKind::InputError, path + "." + key + ": expected a square matrix of size " + std::to_string(size));
  return m;
}

}  // namespace detail

/// Evaluates one scenario document (see docs/scenario-schema.md).
inline Json qfi_eval(const Json& doc, const Tolerances& tol, const std::string& base_dir = "") {
  const std::string root = "$";
  const Json& version = modeqfi::detail::require_field(doc, "schema_version", root);
  if (!version.is_number_integer() || version.get<int>() != kSchemaVersion)
    fail(ErrorKind::InputError, "$.schema_version: expected " + std::to_string(kSchemaVersion));
  const std::string kind = detail::string_field(doc, "kind", root);
  Json out{{"kind", kind}};

  if (kind == "state") {
    const GaussianState s = state_from_json(modeqfi::detail::require_field(doc, "state", root), "$.state", tol);
    const auto dim = s.xbar.size();
    const auto b = qfi(s, detail::matrix_or_zero(doc, "dsigma", dim, root), detail::vector_or_zero(doc, "dxbar", dim, root), tol);
    out["result"] = breakdown_json(b, tol.zero);
    return out;
  }
  if (kind == "mode-encoded") {
    const Json& fam = modeqfi::detail::require_field(doc, "family", root);
    ModeEncodedProblem p;
    p.family = detail::family_from_json(fam, "$.family", base_dir);
    p.theta = detail::number_or(doc, "theta", 0.0, root);
    const GaussianState s = state_from_json(modeqfi::detail::require_field(doc, "state", root), "$.state", tol);
    if (s.modes() != p.family->modes())
      fail(ErrorKind::InputError, "$.state: has " + std::to_string(s.modes()) + " modes but the family has " + std::to_string(p.family->modes()));
    p.V = s.sigma;
    p.xbar = s.xbar;
    p.dV = detail::matrix_or_zero(doc, "dsigma", s.sigma.rows(), root);
    p.dxbar = detail::vector_or_zero(doc, "dxbar", s.sigma.rows(), root);
    const auto coupling = gram_schmidt_derivatives(*p.family, p.theta, tol);
    out["result"] = breakdown_json(mode_encoded_qfi(p, coupling, tol), tol.zero);
    out["derivative_modes"] = coupling.m;
    return out;
  }
  if (kind == "beam") {
    BeamScenario s;
    if (doc.contains("geometry")) {
      const Json& gj = doc.at("geometry");
      s.geometry = {detail::number_or(gj, "eta", 0.0, "$.geometry"), detail::number_or(gj, "xi", 0.0, "$.geometry"),
                    detail::number_or(gj, "zeta", 0.0, "$.geometry")};
    } else {
      s.geometry = BeamGeometry::gaussian(detail::number_or(doc, "width", 1.0, root));
    }
    s.n0 = detail::number_or(doc, "n0", 0.0, root);
    s.n_thermal = detail::number_or(doc, "n_thermal", 0.0, root);
    s.r = detail::number_or(doc, "r", 0.0, root);
    s.d_n0 = detail::number_or(doc, "d_n0", 0.0, root);
    s.d_n_thermal = detail::number_or(doc, "d_n_thermal", 0.0, root);
    s.d_r = detail::number_or(doc, "d_r", 0.0, root);
    const std::string source = doc.contains("source") ? detail::string_field(doc, "source", root) : "thermal";
    if (source != "thermal" && source != "coherent") fail(ErrorKind::InputError, "$.source: must be thermal or coherent");
    const auto b = mode_encoded_qfi(beam_problem(s, source == "thermal" ? BeamSource::Thermal : BeamSource::Coherent), tol);
    out["result"] = breakdown_json(b, tol.zero);
    if (doc.value("compare", false)) {
      double closed;
      std::string form;
      const BeamScenario explicit_only = [&] { auto c = s; c.d_n_thermal = c.d_r = 0.0; return c; }();
      if (source == "coherent") {
        form = s.r == 0.0 && s.n_thermal == 0.0 ? "coherent" : "coherent-squeezed";
        closed = form == "coherent" ? displacement_qfi_coherent(s) : displacement_qfi_coherent_squeezed(s);
        if (s.n_thermal != 0.0) fail(ErrorKind::InputError, "$.n_thermal: no closed form for coherent beams with a thermal derivative mode");
      } else {
        form = "general";
        closed = displacement_qfi_general(explicit_only);
        if (s.d_n_thermal != 0.0 || s.d_r != 0.0) {
          form += "+parameter-dependent-loss";
          closed += parameter_dependent_loss_term(s);
        }
      }
      out["closed_form"] = Json{{"form", form}, {"value", closed}, {"difference", b.total - closed}};
    }
    return out;
  }
  if (kind == "pulse") {
    const double width = detail::number_or(doc, "width", 1.0, root);
    const PulseScenario s{detail::number_or(doc, "tau", 1.0, root), detail::number_or(doc, "n0", 1.0, root),
                          detail::number_or(doc, "r", 0.0, root), detail::number_or(doc, "phi", 0.0, root)};
    const std::string source = doc.contains("source") ? detail::string_field(doc, "source", root) : "thermal";
    if (source != "thermal" && source != "coherent") fail(ErrorKind::InputError, "$.source: must be thermal or coherent");
    const auto src = source == "thermal" ? PulseSource::Thermal : PulseSource::Coherent;
    const auto b = mode_encoded_qfi(gaussian_pulse_problem(s, src, width), tol);
    out["result"] = breakdown_json(b, tol.zero);
    if (doc.value("compare", false)) {
      const auto c = gaussian_pulse_constants(s.tau, width);
      const double closed = src == PulseSource::Thermal ? pulse_qfi_thermal_squeezed(s.n0, s.r, c) : pulse_qfi_coherent_squeezed(s.n0, s.r, s.phi, c);
      out["closed_form"] = Json{{"form", source == "thermal" ? "thermal-squeezed" : "coherent-squeezed"},
                                {"value", closed},
                                {"difference", b.total - closed}};
    }
    return out;
  }
  fail(ErrorKind::InputError, "$.kind: unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

struct SuiteResult {
  std::string name;
  double residual = 0.0;  ///< largest relative deviation seen
  bool passed = true;
  std::string first_failure;
};

namespace detail {

inline double relative(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b))); }

struct SuiteBuilder {
  SuiteResult r;
  double tol;
  void check(double got, double want, const std::string& where) {
    const double e = relative(got, want);
    r.residual = std::max(r.residual, e);
    if (!(e <= tol) && r.passed) {
      r.passed = false;
      r.first_failure = where + ": got " + format_number(got) + ", expected " + format_number(want);
    }
  }
};

}  // namespace detail

/// Oracle-equivalence and limit suites at reduced density. `inject_fault` perturbs ζ_u of the closed-form
/// pulse constants by 1% to exercise the failure path.
inline std::vector<SuiteResult> selftest(double tol, const Tolerances& tols, bool inject_fault = false) {
  std::vector<SuiteResult> out;
  {
    detail::SuiteBuilder s{{"beam-oracle"}, tol};
    for (double n0 : {0.1, 1.0, 10.0})
      for (double r : {0.0, 0.5, 1.0})
        for (double nt : {0.0, 0.5}) {
          BeamScenario b;
          b.n0 = n0;
          b.r = r;
          b.n_thermal = nt;
          b.d_n0 = 0.3;
          const std::string where = "N0=" + format_number(n0) + " r=" + format_number(r) + " NT=" + format_number(nt);
          s.check(mode_encoded_qfi(beam_problem(b, BeamSource::Thermal), tols).total, displacement_qfi_general(b), where);
        }
    out.push_back(s.r);
  }
  {
    detail::SuiteBuilder s{{"pulse-constants"}, tol};
    const auto shape = gaussian_pulse_shape(1.0);
    for (double tau : {0.5, 1.0, 2.0}) {
      auto c = gaussian_pulse_constants(tau, 1.0);
      if (inject_fault) c.zeta_u *= 1.01;
      const auto q = pulse_mode_constants(shape, tau);
      const std::string where = "tau=" + format_number(tau);
      s.check(c.eta_u, q.eta_u, where + " eta_u");
      s.check(c.eta_v, q.eta_v, where + " eta_v");
      s.check(c.zeta_u, q.zeta_u, where + " zeta_u");
      s.check(c.zeta_v, q.zeta_v, where + " zeta_v");
      s.check(c.xi_u, q.xi_u, where + " xi_u");
    }
    out.push_back(s.r);
  }
  {
    detail::SuiteBuilder s{{"pulse-oracle"}, tol};
    for (double tau : {0.5, 1.0, 2.0})
      for (double r : {0.0, 0.5}) {
        const auto c = gaussian_pulse_constants(tau, 1.0);
        const PulseScenario th{tau, 1.0, r, 0.0};
        s.check(mode_encoded_qfi(gaussian_pulse_problem(th, PulseSource::Thermal), tols).total, pulse_qfi_thermal_squeezed(1.0, r, c),
                "thermal tau=" + format_number(tau) + " r=" + format_number(r));
        const PulseScenario co{tau, 1.0, r, 1.0};
        s.check(mode_encoded_qfi(gaussian_pulse_problem(co, PulseSource::Coherent), tols).total,
                pulse_qfi_coherent_squeezed(1.0, r, 1.0, c), "coherent tau=" + format_number(tau) + " r=" + format_number(r));
      }
    out.push_back(s.r);
  }
  {
    detail::SuiteBuilder s{{"limits"}, std::max(tol, 1e-3)};
    const double dk2 = 0.5;
    for (double r : {0.0, 0.5, 1.0}) {
      s.check(pulse_qfi_thermal_squeezed(1.0, r, gaussian_pulse_constants(1e-3, 1.0)), pulse_limit_small_separation(1.0, dk2),
              "tau=1e-3 r=" + format_number(r));
      s.check(pulse_qfi_thermal_squeezed(1.0, r, gaussian_pulse_constants(10.0, 1.0)), pulse_limit_large_separation(1.0, r, dk2),
              "tau=10 r=" + format_number(r));
    }
    out.push_back(s.r);
  }
  {
    detail::SuiteBuilder s{{"symplectic"}, std::max(tol, 1e-9)};
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + trial % 4;
      const Matrix sym = random_symplectic(n, rng);
      Matrix nu = Matrix::Identity(2 * n, 2 * n);
      for (int k = 0; k < n; ++k) nu(2 * k, 2 * k) = nu(2 * k + 1, 2 * k + 1) = 1.0 + std::abs(normal(rng));
      const Matrix sigma = sym * nu * sym.transpose();
      const auto w = williamson(sigma, tols);
      s.check(1.0 + (w.S * w.nu_matrix() * w.S.transpose() - sigma).norm() / sigma.norm(), 1.0, "trial " + std::to_string(trial));
    }
    out.push_back(s.r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Quantum Fisher information for mode-encoded parameters"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--out", g.out, "output path; a .manifest.json sidecar is written next to it");
  app.add_option("--format", g.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--grid", g.grid, "number of sweep points")->check(CLI::PositiveNumber);
  app.add_option("--tol", g.tol, "comparison tolerance for selftest and dual runs")->check(CLI::PositiveNumber);
  app.add_option("--threads", g.threads, "worker threads for sweeps")->check(CLI::PositiveNumber);

  DisplacementScanOptions dopt;
  auto* dscan = app.add_subcommand("displacement-scan", "QFI of a thermal beam versus squeezing fraction and N1");
  dscan->add_option("--n0", dopt.n0, "comma-separated beam photon numbers");
  dscan->add_option("--chi", dopt.chi, "comma-separated squeezing fractions");
  dscan->add_option("--n1-min", dopt.n1_min, "smallest positive N1");
  dscan->add_option("--n1-max", dopt.n1_max, "largest N1");
  dscan->add_option("--width", dopt.width, "Gaussian beam width");
  dscan->add_option("--engine", dopt.engine, "closed-form or pipeline");

  PulseScanOptions popt;
  auto* pscan = app.add_subcommand("pulse-scan", "QFI of two pulses versus separation");
  pscan->add_option("--r", popt.r, "comma-separated squeezing values");
  pscan->add_option("--sources", popt.sources, "thermal, coherent-in-phase, coherent-out-of-phase");
  pscan->add_option("--n0", popt.n0, "photons per pulse");
  pscan->add_option("--tau-min", popt.tau_min, "smallest tau/w");
  pscan->add_option("--tau-max", popt.tau_max, "largest tau/w");
  pscan->add_option("--width", popt.width, "Gaussian pulse width");
  pscan->add_option("--engine", popt.engine, "closed-form or pipeline");

  std::string scenario;
  auto* eval = app.add_subcommand("qfi-eval", "evaluate one scenario file");
  eval->add_option("scenario", scenario, "scenario JSON file")->required();

  bool inject = false;
  auto* self = app.add_subcommand("selftest", "oracle and limit suites at reduced density");
  self->add_flag("--inject-fault", inject, "corrupt a closed-form pulse constant (test hook)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  const auto started = std::chrono::steady_clock::now();
  RunManifest manifest;
  try {
    if (*dscan) {
      manifest.command = "displacement-scan";
      const Table t = displacement_scan(dopt, g, manifest);
      manifest.scenario_hash = scenario_hash(manifest.parameters);
      emit(t, manifest, g, out, started);
      return kOk;
    }
    if (*pscan) {
      manifest.command = "pulse-scan";
      const Table t = pulse_scan(popt, g, manifest);
      manifest.scenario_hash = scenario_hash(manifest.parameters);
      emit(t, manifest, g, out, started);
      return kOk;
    }
    if (*eval) {
      manifest.command = "qfi-eval";
      std::ifstream f(scenario);
      if (!f) fail(ErrorKind::InputError, "cannot open scenario " + scenario);
      Json doc;
      try {
        doc = Json::parse(f);
      } catch (const Json::parse_error& e) {
        fail(ErrorKind::InputError, std::string("scenario is not valid JSON: ") + e.what());
      }
      const auto slash = scenario.find_last_of('/');
      Json result = qfi_eval(doc, manifest.tolerances, slash == std::string::npos ? "" : scenario.substr(0, slash));
      manifest.parameters = doc;
      manifest.scenario_hash = scenario_hash(doc);
      manifest.comparison_tolerance = g.tol;
      if (result.contains("closed_form")) {
        const double diff = std::abs(result["closed_form"]["difference"].get<double>());
        const double scale = std::max(1.0, std::abs(result["closed_form"]["value"].get<double>()));
        result["closed_form"]["within_tolerance"] = diff <= g.tol * scale;
      }
      manifest.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      result["manifest"] = manifest.to_json();
      const std::string body = result.dump(2) + "\n";
      if (g.out.empty()) {
        out << body;
      } else {
        std::ofstream o(g.out, std::ios::binary);
        if (!o) fail(ErrorKind::InputError, "cannot write " + g.out);
        o << body;
        std::ofstream m(g.out + ".manifest.json", std::ios::binary);
        m << manifest.to_json().dump(2) << "\n";
      }
      return kOk;
    }
    if (*self) {
      const auto suites = selftest(g.tol, manifest.tolerances, inject);
      bool ok = true;
      for (const auto& s : suites) {
        out << (s.passed ? "PASS " : "FAIL ") << s.name << " residual=" << format_number(s.residual) << "\n";
        if (!s.passed && ok) {
          err << "first violated invariant in suite " << s.name << ": " << s.first_failure << "\n";
          ok = false;
        }
      }
      return ok ? kOk : kInvariantFailure;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNumericalError;
  }
  return kInputError;
}

}  // namespace modeqfi::cli
