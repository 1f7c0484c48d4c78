#include "nec/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "nec/errors.hpp"
#include "nec/parallel.hpp"
#include "nec/stability.hpp"

#ifndef NEC_LAB_VERSION
#define NEC_LAB_VERSION "unknown"
#endif

namespace nec {

namespace fs = std::filesystem;
using boost::property_tree::ptree;
using json = nlohmann::json;

namespace {

constexpr std::pair<Task, const char*> kTaskNames[] = {
    {Task::Steady, "steady"},       {Task::Sweep, "sweep"},   {Task::PhaseDiagram, "phase-diagram"},
    {Task::Stability, "stability"}, {Task::Island, "island"}, {Task::Fit, "fit"},
};

constexpr std::pair<InitialState, const char*> kInitialNames[] = {
    {InitialState::Up, "up"}, {InitialState::Down, "down"}, {InitialState::Mixed, "mixed"},
    {InitialState::Random, "random"},
};

constexpr std::pair<HamiltonianKind, const char*> kModelNames[] = {
    {HamiltonianKind::None, "none"}, {HamiltonianKind::XField, "x_field"},
    {HamiltonianKind::Pxp2d, "pxp_2d"}, {HamiltonianKind::PxpNec, "pxp_nec"},
};

template <class E, std::size_t N>
std::optional<E> lookup(const std::pair<E, const char*> (&table)[N], std::string_view name) {
  for (const auto& [value, text] : table) {
    if (name == text) return value;
  }
  return std::nullopt;
}

template <class E, std::size_t N>
std::string choices(const std::pair<E, const char*> (&table)[N]) {
  std::string out;
  for (const auto& [value, text] : table) out += (out.empty() ? "" : "|") + std::string(text);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> to_double(std::string_view s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

template <class I>
std::optional<I> to_integer(std::string_view s) {
  const std::string t = trim(s);
  I v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::string shortest(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Allowed keys per section; "" is the top level.
const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"", {"task", "model", "omega", "omega2", "gamma", "gamma_x", "T", "h", "ell", "prescription", "initial"}},
      {"sweep", {"T", "dh"}},
      {"stability", {"k_points", "ky", "backaction", "phase_scale"}},
      {"island", {"L", "ell_down", "island", "boundary", "stride", "map_count", "eps"}},
      {"fit", {"kind", "input", "threshold", "min_r2"}},
      {"integrator", {"rtol", "atol", "dt_initial", "dt_min", "dt_max", "tol", "t_max", "window"}},
      {"run", {"threads", "out", "seed"}},
  };
  return s;
}

class SchemaReader {
 public:
  explicit SchemaReader(const ptree& root) : root_(root) {}

  std::vector<std::string> problems;

  void check_unknown() {
    for (const auto& [name, node] : root_) {
      const bool is_section = schema().count(name) && name != "" && (!node.empty() || node.data().empty());
      if (is_section) {
        const auto& keys = schema().at(name);
        for (const auto& [key, leaf] : node) {
          if (!keys.count(key)) problems.push_back(name + "." + key + ": unknown key");
        }
      } else if (!schema().at("").count(name)) {
        problems.push_back(name + ": unknown " + (node.empty() ? "key" : "section"));
      }
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const ptree* node = &root_;
    if (!section.empty()) {
      const auto it = root_.find(section);
      if (it == root_.not_found()) return std::nullopt;
      node = &it->second;
    }
    const auto it = node->find(key);
    if (it == node->not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  static std::string path(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
  }

  void read(const std::string& section, const std::string& key, double& out) {
    if (auto s = raw(section, key)) {
      if (auto v = to_double(*s)) out = *v;
      else problems.push_back(path(section, key) + ": expected a number, got '" + *s + "'");
    }
  }

  template <class I>
    requires std::is_integral_v<I>
  void read(const std::string& section, const std::string& key, I& out) {
    if (auto s = raw(section, key)) {
      if (auto v = to_integer<I>(*s)) out = *v;
      else problems.push_back(path(section, key) + ": expected an integer, got '" + *s + "'");
    }
  }

  void read(const std::string& section, const std::string& key, bool& out) {
    if (auto s = raw(section, key)) {
      if (*s == "true" || *s == "yes" || *s == "1") out = true;
      else if (*s == "false" || *s == "no" || *s == "0") out = false;
      else problems.push_back(path(section, key) + ": expected true or false, got '" + *s + "'");
    }
  }

  void read(const std::string& section, const std::string& key, std::string& out) {
    if (auto s = raw(section, key)) out = *s;
  }

  template <class E, std::size_t N>
  void read_enum(const std::string& section, const std::string& key, const std::pair<E, const char*> (&table)[N],
                 E& out) {
    if (auto s = raw(section, key)) {
      if (auto v = lookup(table, *s)) out = *v;
      else problems.push_back(path(section, key) + ": expected " + choices(table) + ", got '" + *s + "'");
    }
  }

  void require(bool ok, const std::string& where, const std::string& message) {
    if (!ok) problems.push_back(where + ": " + message);
  }

 private:
  const ptree& root_;
};

constexpr std::pair<Prescription, const char*> kPrescriptionNames[] = {
    {Prescription::Trace, "trace"}, {Prescription::Factorized, "factorized"},
};
constexpr std::pair<LatticeBoundary, const char*> kBoundaryNames[] = {
    {LatticeBoundary::Periodic, "periodic"}, {LatticeBoundary::Open, "open"},
};

}  // namespace

const char* to_string(Task task) {
  for (const auto& [value, text] : kTaskNames) {
    if (value == task) return text;
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (auto t = lookup(kTaskNames, name)) return *t;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

const char* to_string(InitialState s) {
  for (const auto& [value, text] : kInitialNames) {
    if (value == s) return text;
  }
  return "?";
}

std::vector<double> parse_grid(std::string_view text) {
  const std::string t = trim(text);
  if (t.find(':') != std::string::npos) {
    const auto parts = split(t, ':');
    if (parts.size() != 3) throw std::invalid_argument("range must be first:last:step");
    const auto a = to_double(parts[0]), b = to_double(parts[1]), step = to_double(parts[2]);
    if (!a || !b || !step || *step <= 0.0 || *b < *a) throw std::invalid_argument("bad range '" + t + "'");
    const double count = (*b - *a) / *step;
    const long n = std::lround(count);
    if (std::abs(count - static_cast<double>(n)) > 1e-9) throw std::invalid_argument("step does not divide the range");
    std::vector<double> out;
    for (long i = 0; i <= n; ++i) out.push_back(*a + static_cast<double>(i) * *step);
    return out;
  }
  std::vector<double> out;
  for (const auto& item : split(t, ',')) {
    const auto v = to_double(item);
    if (!v) throw std::invalid_argument("bad grid value '" + item + "'");
    out.push_back(*v);
  }
  return out;
}

RunConfig parse_config(std::string_view text, const ConfigOverrides& overrides) {
  ptree root;
  std::vector<std::string> problems;
  try {
    std::istringstream in{std::string(text)};
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw SchemaError({"line " + std::to_string(e.line()) + ": " + e.message()});
  }

  SchemaReader r(root);
  r.check_unknown();
  RunConfig c;

  std::optional<Task> file_task;
  if (auto s = r.raw("", "task")) {
    if (auto t = lookup(kTaskNames, *s)) file_task = *t;
    else r.problems.push_back("task: expected " + choices(kTaskNames) + ", got '" + *s + "'");
  }
  if (overrides.task && file_task && *overrides.task != *file_task) {
    r.problems.push_back(std::string("task: file requests '") + to_string(*file_task) + "' but the command is '" +
                         to_string(*overrides.task) + "'");
  }
  c.task = overrides.task ? *overrides.task : file_task.value_or(Task::Steady);

  auto kind = HamiltonianKind::PxpNec;
  r.read_enum("", "model", kModelNames, kind);
  double omega = 0.1, gamma_x = 0.0;
  r.read("", "omega", omega);
  double omega2 = omega;
  r.read("", "omega2", omega2);
  r.read("", "gamma_x", gamma_x);
  switch (kind) {
    case HamiltonianKind::None: c.model.hamiltonian = HamiltonianSpec::none(); break;
    case HamiltonianKind::XField: c.model.hamiltonian = HamiltonianSpec::x_field(omega); break;
    case HamiltonianKind::Pxp2d: c.model.hamiltonian = HamiltonianSpec::pxp_2d(omega); break;
    case HamiltonianKind::PxpNec: c.model.hamiltonian = HamiltonianSpec::pxp_nec(omega); break;
  }
  if (kind == HamiltonianKind::Pxp2d || kind == HamiltonianKind::PxpNec) c.model.hamiltonian.omega2 = omega2;
  else r.require(!r.raw("", "omega2"), "omega2", "only the pxp models take a second amplitude");
  c.model.hamiltonian.gamma_x = gamma_x;

  r.read("", "gamma", c.model.gamma);
  r.read("", "T", c.T);
  r.read("", "h", c.h);
  r.read("", "ell", c.model.ell);
  r.read_enum("", "prescription", kPrescriptionNames, c.model.prescription);
  if (overrides.prescription) c.model.prescription = *overrides.prescription;
  r.read_enum("", "initial", kInitialNames, c.initial);

  c.T_grid = {c.T};
  const auto sweep_T = r.raw("sweep", "T");
  if (auto s = sweep_T) {
    try {
      c.T_grid = parse_grid(*s);
    } catch (const std::invalid_argument& e) {
      r.problems.push_back(std::string("sweep.T: ") + e.what());
    }
  }
  r.read("sweep", "dh", c.dh);

  r.read("stability", "k_points", c.k_points);
  if (auto s = r.raw("stability", "ky")) {
    if (*s == "grid") c.full_grid = true;
    else if (*s == "zero") c.full_grid = false;
    else r.problems.push_back("stability.ky: expected grid|zero, got '" + *s + "'");
  }
  r.read("stability", "backaction", c.backaction);
  r.read("stability", "phase_scale", c.phase_scale);

  r.read("island", "L", c.L);
  if (auto s = r.raw("island", "ell_down")) {
    c.ell_down.clear();
    for (const auto& item : split(*s, ',')) {
      if (auto v = to_integer<int>(item)) c.ell_down.push_back(*v);
      else r.problems.push_back("island.ell_down: bad size '" + item + "'");
    }
  }
  if (auto s = r.raw("island", "island")) {
    if (*s == "down") c.island_up = false;
    else if (*s == "up") c.island_up = true;
    else r.problems.push_back("island.island: expected down|up, got '" + *s + "'");
  }
  r.read_enum("island", "boundary", kBoundaryNames, c.boundary);
  r.read("island", "stride", c.stride);
  r.read("island", "map_count", c.map_count);
  r.read("island", "eps", c.eps);

  r.read("fit", "kind", c.fit_kind);
  r.read("fit", "input", c.fit_input);
  r.read("fit", "threshold", c.threshold);
  r.read("fit", "min_r2", c.min_r2);

  auto& integ = c.model.steady.integrator;
  r.read("integrator", "rtol", integ.rtol);
  r.read("integrator", "atol", integ.atol);
  r.read("integrator", "dt_initial", integ.dt_initial);
  r.read("integrator", "dt_min", integ.dt_min);
  r.read("integrator", "dt_max", integ.dt_max);
  r.read("integrator", "tol", c.model.steady.tol);
  r.read("integrator", "t_max", c.model.steady.t_max);
  r.read("integrator", "window", c.model.steady.window);

  r.read("run", "threads", c.threads);
  r.read("run", "out", c.out);
  r.read("run", "seed", c.seed);
  if (overrides.threads) c.threads = *overrides.threads;
  if (overrides.out) c.out = *overrides.out;

  // Semantic checks, after every field has been read.
  r.require(c.model.gamma > 0.0, "gamma", "must be positive");
  r.require(c.T >= 0.0, "T", "must be non-negative (wrong-move rates are proportional to T)");
  r.require(std::abs(c.h) <= 1.0, "h", "must lie in [-1, 1]");
  r.require(c.T * (1.0 + std::abs(c.h)) <= 2.0, "T",
            "wrong-move rate T (1 + |h|) / 2 exceeds gamma");
  r.require(gamma_x >= 0.0, "gamma_x", "must be non-negative");
  r.require(c.model.ell >= 1 && c.model.ell <= 3, "ell", "must be 1, 2 or 3");
  if (c.task == Task::Stability) {
    r.require(c.model.ell <= 2, "ell", "the dense Bloch matrix is capped at ell = 2");
  }
  if (sweep_T) {
    for (double T : c.T_grid) r.require(T >= 0.0 && T <= 1.0, "sweep.T", "every value must lie in [0, 1]");
  }
  try {
    (void)h_grid(c.dh);
  } catch (const std::invalid_argument& e) {
    r.problems.push_back(std::string("sweep.dh: ") + e.what());
  }
  r.require(c.k_points >= 1, "stability.k_points", "must be positive");
  r.require(c.phase_scale >= 1, "stability.phase_scale", "must be positive");
  // Commensurability depends on ell, so it is only enforced for island runs.
  if (c.task == Task::Island) {
    r.require(c.L > 0 && c.model.ell > 0 && c.L % c.model.ell == 0, "island.L", "must be a positive multiple of ell");
    for (int ld : c.ell_down) {
      r.require(ld >= 0 && ld <= c.L && c.model.ell > 0 && ld % c.model.ell == 0, "island.ell_down",
                "sizes must be multiples of ell in [0, L]");
    }
  }
  r.require(!c.ell_down.empty(), "island.ell_down", "needs at least one size");
  r.require(c.stride > 0.0, "island.stride", "must be positive");
  r.require(c.map_count >= 0, "island.map_count", "must be non-negative");
  r.require(c.eps > 0.0, "island.eps", "must be positive");
  r.require(c.fit_kind == "boundary" || c.fit_kind == "velocity", "fit.kind", "expected boundary|velocity");
  if (c.task == Task::Fit) r.require(!c.fit_input.empty(), "fit.input", "required by the fit task");
  r.require(c.threshold > 0.0, "fit.threshold", "must be positive");
  r.require(c.min_r2 > 0.0 && c.min_r2 <= 1.0, "fit.min_r2", "must lie in (0, 1]");
  r.require(integ.rtol > 0.0 && integ.atol > 0.0, "integrator.rtol", "tolerances must be positive");
  r.require(integ.dt_min > 0.0 && integ.dt_min <= integ.dt_initial && integ.dt_initial <= integ.dt_max,
            "integrator.dt_initial", "need 0 < dt_min <= dt_initial <= dt_max");
  r.require(c.model.steady.tol > 0.0, "integrator.tol", "must be positive");
  r.require(c.model.steady.t_max > 0.0, "integrator.t_max", "must be positive");
  r.require(c.model.steady.window >= 1, "integrator.window", "must be at least 1");
  r.require(c.threads >= 0, "run.threads", "must be non-negative (0 means automatic)");
  r.require(!c.out.empty(), "run.out", "must not be empty");

  if (!r.problems.empty()) throw SchemaError(std::move(r.problems));
  return c;
}

std::string resolved_config_text(const RunConfig& c) {
  std::ostringstream o;
  const auto& hs = c.model.hamiltonian;
  o << "task = " << to_string(c.task) << '\n';
  o << "model = " << to_string(hs.kind) << '\n';
  o << "omega = " << shortest(hs.amplitude()) << '\n';
  if (hs.kind == HamiltonianKind::Pxp2d || hs.kind == HamiltonianKind::PxpNec) {
    o << "omega2 = " << shortest(hs.omega2) << '\n';
  }
  o << "gamma = " << shortest(c.model.gamma) << '\n';
  o << "gamma_x = " << shortest(hs.gamma_x) << '\n';
  o << "T = " << shortest(c.T) << '\n';
  o << "h = " << shortest(c.h) << '\n';
  o << "ell = " << c.model.ell << '\n';
  o << "prescription = " << to_string(c.model.prescription) << '\n';
  o << "initial = " << to_string(c.initial) << '\n';

  o << "\n[sweep]\nT = ";
  for (std::size_t i = 0; i < c.T_grid.size(); ++i) o << (i ? "," : "") << shortest(c.T_grid[i]);
  o << "\ndh = " << shortest(c.dh) << '\n';

  o << "\n[stability]\n";
  o << "k_points = " << c.k_points << '\n';
  o << "ky = " << (c.full_grid ? "grid" : "zero") << '\n';
  o << "backaction = " << (c.backaction ? "true" : "false") << '\n';
  o << "phase_scale = " << c.phase_scale << '\n';

  o << "\n[island]\n";
  o << "L = " << c.L << '\n';
  o << "ell_down = ";
  for (std::size_t i = 0; i < c.ell_down.size(); ++i) o << (i ? "," : "") << c.ell_down[i];
  o << "\nisland = " << (c.island_up ? "up" : "down") << '\n';
  o << "boundary = " << to_string(c.boundary) << '\n';
  o << "stride = " << shortest(c.stride) << '\n';
  o << "map_count = " << c.map_count << '\n';
  o << "eps = " << shortest(c.eps) << '\n';

  o << "\n[fit]\n";
  o << "kind = " << c.fit_kind << '\n';
  if (!c.fit_input.empty()) o << "input = " << c.fit_input << '\n';
  o << "threshold = " << shortest(c.threshold) << '\n';
  o << "min_r2 = " << shortest(c.min_r2) << '\n';

  const auto& integ = c.model.steady.integrator;
  o << "\n[integrator]\n";
  o << "rtol = " << shortest(integ.rtol) << '\n';
  o << "atol = " << shortest(integ.atol) << '\n';
  o << "dt_initial = " << shortest(integ.dt_initial) << '\n';
  o << "dt_min = " << shortest(integ.dt_min) << '\n';
  o << "dt_max = " << shortest(integ.dt_max) << '\n';
  o << "tol = " << shortest(c.model.steady.tol) << '\n';
  o << "t_max = " << shortest(c.model.steady.t_max) << '\n';
  o << "window = " << c.model.steady.window << '\n';

  o << "\n[run]\n";
  o << "threads = " << c.threads << '\n';
  o << "out = " << c.out << '\n';
  o << "seed = " << c.seed << '\n';
  return o.str();
}

std::string config_hash(const RunConfig& config) {
  // Thread count and output directory change no number, so they are
  // normalized away before hashing.
  RunConfig normalized = config;
  normalized.threads = 0;
  normalized.out = "-";
  const std::string text = resolved_config_text(normalized);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV input

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }

  double number(std::size_t row, std::size_t col) const {
    const auto v = to_double(rows[row][col]);
    if (!v) throw std::runtime_error("bad number '" + rows[row][col] + "' in column '" + header[col] + "'");
    return *v;
  }
};

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV input");
  t.header = split(line, ',');
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto row = split(line, ',');
    if (row.size() != t.header.size()) throw std::runtime_error("ragged CSV row: " + line);
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable read_csv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in);
}

}  // namespace

PhaseDiagram read_phase_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const auto cT = t.column("T"), ch = t.column("h"), cf = t.column("mz_fwd"), cb = t.column("mz_bwd"),
             cd = t.column("dmz"), cc = t.column("converged");
  std::map<double, std::map<double, std::size_t>> grid;
  for (std::size_t i = 0; i < t.rows.size(); ++i) grid[t.number(i, cT)][t.number(i, ch)] = i;
  PhaseDiagram d;
  for (const auto& [T, row] : grid) {
    std::vector<double> hs;
    for (const auto& [h, i] : row) hs.push_back(h);
    if (d.h.empty()) d.h = hs;
    if (hs != d.h) throw std::runtime_error("phase CSV rows do not share one h grid");
    d.T.push_back(T);
    HysteresisResult r;
    r.T = T;
    r.h = hs;
    for (const auto& [h, i] : row) {
      r.m_forward.push_back(t.number(i, cf));
      r.m_backward.push_back(t.number(i, cb));
      r.dm.push_back(t.number(i, cd));
      r.converged.push_back(t.number(i, cc) != 0.0);
    }
    d.rows.push_back(std::move(r));
  }
  if (d.rows.empty()) throw std::runtime_error("phase CSV has no rows");
  return d;
}

// ---------------------------------------------------------------------------
// Running

namespace {

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const SchemaError*>(&e)) return "SchemaError";
  if (dynamic_cast<const RateOutOfRange*>(&e)) return "RateOutOfRange";
  if (dynamic_cast<const CapExceeded*>(&e)) return "CapExceeded";
  if (dynamic_cast<const NegativeRate*>(&e)) return "NegativeRate";
  if (dynamic_cast<const StepUnderflow*>(&e)) return "StepUnderflow";
  if (dynamic_cast<const InsufficientBoundary*>(&e)) return "InsufficientBoundary";
  if (dynamic_cast<const IncommensurateIsland*>(&e)) return "IncommensurateIsland";
  if (dynamic_cast<const NotConverged*>(&e)) return "NotConverged";
  if (dynamic_cast<const NonLinearRegime*>(&e)) return "NonLinearRegime";
  if (dynamic_cast<const WindowTooWide*>(&e)) return "WindowTooWide";
  if (dynamic_cast<const Unclassified*>(&e)) return "Unclassified";
  if (dynamic_cast<const NecError*>(&e)) return "NecError";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "InvalidArgument";
  return "RuntimeError";
}

Matrix seed_state(const RunConfig& c, const ClusterGeometry& g) {
  switch (c.initial) {
    case InitialState::Up: return all_up(g);
    case InitialState::Down: return all_down(g);
    case InitialState::Mixed: return maximally_mixed(g);
    case InitialState::Random: {
      std::mt19937_64 rng(c.seed);
      std::normal_distribution<double> normal;
      Matrix a(g.dim(), g.dim());
      for (Index j = 0; j < a.cols(); ++j) {
        for (Index i = 0; i < a.rows(); ++i) a(i, j) = Complex(normal(rng), normal(rng));
      }
      Matrix rho = a * a.adjoint();
      return rho / rho.trace();
    }
  }
  return all_up(g);
}

/// Owns the output directory; every file goes through it so the manifest
/// lists exactly what was written.
class OutputSink {
 public:
  explicit OutputSink(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::ofstream open(const std::string& name) {
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    fs::create_directories((dir_ / name).parent_path());
    std::ofstream out(dir_ / name);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    return out;
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

struct TaskOutcome {
  json convergence = json::object();
  json results = json::object();
};

void write_header(std::ostream& out, std::initializer_list<const char*> columns) {
  bool first = true;
  for (const char* c : columns) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  out << '\n';
}

TaskOutcome run_steady(const RunConfig& c, OutputSink& sink) {
  const auto set = operator_set_at(c.model, c.T, c.h);
  const auto res = ti_evolve(set, seed_state(c, set.geometry), c.model.prescription, c.model.steady);
  const double m = magnetization(res.state);
  auto out = sink.open("steady.csv");
  out.precision(12);
  write_header(out, {"model", "ell", "omega", "T", "h", "prescription", "initial", "mz", "converged", "time",
                     "residual", "min_eigenvalue"});
  out << to_string(c.model.hamiltonian.kind) << ',' << c.model.ell << ',' << c.model.hamiltonian.amplitude() << ','
      << c.T << ',' << c.h << ',' << to_string(c.model.prescription) << ',' << to_string(c.initial) << ',' << m
      << ',' << (res.converged ? 1 : 0) << ',' << res.time << ',' << res.residual << ',' << res.min_eigenvalue
      << '\n';
  TaskOutcome o;
  o.convergence["steady"] = res.converged;
  o.results["mz"] = m;
  o.results["negativity_warning"] = res.negativity_warning;
  return o;
}

PhaseDiagram sweep_to(const RunConfig& c, OutputSink& sink, TaskOutcome& o, std::ostream& log) {
  const int threads = resolve_threads(c.threads);
  const std::size_t n = c.T_grid.size();
  auto out = sink.open("phase.csv");
  write_phase_header(out);
  out.flush();

  // Rows finish out of order; the writer emits the completed prefix so the
  // file is always a valid, ordered partial result.
  std::mutex mutex;
  std::vector<std::optional<HysteresisResult>> done(n);
  std::size_t next = 0;
  parallel_for(n, threads, [&](std::size_t i) {
    HysteresisResult row = hysteresis(c.model, c.T_grid[i], c.dh);
    const std::lock_guard lock(mutex);
    done[i] = std::move(row);
    while (next < n && done[next]) {
      write_phase_rows(out, c.model, *done[next]);
      out.flush();
      log << "T = " << done[next]->T << " done\n";
      ++next;
    }
  });

  PhaseDiagram d;
  d.T = c.T_grid;
  d.h = h_grid(c.dh);
  std::size_t unconverged = 0;
  for (auto& row : done) {
    unconverged += static_cast<std::size_t>(std::count(row->converged.begin(), row->converged.end(), false));
    d.rows.push_back(std::move(*row));
  }
  o.convergence["sweep"] = unconverged == 0;
  o.results["unconverged_points"] = unconverged;
  return d;
}

void write_boundary(const PhaseDiagram& d, const RunConfig& c, OutputSink& sink, TaskOutcome& o) {
  const auto points = detect_boundary(d, c.threshold);
  {
    auto out = sink.open("boundary.csv");
    out.precision(12);
    write_header(out, {"h", "T_c"});
    for (const auto& p : points) out << p.h << ',' << p.T << '\n';
  }

  // The configured threshold first, then neighbors to expose sensitivity.
  std::vector<double> thresholds{c.threshold};
  for (double t : {0.02, 0.05, 0.1}) {
    if (std::abs(t - c.threshold) > 1e-12) thresholds.push_back(t);
  }
  auto out = sink.open("critical_fit.csv");
  out.precision(12);
  write_header(out, {"threshold", "points", "T_star", "T_star_error", "R", "R_error", "Tc0", "residual", "status"});
  json sensitivity = json::array();
  for (double t : thresholds) {
    const auto pts = detect_boundary(d, t);
    out << t << ',' << pts.size() << ',';
    try {
      const auto fit = fit_boundary(pts);
      out << fit.T_star << ',' << fit.T_star_error << ',' << fit.R << ',' << fit.R_error() << ',' << fit.Tc(0.0)
          << ',' << fit.residual << ",ok\n";
      sensitivity.push_back({{"threshold", t}, {"T_star", fit.T_star}, {"R", fit.R}});
      if (t == c.threshold) {
        o.results["T_star"] = fit.T_star;
        o.results["R"] = fit.R;
        o.results["Tc0"] = fit.Tc(0.0);
      }
    } catch (const InsufficientBoundary& e) {
      out << "nan,nan,nan,nan,nan,nan,InsufficientBoundary\n";
      sensitivity.push_back({{"threshold", t}, {"error", e.what()}});
    }
  }
  o.results["threshold_sensitivity"] = sensitivity;
}

TaskOutcome run_sweep(const RunConfig& c, OutputSink& sink, std::ostream& log, bool fit) {
  TaskOutcome o;
  const PhaseDiagram d = sweep_to(c, sink, o, log);
  if (fit) write_boundary(d, c, sink, o);
  return o;
}

TaskOutcome run_stability(const RunConfig& c, OutputSink& sink, std::ostream& log) {
  const auto set = operator_set_at(c.model, c.T, c.h);
  const auto res = ti_evolve(set, seed_state(c, set.geometry), c.model.prescription, c.model.steady);
  log << "steady state m_z = " << magnetization(res.state) << (res.converged ? "" : " (not converged)") << '\n';
  BlochOptions options;
  options.include_backaction = c.backaction;
  options.phase_scale = c.phase_scale;
  const auto bloch = build_bloch(res.state, set, c.model.prescription, options);
  const auto kx = k_grid(c.model.ell, c.k_points);
  const std::vector<double> ky = c.full_grid ? kx : std::vector<double>{0.0};
  const auto table = mu_table(bloch, kx, ky, resolve_threads(c.threads));
  {
    auto out = sink.open("mu.csv");
    write_mu_csv(out, table);
  }
  const auto best = std::max_element(table.mu.begin(), table.mu.end());
  const auto i = static_cast<std::size_t>(best - table.mu.begin());
  TaskOutcome o;
  o.convergence["steady"] = res.converged;
  o.results["mz"] = magnetization(res.state);
  o.results["mu_max"] = *best;
  o.results["kx_at_max"] = table.kx[i % table.kx.size()];
  o.results["ky_at_max"] = table.ky[i / table.kx.size()];
  return o;
}

TaskOutcome run_island(const RunConfig& c, OutputSink& sink, std::ostream& log) {
  const auto set = operator_set_at(c.model, c.T, c.h);
  IslandOptions options;
  options.steady = c.model.steady;
  options.stride = c.stride;
  options.map_count = c.map_count;
  options.threads = resolve_threads(c.threads);

  // The uniform background is always run: it is the tau baseline.
  std::vector<int> sizes = c.ell_down;
  if (std::find(sizes.begin(), sizes.end(), 0) == sizes.end()) sizes.insert(sizes.begin(), 0);

  TaskOutcome o;
  std::vector<double> tau(sizes.size(), std::nan(""));
  std::vector<double> final_mz(sizes.size());
  std::vector<bool> converged(sizes.size());
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const int ld = sizes[s];
    const auto initial = init_island(c.L, c.model.ell, {ld, c.island_up}, c.boundary);
    const auto traj = evolve_island(initial, set, c.model.prescription, options);
    const std::string stem = "ld" + std::to_string(ld);
    {
      auto out = sink.open("trajectory_" + stem + ".csv");
      out.precision(12);
      write_header(out, {"t", "mz_global"});
      for (std::size_t k = 0; k < traj.t.size(); ++k) out << traj.t[k] << ',' << traj.mz[k] << '\n';
    }
    for (std::size_t k = 0; k < traj.maps.size(); ++k) {
      auto out = sink.open("maps/" + stem + "_" + std::to_string(k) + ".csv");
      out.precision(12);
      out << "# t = " << traj.maps[k].t << '\n';
      write_header(out, {"cx", "cy", "mz_cluster"});
      const int nx = initial.nx;
      for (std::size_t cl = 0; cl < traj.maps[k].mz.size(); ++cl) {
        out << static_cast<int>(cl) % nx << ',' << static_cast<int>(cl) / nx << ',' << traj.maps[k].mz[cl] << '\n';
      }
    }
    final_mz[s] = traj.mz.back();
    converged[s] = traj.converged;
    if (traj.converged) tau[s] = relaxation_time(traj, c.eps);
    o.convergence["island_" + stem] = traj.converged;
    log << "ell_down = " << ld << ": final m_z " << final_mz[s] << ", tau " << tau[s] << '\n';
  }

  auto out = sink.open("tau.csv");
  out.precision(12);
  write_header(out, {"ell_down", "tau", "tau_rel", "final_mz", "converged"});
  const double baseline = tau[0];
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    out << sizes[s] << ',' << tau[s] << ',' << tau[s] - baseline << ',' << final_mz[s] << ','
        << (converged[s] ? 1 : 0) << '\n';
  }
  return o;
}

TaskOutcome run_fit(const RunConfig& c, OutputSink& sink) {
  TaskOutcome o;
  if (c.fit_kind == "boundary") {
    std::ifstream in(c.fit_input);
    if (!in) throw std::runtime_error("cannot open " + c.fit_input);
    const PhaseDiagram d = read_phase_csv(in);
    std::size_t unconverged = 0;
    for (const auto& row : d.rows) {
      unconverged += static_cast<std::size_t>(std::count(row.converged.begin(), row.converged.end(), false));
    }
    o.convergence["input"] = unconverged == 0;
    write_boundary(d, c, sink, o);
    return o;
  }

  const CsvTable t = read_csv_file(c.fit_input);
  const auto cl = t.column("ell_down"), ct = t.column("tau"), cc = t.column("converged");
  std::vector<double> sizes, tau;
  bool all_converged = true;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.number(i, cl) <= 0.0) continue;
    all_converged = all_converged && t.number(i, cc) != 0.0;
    sizes.push_back(t.number(i, cl));
    tau.push_back(t.number(i, ct));
  }
  o.convergence["input"] = all_converged;
  if (!all_converged) throw NotConverged("tau table contains unconverged trajectories");
  const auto fit = fit_velocity(sizes, tau, c.min_r2);
  auto out = sink.open("velocity.csv");
  out.precision(12);
  write_header(out, {"v", "slope", "slope_error", "intercept", "intercept_error", "r2", "points"});
  out << fit.v << ',' << fit.line.slope << ',' << fit.line.slope_error << ',' << fit.line.intercept << ','
      << fit.line.intercept_error << ',' << fit.line.r2 << ',' << sizes.size() << '\n';
  o.results["v"] = fit.v;
  return o;
}

}  // namespace

std::string error_report(const std::exception& e) {
  json report{{"status", "error"}, {"type", error_type(e)}, {"message", e.what()}};
  if (const auto* schema = dynamic_cast<const SchemaError*>(&e)) report["problems"] = schema->problems();
  return report.dump(2);
}

RunResult run(const RunConfig& c, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  fs::path dir(c.out);
  try {
    OutputSink sink(dir);
    {
      auto echo = sink.open("config.resolved.ini");
      echo << resolved_config_text(c);
    }
    TaskOutcome o;
    switch (c.task) {
      case Task::Steady: o = run_steady(c, sink); break;
      case Task::Sweep: o = run_sweep(c, sink, log, false); break;
      case Task::PhaseDiagram: o = run_sweep(c, sink, log, true); break;
      case Task::Stability: o = run_stability(c, sink, log); break;
      case Task::Island: o = run_island(c, sink, log); break;
      case Task::Fit: o = run_fit(c, sink); break;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json manifest{
        {"code_version", NEC_LAB_VERSION},
        {"config_hash", config_hash(c)},
        {"task", to_string(c.task)},
        {"prescription", to_string(c.model.prescription)},
        {"threads", resolve_threads(c.threads)},
        {"wall_time_s", wall},
        {"resolved_config", "config.resolved.ini"},
        {"outputs", sink.files()},
        {"convergence", o.convergence},
        {"results", o.results},
    };
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    result.outputs = sink.files();
    result.outputs.push_back("manifest.json");
  } catch (const std::exception& e) {
    const std::string report = error_report(e);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!ec) std::ofstream(dir / "error.json") << report << '\n';
    log << report << '\n';
    result.exit_code = dynamic_cast<const SchemaError*>(&e) ? 2 : 1;
    result.outputs = {"error.json"};
  }
  return result;
}

}  // namespace nec
