#include "nec/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <Eigen/Dense>

#include "nec/errors.hpp"
#include "nec/parallel.hpp"

namespace nec {

ClusterOperatorSet operator_set_at(const ModelConfig& model, double T, double h) {
  return build_operator_set(ClusterGeometry(model.ell), build_rates(model.gamma, T, h), model.hamiltonian);
}

std::vector<double> h_grid(double dh) {
  const double steps = 2.0 / dh;
  const long n = std::lround(steps);
  if (dh <= 0.0 || n < 1 || std::abs(steps - static_cast<double>(n)) > 1e-9) {
    throw std::invalid_argument("dh must divide 2");
  }
  std::vector<double> h(static_cast<std::size_t>(n + 1));
  // Built from integers so the grid is symmetric and hits 0 exactly.
  for (long i = 0; i <= n; ++i) h[static_cast<std::size_t>(i)] = static_cast<double>(2 * i - n) / static_cast<double>(n);
  return h;
}

HysteresisResult hysteresis(const ModelConfig& model, double T, double dh) {
  const ClusterGeometry g(model.ell);
  HysteresisResult r;
  r.T = T;
  r.h = h_grid(dh);
  const std::size_t n = r.h.size();
  r.m_forward.resize(n);
  r.m_backward.resize(n);
  r.dm.resize(n);
  r.converged.assign(n, true);

  auto branch = [&](Matrix seed, bool forward, std::vector<double>& m) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = forward ? k : n - 1 - k;
      const auto set = operator_set_at(model, T, r.h[i]);
      auto result = ti_evolve(set, seed, model.prescription, model.steady);
      m[i] = magnetization(result.state);
      if (!result.converged) r.converged[i] = false;
      seed = std::move(result.state);
    }
  };
  branch(all_up(g), true, r.m_forward);
  branch(all_down(g), false, r.m_backward);
  for (std::size_t i = 0; i < n; ++i) r.dm[i] = std::abs(r.m_forward[i] - r.m_backward[i]);
  return r;
}

PhaseDiagram phase_diagram(const ModelConfig& model, std::span<const double> T_grid, double dh, int threads) {
  PhaseDiagram d;
  d.T.assign(T_grid.begin(), T_grid.end());
  d.h = h_grid(dh);
  d.rows = parallel_map<HysteresisResult>(d.T.size(), threads,
                                          [&](std::size_t i) { return hysteresis(model, d.T[i], dh); });
  return d;
}

void write_phase_header(std::ostream& out) { out << "model,ell,omega,T,h,mz_fwd,mz_bwd,dmz,converged\n"; }

void write_phase_rows(std::ostream& out, const ModelConfig& model, const HysteresisResult& row) {
  const auto precision = out.precision(12);
  for (std::size_t i = 0; i < row.h.size(); ++i) {
    out << to_string(model.hamiltonian.kind) << ',' << model.ell << ',' << model.hamiltonian.amplitude() << ','
        << row.T << ',' << row.h[i] << ',' << row.m_forward[i] << ',' << row.m_backward[i] << ',' << row.dm[i] << ','
        << (row.converged[i] ? 1 : 0) << '\n';
  }
  out.precision(precision);
}

void write_phase_csv(std::ostream& out, const ModelConfig& model, const PhaseDiagram& d) {
  write_phase_header(out);
  for (const auto& row : d.rows) write_phase_rows(out, model, row);
}

std::vector<BoundaryPoint> detect_boundary(const PhaseDiagram& d, double threshold) {
  std::vector<BoundaryPoint> points;
  for (std::size_t j = 0; j < d.h.size(); ++j) {
    std::ptrdiff_t last = -1;
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
      if (d.rows[i].dm[j] > threshold) last = static_cast<std::ptrdiff_t>(i);
    }
    if (last < 0 || last + 1 >= static_cast<std::ptrdiff_t>(d.rows.size())) continue;
    const auto i = static_cast<std::size_t>(last);
    points.push_back({d.h[j], 0.5 * (d.T[i] + d.T[i + 1])});
  }
  return points;
}

CriticalFit fit_boundary(std::span<const BoundaryPoint> points) {
  if (points.size() < 4) {
    throw InsufficientBoundary("need at least 4 boundary points, got " + std::to_string(points.size()));
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = 1.0 - std::abs(points[static_cast<std::size_t>(i)].h);
    a(i, 0) = x * x;
    a(i, 1) = 1.0;
    b(i) = points[static_cast<std::size_t>(i)].T;
  }
  const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(b);
  if (!(coef(0) > 0.0)) throw InsufficientBoundary("boundary points do not bend toward |h| = 0");

  CriticalFit fit;
  fit.R = std::sqrt(coef(0));
  fit.T_star = coef(1);
  fit.points = points.size();
  const Eigen::VectorXd res = a * coef - b;
  fit.residual = std::sqrt(res.squaredNorm() / static_cast<double>(n));
  if (n > 2) {
    const double sigma2 = res.squaredNorm() / static_cast<double>(n - 2);
    const Eigen::Matrix2d cov = sigma2 * (a.transpose() * a).inverse();
    fit.slope_error = std::sqrt(cov(0, 0));
    fit.T_star_error = std::sqrt(cov(1, 1));
  }
  return fit;
}

const char* to_string(TransitionOrder order) {
  return order == TransitionOrder::Continuous ? "continuous" : "first_order";
}

TransitionOrder classify_transition(std::span<const double> T_grid, std::span<const double> dm, double threshold) {
  if (T_grid.size() != dm.size()) throw DimensionMismatch("T grid and dmz lengths differ");
  std::ptrdiff_t last = -1;
  for (std::size_t i = 0; i < dm.size(); ++i) {
    if (dm[i] > threshold) last = static_cast<std::ptrdiff_t>(i);
  }
  if (last < 0) throw Unclassified("no bistable point on the T grid");
  if (last + 1 >= static_cast<std::ptrdiff_t>(dm.size())) throw Unclassified("bistable up to the end of the T grid");
  const double edge = dm[static_cast<std::size_t>(last)];
  if (edge < 0.1) return TransitionOrder::Continuous;
  if (edge > 0.3) return TransitionOrder::FirstOrder;
  throw Unclassified("last bistable dmz " + std::to_string(edge) + " lies between the criteria");
}

std::vector<double> dm_along_T(const ModelConfig& model, double h, std::span<const double> T_grid, double dh,
                               int threads) {
  const auto grid = h_grid(dh);
  std::size_t column = grid.size();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (std::abs(grid[j] - h) < 1e-9) column = j;
  }
  if (column == grid.size()) throw std::invalid_argument("h is not on the sweep grid");
  const std::vector<double> T(T_grid.begin(), T_grid.end());
  return parallel_map<double>(T.size(), threads,
                              [&](std::size_t i) { return hysteresis(model, T[i], dh).dm[column]; });
}

TransitionScan refine_transition(const ModelConfig& model, double h, std::span<const double> T_grid, double dh,
                                 double width, int threads, double threshold) {
  TransitionScan scan;
  scan.T.assign(T_grid.begin(), T_grid.end());
  scan.dm = dm_along_T(model, h, T_grid, dh, threads);
  std::ptrdiff_t last = -1;
  for (std::size_t i = 0; i < scan.dm.size(); ++i) {
    if (scan.dm[i] > threshold) last = static_cast<std::ptrdiff_t>(i);
  }
  if (last < 0 || last + 1 >= static_cast<std::ptrdiff_t>(scan.dm.size())) return scan;
  double lo = scan.T[static_cast<std::size_t>(last)];
  double hi = scan.T[static_cast<std::size_t>(last) + 1];
  while (hi - lo > width) {
    const double mid = 0.5 * (lo + hi);
    const double value = dm_along_T(model, h, std::span(&mid, 1), dh, 1).front();
    scan.T.push_back(mid);
    scan.dm.push_back(value);
    (value > threshold ? lo : hi) = mid;
  }
  std::vector<std::size_t> order(scan.T.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scan.T[a] < scan.T[b]; });
  TransitionScan sorted;
  for (std::size_t i : order) {
    sorted.T.push_back(scan.T[i]);
    sorted.dm.push_back(scan.dm[i]);
  }
  return sorted;
}

}  // namespace nec
