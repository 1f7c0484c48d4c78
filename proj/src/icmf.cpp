#include "nec/icmf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nec/errors.hpp"
#include "nec/parallel.hpp"

namespace nec {

const char* to_string(LatticeBoundary b) { return b == LatticeBoundary::Periodic ? "periodic" : "open"; }

LatticeBoundary parse_lattice_boundary(std::string_view name) {
  if (name == "periodic") return LatticeBoundary::Periodic;
  if (name == "open") return LatticeBoundary::Open;
  throw std::invalid_argument("unknown lattice boundary '" + std::string(name) + "'");
}

LatticeState uniform_lattice(int nx, int ny, const Matrix& rho, LatticeBoundary boundary) {
  LatticeState s;
  s.nx = nx;
  s.ny = ny;
  s.dim = rho.rows();
  s.boundary = boundary;
  s.blocks = rho.replicate(1, nx * ny);
  return s;
}

LatticeState init_island(int L, int ell, const IslandSpec& spec, LatticeBoundary boundary) {
  if (ell <= 0 || L <= 0 || L % ell != 0) throw IncommensurateIsland("L must be a positive multiple of ell");
  if (spec.ell_down < 0 || spec.ell_down > L || spec.ell_down % ell != 0) {
    throw IncommensurateIsland("island size " + std::to_string(spec.ell_down) + " is not a multiple of ell within L");
  }
  const ClusterGeometry g(ell);
  const Matrix island = spec.island_up ? all_up(g) : all_down(g);
  const Matrix background = spec.island_up ? all_down(g) : all_up(g);
  const int n = L / ell;
  const int m = spec.ell_down / ell;
  const int start = (n - m) / 2;
  LatticeState s = uniform_lattice(n, n, background, boundary);
  for (int cy = start; cy < start + m; ++cy) {
    for (int cx = start; cx < start + m; ++cx) s.cluster(cx + n * cy) = island;
  }
  return s;
}

namespace {

int wrap(int v, int n) { return ((v % n) + n) % n; }

}  // namespace

int neighbor_index(const LatticeState& shape, int c, Offset offset) {
  int x = c % shape.nx + offset.dx;
  int y = c / shape.nx + offset.dy;
  if (shape.boundary == LatticeBoundary::Open) {
    if (x < 0 || y < 0 || x >= shape.nx || y >= shape.ny) return -1;
  } else {
    x = wrap(x, shape.nx);
    y = wrap(y, shape.ny);
  }
  return x + shape.nx * y;
}

LatticeFlow::LatticeFlow(const ClusterOperatorSet& set, Prescription prescription, const LatticeState& shape,
                         int threads)
    : flow_(set, prescription), nx_(shape.nx), ny_(shape.ny), boundary_(shape.boundary), threads_(threads) {
  neighbor_of_probe_.resize(static_cast<std::size_t>(shape.clusters()));
  for (int c = 0; c < shape.clusters(); ++c) {
    auto& row = neighbor_of_probe_[static_cast<std::size_t>(c)];
    for (std::size_t p = 0; p < flow_.probe_count(); ++p) row.push_back(neighbor_index(shape, c, flow_.probe_offset(p)));
  }
}

void LatticeFlow::operator()(const Matrix& state, Matrix& out) const {
  const Index dim = flow_.dim();
  const auto clusters = static_cast<std::size_t>(nx_ * ny_);
  const std::size_t probes = flow_.probe_count();
  if (state.rows() != dim || state.cols() != dim * static_cast<Index>(clusters)) {
    throw DimensionMismatch("lattice state does not match the flow");
  }
  out.resize(state.rows(), state.cols());

  // Exchange phase: every probe on every cluster, from the same snapshot.
  std::vector<double> expectations(clusters * probes);
  parallel_for(clusters, threads_, [&](std::size_t c) {
    flow_.probe_expectations(state.middleCols(static_cast<Index>(c) * dim, dim),
                             std::span<double>(expectations.data() + c * probes, probes));
  });
  // Update phase.
  parallel_for(clusters, threads_, [&](std::size_t c) {
    std::vector<double> scalars(probes);
    const auto& nb = neighbor_of_probe_[c];
    for (std::size_t p = 0; p < probes; ++p) {
      scalars[p] = nb[p] < 0 ? std::numeric_limits<double>::quiet_NaN()
                             : expectations[static_cast<std::size_t>(nb[p]) * probes + p];
    }
    flow_.evaluate(state.middleCols(static_cast<Index>(c) * dim, dim), scalars,
                   out.middleCols(static_cast<Index>(c) * dim, dim));
  });
}

StepEstimate lattice_step(const LatticeState& state, const LatticeFlow& flow, double dt) {
  const RhsFunction f = [&flow](double, const Matrix& x, Matrix& out) { flow(x, out); };
  Matrix k1;
  flow(state.blocks, k1);
  return dormand_prince_step(f, 0.0, state.blocks, k1, dt);
}

std::vector<double> cluster_magnetizations(const LatticeState& state) {
  std::vector<double> mz(static_cast<std::size_t>(state.clusters()));
  for (int c = 0; c < state.clusters(); ++c) mz[static_cast<std::size_t>(c)] = magnetization(state.cluster(c));
  return mz;
}

double global_magnetization(const LatticeState& state) {
  const auto mz = cluster_magnetizations(state);
  double acc = 0.0;
  for (double m : mz) acc += m;
  return mz.empty() ? 0.0 : acc / static_cast<double>(mz.size());
}

IslandTrajectory evolve_island(const LatticeState& initial, const ClusterOperatorSet& set, Prescription prescription,
                               const IslandOptions& options) {
  const LatticeFlow flow(set, prescription, initial, options.threads);
  const RhsFunction f = [&flow](double, const Matrix& x, Matrix& out) { flow(x, out); };
  const double t_max = options.steady.t_max;

  std::vector<double> map_times;
  if (options.map_count > 1 && t_max > options.stride) {
    const double ratio = t_max / options.stride;
    for (int i = 0; i < options.map_count; ++i) {
      map_times.push_back(options.stride * std::pow(ratio, static_cast<double>(i) / (options.map_count - 1)));
    }
  }
  std::vector<double> stops;
  const auto n_stride = static_cast<long>(std::floor(t_max / options.stride + 1e-9));
  for (long i = 0; i <= n_stride; ++i) stops.push_back(static_cast<double>(i) * options.stride);
  stops.insert(stops.end(), map_times.begin(), map_times.end());
  std::sort(stops.begin(), stops.end());
  stops.erase(std::unique(stops.begin(), stops.end(), [](double a, double b) { return std::abs(a - b) < 1e-9; }),
              stops.end());

  IslandTrajectory traj;
  LatticeState view = initial;
  std::size_t next_map = 0;
  const Observer on_stop = [&](double t, const Matrix& x) {
    view.blocks = x;
    traj.t.push_back(t);
    traj.mz.push_back(global_magnetization(view));
    if (next_map < map_times.size() && std::abs(t - map_times[next_map]) < 1e-9 * std::max(1.0, t)) {
      traj.maps.push_back({t, cluster_magnetizations(view)});
      ++next_map;
    }
  };
  const StopRun run = integrate_with_stops(f, initial.blocks, initial.dim, stops, options.steady, true, on_stop);

  traj.final_state = initial;
  traj.final_state.blocks = run.state;
  traj.converged = run.converged;
  if (traj.t.empty() || traj.t.back() < run.time) {
    traj.t.push_back(run.time);
    traj.mz.push_back(global_magnetization(traj.final_state));
  }
  if (traj.maps.empty() || traj.maps.back().t < run.time) {
    traj.maps.push_back({run.time, cluster_magnetizations(traj.final_state)});
  }
  return traj;
}

double relaxation_time(const IslandTrajectory& trajectory, double eps) {
  if (!trajectory.converged) throw NotConverged("island trajectory did not reach a steady state");
  const double final_mz = trajectory.mz.back();
  std::size_t i = trajectory.mz.size();
  while (i > 0 && std::abs(trajectory.mz[i - 1] - final_mz) < eps) --i;
  return i < trajectory.t.size() ? trajectory.t[i] : trajectory.t.back();
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("x and y lengths differ");
  if (x.size() < 3) throw NonLinearRegime("need at least 3 points for a linear fit");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw NonLinearRegime("x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    sse += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  fit.rms = std::sqrt(sse / n);
  const double sigma2 = sse / (n - 2.0);
  fit.slope_error = std::sqrt(sigma2 / sxx);
  fit.intercept_error = std::sqrt(sigma2 * (1.0 / n + mx * mx / sxx));
  return fit;
}

VelocityFit fit_velocity(std::span<const double> sizes, std::span<const double> tau, double min_r2) {
  VelocityFit out;
  out.line = linear_fit(sizes, tau);
  if (out.line.r2 <= min_r2) {
    throw NonLinearRegime("tau is not linear in the island size (R^2 = " + std::to_string(out.line.r2) + ")");
  }
  if (out.line.slope <= 0.0) throw NonLinearRegime("tau does not grow with the island size");
  out.v = std::sqrt(2.0) / out.line.slope;
  return out;
}

LinearLaw fit_linear_law(std::span<const double> T, std::span<const double> v_T, std::span<const double> omega,
                         std::span<const double> v_omega, double min_r2) {
  LinearLaw law;
  law.vs_T = linear_fit(T, v_T);
  law.vs_omega = linear_fit(omega, v_omega);
  if (law.vs_T.r2 < min_r2 || law.vs_omega.r2 < min_r2) {
    throw WindowTooWide("velocity is not linear over the sampled window (R^2 = " + std::to_string(law.vs_T.r2) +
                        ", " + std::to_string(law.vs_omega.r2) + ")");
  }
  law.D = law.vs_T.slope;
  law.E = law.vs_omega.slope;
  law.intercept_gap = law.vs_omega.intercept - law.vs_T.intercept;
  return law;
}

}  // namespace nec
