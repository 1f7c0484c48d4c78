#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "nec/cmf.hpp"

namespace nec {

enum class LatticeBoundary { Periodic, Open };
const char* to_string(LatticeBoundary b);
LatticeBoundary parse_lattice_boundary(std::string_view name);

/// nx x ny clusters, each a dim x dim block of `blocks`; cluster (cx, cy)
/// occupies column block cx + nx * cy.
struct LatticeState {
  int nx = 0;
  int ny = 0;
  Index dim = 0;
  LatticeBoundary boundary = LatticeBoundary::Periodic;
  Matrix blocks;

  int clusters() const { return nx * ny; }
  auto cluster(int c) { return blocks.middleCols(c * dim, dim); }
  auto cluster(int c) const { return blocks.middleCols(c * dim, dim); }
};

/// Every cluster set to `rho`.
LatticeState uniform_lattice(int nx, int ny, const Matrix& rho, LatticeBoundary boundary = LatticeBoundary::Periodic);

/// Square island of ell_down x ell_down spins in an L x L lattice, centered on
/// the cluster grid (offset rounded down). `island_up` false means a down
/// island in an up background.
struct IslandSpec {
  int ell_down = 0;
  bool island_up = false;
};

/// Throws IncommensurateIsland unless ell divides L and ell_down, and
/// ell_down <= L.
LatticeState init_island(int L, int ell, const IslandSpec& spec, LatticeBoundary boundary = LatticeBoundary::Periodic);

/// Index of the cluster displaced by `offset` from c, or -1 past an open edge.
int neighbor_index(const LatticeState& shape, int c, Offset offset);

/// Closed iCMF right-hand side. Each call first evaluates every probe on
/// every cluster, then updates the clusters independently (in parallel when
/// threads > 1, with results identical to the sequential order).
class LatticeFlow {
 public:
  LatticeFlow(const ClusterOperatorSet& set, Prescription prescription, const LatticeState& shape, int threads = 1);

  void operator()(const Matrix& state, Matrix& out) const;
  const CmfFlow& cluster_flow() const { return flow_; }

 private:
  CmfFlow flow_;
  int nx_;
  int ny_;
  LatticeBoundary boundary_;
  int threads_;
  std::vector<std::vector<int>> neighbor_of_probe_;  // [cluster][probe]
};

/// One fixed Dormand-Prince step of the whole lattice.
StepEstimate lattice_step(const LatticeState& state, const LatticeFlow& flow, double dt);

double global_magnetization(const LatticeState& state);
std::vector<double> cluster_magnetizations(const LatticeState& state);

struct IslandOptions {
  SteadyStateOptions steady;  // stopping rule and integrator tolerances
  double stride = 0.5;        // spacing of recorded global magnetization
  int map_count = 10;         // log-spaced cluster maps in [stride, t_max]
  int threads = 1;
};

struct ClusterMap {
  double t = 0.0;
  std::vector<double> mz;  // per cluster, index cx + nx * cy
};

struct IslandTrajectory {
  std::vector<double> t;
  std::vector<double> mz;
  std::vector<ClusterMap> maps;
  LatticeState final_state;
  bool converged = false;
};

/// Integrates with steps clipped to land on every recording time; stops at
/// the steady state or t_max. The final map is always recorded.
IslandTrajectory evolve_island(const LatticeState& initial, const ClusterOperatorSet& set, Prescription prescription,
                               const IslandOptions& options = {});

/// First recorded time after which |mz - mz_final| < eps holds to the end.
/// Throws NotConverged for an unconverged trajectory.
double relaxation_time(const IslandTrajectory& trajectory, double eps = 0.01);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_error = 0.0;
  double intercept_error = 0.0;
  double r2 = 0.0;
  double rms = 0.0;
};

/// Ordinary least squares y = intercept + slope * x (at least 3 points).
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

struct VelocityFit {
  double v = 0.0;  // sqrt(2) / slope of tau against the island size
  LinearFit line;
};

/// Throws NonLinearRegime below three points, when R^2 <= min_r2, or for a
/// non-positive slope.
VelocityFit fit_velocity(std::span<const double> sizes, std::span<const double> tau, double min_r2 = 0.98);

/// Linear law of the signed velocity dr/dt = -C + B h + D T + E Omega from
/// two one-parameter scans. intercept_gap = intercept(Omega scan) -
/// intercept(T scan), which the law predicts as 0.1 (D - E) when both fixed
/// values are 0.1.
struct LinearLaw {
  LinearFit vs_T;
  LinearFit vs_omega;
  double D = 0.0;
  double E = 0.0;
  double intercept_gap = 0.0;
};

/// Throws WindowTooWide when either fit has R^2 below min_r2.
LinearLaw fit_linear_law(std::span<const double> T, std::span<const double> v_T, std::span<const double> omega,
                         std::span<const double> v_omega, double min_r2 = 0.95);

}  // namespace nec
