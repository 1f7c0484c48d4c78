#pragma once

#include <cmath>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nec/cmf.hpp"

namespace nec {

/// Everything needed to build and solve one TI-CMF point except (T, h).
struct ModelConfig {
  int ell = 2;
  double gamma = 1.0;
  HamiltonianSpec hamiltonian = HamiltonianSpec::pxp_nec(0.1);
  Prescription prescription = Prescription::Trace;
  SteadyStateOptions steady;
};

ClusterOperatorSet operator_set_at(const ModelConfig& model, double T, double h);

/// h values -1, -1 + dh, ..., 1. Throws std::invalid_argument unless dh
/// divides 2.
std::vector<double> h_grid(double dh);

struct HysteresisResult {
  double T = 0.0;
  std::vector<double> h;
  std::vector<double> m_forward;
  std::vector<double> m_backward;
  std::vector<double> dm;
  std::vector<bool> converged;  // both branches converged at this h
};

/// Forward branch from h=-1 seeded all-up, backward from h=+1 seeded
/// all-down (positive h favors down); every later point starts from the
/// previous steady state.
HysteresisResult hysteresis(const ModelConfig& model, double T, double dh = 0.1);

struct PhaseDiagram {
  std::vector<double> T;
  std::vector<double> h;
  std::vector<HysteresisResult> rows;  // one per T, same order
};

/// One hysteresis per T row, rows run in parallel.
PhaseDiagram phase_diagram(const ModelConfig& model, std::span<const double> T_grid, double dh, int threads);

/// Rows `model,ell,omega,T,h,mz_fwd,mz_bwd,dmz,converged`.
void write_phase_header(std::ostream& out);
void write_phase_rows(std::ostream& out, const ModelConfig& model, const HysteresisResult& row);
void write_phase_csv(std::ostream& out, const ModelConfig& model, const PhaseDiagram& diagram);

inline constexpr double kBistableThreshold = 0.05;

struct BoundaryPoint {
  double h = 0.0;
  double T = 0.0;
};

/// Per h column, the boundary sits halfway between the highest bistable T
/// (dmz > threshold) and the next T on the grid. Columns that are bistable
/// everywhere or nowhere contribute nothing.
std::vector<BoundaryPoint> detect_boundary(const PhaseDiagram& diagram, double threshold = kBistableThreshold);

/// T_c(h) = R^2 (1 - |h|)^2 + T_star.
struct CriticalFit {
  double T_star = 0.0;
  double R = 0.0;
  double T_star_error = 0.0;  // standard errors of the linear fit
  double slope_error = 0.0;   // of R^2
  double residual = 0.0;      // rms
  std::size_t points = 0;

  double Tc(double h) const { return R * R * (1.0 - std::abs(h)) * (1.0 - std::abs(h)) + T_star; }
  double R_error() const { return R > 0.0 ? slope_error / (2.0 * R) : 0.0; }
};

/// Least squares in x = (1 - |h|)^2. Throws InsufficientBoundary below four
/// points or when the fitted curvature is not positive.
CriticalFit fit_boundary(std::span<const BoundaryPoint> points);

enum class TransitionOrder { Continuous, FirstOrder };
const char* to_string(TransitionOrder order);

/// Classifies from dmz along increasing T: the last bistable value below 0.1
/// is continuous, above 0.3 first order. Throws Unclassified otherwise or
/// when no bistable-to-normal step exists.
TransitionOrder classify_transition(std::span<const double> T_grid, std::span<const double> dm,
                                    double threshold = kBistableThreshold);

/// dmz at a fixed h across T_grid (each T from its own hysteresis sweep).
std::vector<double> dm_along_T(const ModelConfig& model, double h, std::span<const double> T_grid, double dh,
                               int threads);

struct TransitionScan {
  std::vector<double> T;  // ascending
  std::vector<double> dm;
};

/// dm_along_T on the grid, then bisection of the last bistable-to-normal
/// interval down to `width`. A continuous transition needs this: dmz
/// vanishes as a square root, so a coarse grid stops well above zero.
TransitionScan refine_transition(const ModelConfig& model, double h, std::span<const double> T_grid, double dh,
                                 double width, int threads, double threshold = kBistableThreshold);

}  // namespace nec
