#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "nec/types.hpp"

namespace nec {

struct RatedJump {
  SparseMatrix op;
  double rate = 0.0;
};

/// Frozen Lindblad generator: Hamiltonian plus rated channels. L^dag L is
/// precomputed per channel.
class GeneratorSnapshot {
 public:
  GeneratorSnapshot(SparseMatrix hamiltonian, std::vector<RatedJump> channels);

  Index dim() const { return hamiltonian_.rows(); }
  const SparseMatrix& hamiltonian() const { return hamiltonian_; }
  std::span<const RatedJump> channels() const { return channels_; }
  const SparseMatrix& decay(std::size_t k) const { return decay_[k]; }

 private:
  SparseMatrix hamiltonian_;
  std::vector<RatedJump> channels_;
  std::vector<SparseMatrix> decay_;
};

/// -i[H, rho] + sum rate (L rho L^dag - {L^dag L, rho} / 2).
Matrix rhs(const Matrix& rho, const GeneratorSnapshot& generator);

/// Column-stacking superoperator M with vec(rhs(rho)) = M vec(rho).
/// Throws CapExceeded when dim^2 exceeds `cap`.
SparseMatrix superoperator_matrix(const GeneratorSnapshot& generator, Index cap = 65536);

inline Vector vectorize(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unvectorize(const Vector& v, Index dim) { return Eigen::Map<const Matrix>(v.data(), dim, dim); }

// ---------------------------------------------------------------------------
// Integration

/// Right-hand side of an ODE on a stack of square blocks: out = f(t, state).
using RhsFunction = std::function<void(double t, const Matrix& state, Matrix& out)>;

struct IntegratorOptions {
  double rtol = 1e-8;
  double atol = 1e-12;
  double dt_initial = 1e-2;
  double dt_min = 1e-10;
  double dt_max = 2.0;
};

struct StepEstimate {
  Matrix state;
  Matrix error;
  Matrix derivative_end;  // f at the new state (first stage of the next step)
};

/// One Dormand-Prince 5(4) step with fixed dt. `k1` is f(t, state).
StepEstimate dormand_prince_step(const RhsFunction& f, double t, const Matrix& state, const Matrix& k1, double dt);

/// Single fixed step of the generator (the state after dt and the embedded
/// error estimate).
StepEstimate step(const Matrix& state, const GeneratorSnapshot& generator, double dt);

/// Adaptive Dormand-Prince driver. The state is a horizontal stack of
/// dim x dim blocks; error control and re-Hermitization act per block, and a
/// step is accepted when every block satisfies |err| <= atol + rtol |rho|.
/// Rejected steps halve dt.
class AdaptiveIntegrator {
 public:
  AdaptiveIntegrator(RhsFunction f, Index block_dim, IntegratorOptions options = {});

  /// Sets the state and evaluates f there.
  void reset(double t, Matrix state);

  /// Advances by one accepted step. Throws StepUnderflow.
  void advance();

  double time() const { return t_; }
  double dt() const { return dt_; }
  void set_dt(double dt) { dt_ = dt; }
  const Matrix& state() const { return state_; }
  /// f(t, state) at the current point.
  const Matrix& derivative() const { return k1_; }
  /// Largest per-block Frobenius norm of the derivative.
  double derivative_norm() const;
  std::size_t accepted_steps() const { return accepted_; }
  std::size_t rejected_steps() const { return rejected_; }

 private:
  double block_error_ratio(const Matrix& error, const Matrix& state) const;

  RhsFunction f_;
  Index block_;
  IntegratorOptions options_;
  double t_ = 0.0;
  double dt_ = 0.0;
  Matrix state_;
  Matrix k1_;
  std::size_t accepted_ = 0;
  std::size_t rejected_ = 0;
};

/// Largest Frobenius norm among the dim x dim column blocks of `m`.
double max_block_norm(const Matrix& m, Index block_dim);

struct SteadyStateOptions {
  double tol = 1e-7;
  double t_max = 2000.0;
  int window = 10;
  IntegratorOptions integrator;
};

struct SteadyStateResult {
  Matrix state;
  bool converged = false;
  double time = 0.0;
  double residual = 0.0;
  double min_eigenvalue = 0.0;
  bool negativity_warning = false;
  std::size_t steps = 0;
};

using Observer = std::function<void(double t, const Matrix& state)>;

/// Integrates until the derivative norm stays below tol for `window`
/// consecutive accepted-step checks; returns the first state of that window.
SteadyStateResult integrate_to_steady(const RhsFunction& f, const Matrix& initial, Index block_dim,
                                      const SteadyStateOptions& options, const Observer& observer = {});

SteadyStateResult find_steady_state(const Matrix& initial, const GeneratorSnapshot& generator,
                                    const SteadyStateOptions& options = {});

struct StopRun {
  Matrix state;
  double time = 0.0;
  bool converged = false;
};

/// Integrates from t = 0 with steps clipped to land exactly on every time in
/// `stops` (ascending), calling on_stop there. Ends at options.t_max, or
/// earlier once the steady-state criterion holds when stop_when_steady.
StopRun integrate_with_stops(const RhsFunction& f, const Matrix& initial, Index block_dim,
                             std::span<const double> stops, const SteadyStateOptions& options, bool stop_when_steady,
                             const Observer& on_stop);

// ---------------------------------------------------------------------------
// State diagnostics

/// Smallest eigenvalue of the Hermitian part, per block.
double min_eigenvalue(const Matrix& state, Index block_dim);

double purity(const Matrix& rho);

/// Streams `t,mz,purity,trace_error` rows for a single-cluster trajectory.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(std::ostream& out);
  void operator()(double t, const Matrix& rho);

 private:
  std::ostream* out_;
};

}  // namespace nec
