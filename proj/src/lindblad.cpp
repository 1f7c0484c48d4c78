#include "nec/lindblad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include <unsupported/Eigen/KroneckerProduct>

#include "nec/errors.hpp"
#include "nec/observables.hpp"

namespace nec {

GeneratorSnapshot::GeneratorSnapshot(SparseMatrix hamiltonian, std::vector<RatedJump> channels)
    : hamiltonian_(std::move(hamiltonian)), channels_(std::move(channels)) {
  const Index dim = hamiltonian_.rows();
  if (hamiltonian_.cols() != dim) throw DimensionMismatch("Hamiltonian must be square");
  decay_.reserve(channels_.size());
  for (const auto& ch : channels_) {
    if (ch.op.rows() != dim || ch.op.cols() != dim) throw DimensionMismatch("jump operator dimension mismatch");
    if (!std::isfinite(ch.rate) || ch.rate < 0.0) throw NegativeRate("channel rate must be finite and nonnegative");
    SparseMatrix adj = ch.op.adjoint();
    decay_.push_back(adj * ch.op);
  }
}

Matrix rhs(const Matrix& rho, const GeneratorSnapshot& g) {
  if (rho.rows() != g.dim() || rho.cols() != g.dim()) throw DimensionMismatch("state and generator dimensions differ");
  const SparseMatrix& h = g.hamiltonian();
  Matrix out = -kI * (h * rho) + kI * (rho * h);
  const auto channels = g.channels();
  for (std::size_t k = 0; k < channels.size(); ++k) {
    const auto& ch = channels[k];
    if (ch.rate == 0.0) continue;
    const SparseMatrix adj = ch.op.adjoint();
    const Matrix l_rho = ch.op * rho;
    const SparseMatrix& ldl = g.decay(k);
    out.noalias() += ch.rate * (l_rho * adj);
    out.noalias() -= (0.5 * ch.rate) * (ldl * rho);
    out.noalias() -= (0.5 * ch.rate) * (rho * ldl);
  }
  return out;
}

SparseMatrix superoperator_matrix(const GeneratorSnapshot& g, Index cap) {
  const Index dim = g.dim();
  if (dim * dim > cap) {
    throw CapExceeded("superoperator dimension " + std::to_string(dim * dim) + " exceeds cap " + std::to_string(cap));
  }
  SparseMatrix identity(dim, dim);
  identity.setIdentity();
  const SparseMatrix& h = g.hamiltonian();
  const SparseMatrix h_t = h.transpose();
  SparseMatrix m = SparseMatrix(-kI * Eigen::kroneckerProduct(identity, h)) +
                   SparseMatrix(kI * Eigen::kroneckerProduct(h_t, identity));
  const auto channels = g.channels();
  for (std::size_t k = 0; k < channels.size(); ++k) {
    const auto& ch = channels[k];
    if (ch.rate == 0.0) continue;
    const SparseMatrix conj = ch.op.conjugate();
    const SparseMatrix ldl = g.decay(k);
    const SparseMatrix ldl_t = ldl.transpose();
    m += ch.rate * SparseMatrix(Eigen::kroneckerProduct(conj, ch.op));
    m -= (0.5 * ch.rate) * SparseMatrix(Eigen::kroneckerProduct(identity, ldl));
    m -= (0.5 * ch.rate) * SparseMatrix(Eigen::kroneckerProduct(ldl_t, identity));
  }
  m.prune(Complex{0.0});
  m.makeCompressed();
  return m;
}

// ---------------------------------------------------------------------------

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

void hermitize_blocks(Matrix& state, Index block) {
  for (Index b = 0; b < state.cols() / block; ++b) {
    auto blk = state.middleCols(b * block, block);
    Matrix sym = 0.5 * (blk + blk.adjoint());
    blk = sym;
  }
}

}  // namespace

StepEstimate dormand_prince_step(const RhsFunction& f, double t, const Matrix& y, const Matrix& k1, double dt) {
  Matrix k2, k3, k4, k5, k6, k7;
  Matrix tmp = y + dt * a21 * k1;
  f(t + c2 * dt, tmp, k2);
  tmp = y + dt * (a31 * k1 + a32 * k2);
  f(t + c3 * dt, tmp, k3);
  tmp = y + dt * (a41 * k1 + a42 * k2 + a43 * k3);
  f(t + c4 * dt, tmp, k4);
  tmp = y + dt * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
  f(t + c5 * dt, tmp, k5);
  tmp = y + dt * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
  f(t + dt, tmp, k6);
  StepEstimate out;
  out.state = y + dt * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  f(t + dt, out.state, k7);
  out.error = dt * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  out.derivative_end = std::move(k7);
  return out;
}

StepEstimate step(const Matrix& state, const GeneratorSnapshot& generator, double dt) {
  const RhsFunction f = [&generator](double, const Matrix& x, Matrix& out) { out = rhs(x, generator); };
  return dormand_prince_step(f, 0.0, state, rhs(state, generator), dt);
}

AdaptiveIntegrator::AdaptiveIntegrator(RhsFunction f, Index block_dim, IntegratorOptions options)
    : f_(std::move(f)), block_(block_dim), options_(options), dt_(options.dt_initial) {}

void AdaptiveIntegrator::reset(double t, Matrix state) {
  if (state.rows() != block_ || state.cols() % block_ != 0) throw DimensionMismatch("state is not a stack of blocks");
  t_ = t;
  state_ = std::move(state);
  f_(t_, state_, k1_);
  dt_ = options_.dt_initial;
  accepted_ = rejected_ = 0;
}

double max_block_norm(const Matrix& m, Index block) {
  double worst = 0.0;
  for (Index b = 0; b < m.cols() / block; ++b) worst = std::max(worst, m.middleCols(b * block, block).norm());
  return worst;
}

double AdaptiveIntegrator::derivative_norm() const { return max_block_norm(k1_, block_); }

double AdaptiveIntegrator::block_error_ratio(const Matrix& error, const Matrix& state) const {
  double worst = 0.0;
  for (Index b = 0; b < state.cols() / block_; ++b) {
    const double scale = options_.atol + options_.rtol * state.middleCols(b * block_, block_).norm();
    worst = std::max(worst, error.middleCols(b * block_, block_).norm() / scale);
  }
  return worst;
}

void AdaptiveIntegrator::advance() {
  for (;;) {
    if (dt_ < options_.dt_min) {
      throw StepUnderflow("step size " + std::to_string(dt_) + " fell below dt_min at t=" + std::to_string(t_));
    }
    StepEstimate est = dormand_prince_step(f_, t_, state_, k1_, dt_);
    const double ratio = block_error_ratio(est.error, state_);
    if (std::isfinite(ratio) && ratio <= 1.0) {
      t_ += dt_;
      state_ = std::move(est.state);
      hermitize_blocks(state_, block_);
      k1_ = std::move(est.derivative_end);
      const double factor = ratio == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(ratio, -0.2), 0.2, 5.0);
      dt_ = std::min(dt_ * factor, options_.dt_max);
      ++accepted_;
      return;
    }
    dt_ *= 0.5;
    ++rejected_;
  }
}

double min_eigenvalue(const Matrix& state, Index block) {
  double lowest = std::numeric_limits<double>::infinity();
  for (Index b = 0; b < state.cols() / block; ++b) {
    const auto blk = state.middleCols(b * block, block);
    const Matrix herm = 0.5 * (blk + blk.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(herm, Eigen::EigenvaluesOnly);
    lowest = std::min(lowest, solver.eigenvalues().minCoeff());
  }
  return lowest;
}

SteadyStateResult integrate_to_steady(const RhsFunction& f, const Matrix& initial, Index block_dim,
                                      const SteadyStateOptions& options, const Observer& observer) {
  AdaptiveIntegrator integ(f, block_dim, options.integrator);
  integ.reset(0.0, initial);
  if (observer) observer(0.0, integ.state());

  SteadyStateResult result;
  int streak = 0;
  for (;;) {
    const double res = integ.derivative_norm();
    if (res < options.tol) {
      if (streak == 0) {
        result.state = integ.state();
        result.time = integ.time();
        result.residual = res;
      }
      if (++streak >= options.window) {
        result.converged = true;
        break;
      }
    } else {
      streak = 0;
    }
    if (integ.time() >= options.t_max) break;
    integ.advance();
    if (observer) observer(integ.time(), integ.state());
  }
  if (!result.converged) {
    result.state = integ.state();
    result.time = integ.time();
    result.residual = integ.derivative_norm();
  }
  result.steps = integ.accepted_steps();
  result.min_eigenvalue = min_eigenvalue(result.state, block_dim);
  result.negativity_warning = result.min_eigenvalue < -1e-6;
  return result;
}

SteadyStateResult find_steady_state(const Matrix& initial, const GeneratorSnapshot& generator,
                                    const SteadyStateOptions& options) {
  const RhsFunction f = [&generator](double, const Matrix& x, Matrix& out) { out = rhs(x, generator); };
  return integrate_to_steady(f, initial, generator.dim(), options);
}

StopRun integrate_with_stops(const RhsFunction& f, const Matrix& initial, Index block_dim,
                             std::span<const double> stops, const SteadyStateOptions& options, bool stop_when_steady,
                             const Observer& on_stop) {
  AdaptiveIntegrator integ(f, block_dim, options.integrator);
  integ.reset(0.0, initial);
  std::size_t next = 0;
  while (next < stops.size() && stops[next] <= 0.0) {
    if (on_stop) on_stop(0.0, integ.state());
    ++next;
  }
  StopRun run;
  int streak = 0;
  for (;;) {
    if (stop_when_steady) {
      streak = integ.derivative_norm() < options.tol ? streak + 1 : 0;
      if (streak >= options.window) {
        run.converged = true;
        break;
      }
    }
    if (integ.time() >= options.t_max) break;
    double target = options.t_max;
    if (next < stops.size()) target = std::min(target, stops[next]);
    const double remaining = target - integ.time();
    const bool clipped = integ.dt() >= remaining;
    const double planned = integ.dt();
    if (clipped) integ.set_dt(remaining);
    integ.advance();
    if (clipped && integ.time() >= target - 1e-9 * std::max(1.0, target)) {
      // Resume with the step the controller wanted before clipping.
      integ.set_dt(std::max(integ.dt(), planned));
      while (next < stops.size() && stops[next] <= integ.time() + 1e-9 * std::max(1.0, target)) {
        if (on_stop) on_stop(stops[next], integ.state());
        ++next;
      }
    }
  }
  run.state = integ.state();
  run.time = integ.time();
  return run;
}

double purity(const Matrix& rho) { return std::real((rho * rho).trace()); }

TrajectoryWriter::TrajectoryWriter(std::ostream& out) : out_(&out) {
  *out_ << "t,mz,purity,trace_error\n";
}

void TrajectoryWriter::operator()(double t, const Matrix& rho) {
  const double trace_error = std::abs(rho.trace() - Complex{1.0});
  *out_ << t << ',' << magnetization(rho) << ',' << purity(rho) << ',' << trace_error << '\n';
}

}  // namespace nec
