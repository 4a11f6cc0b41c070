#pragma once

#include <array>
#include <functional>
#include <string>

#include "latmix/lattice.hpp"
#include "latmix/util.hpp"

namespace latmix {

struct SolverConfig {
  double grad_tol = 1e-8;  // sup-norm stopping tolerance
  int max_iter = 5000;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int history = 20;     // quasi-Newton memory depth
  int krylov_dim = 50;  // GMRES subspace size
  int max_newton = 100;
  double fd_step = 1e-6;  // directional-derivative step, scaled by 1 + |u|
  double max_step = 0.2;  // sup-norm cap on a single update
  bool keep_log = false;
};

struct SolveResult {
  DisplacementField u;
  bool converged = false;
  int iterations = 0;
  double final_value = 0.0;  // energy (minimize) or residual norm
  double grad_norm = 0.0;    // sup-norm at exit
  std::string diagnostic;
  // iter, energy_or_residual, gradnorm, step
  std::vector<std::array<double, 4>> log;
};

using EnergyFn = std::function<double(const DisplacementField&)>;
using FieldFn =
    std::function<void(const DisplacementField&, std::vector<Vec>&)>;

// Limited-memory quasi-Newton descent with Armijo backtracking over the
// free (non-frozen) sites of the initial guess.
SolveResult minimize(const EnergyFn& energy, const FieldFn& gradient,
                     const DisplacementField& u0_guess,
                     const SolverConfig& cfg);

// Jacobian-free Newton iteration on F(u) = 0: each step solves the
// finite-difference linearization with restarted GMRES and is globalized
// by residual-norm backtracking.
SolveResult solve_force_balance(const FieldFn& force,
                                const DisplacementField& u0_guess,
                                const SolverConfig& cfg);

// Annulus maxima of |Du(l)|_N and the log-log least-squares slope over
// [r_min, r_max].
struct DecayProfile {
  std::vector<std::pair<double, double>> rows;  // (radius, max |Du|_N)
  LinearFit fit;
  bool slope_defined = false;
};

DecayProfile decay_profile(const DisplacementField& u, double r_min,
                           double r_max, double bin_width);

}  // namespace latmix
