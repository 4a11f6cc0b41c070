#pragma once

#include "latmix/cb_taylor.hpp"
#include "latmix/lattice.hpp"

namespace latmix {

// Straight edge dislocation in the 2D projection: Burgers vector (b1, 0),
// branch cut Gamma = {x2 = core2, x1 >= core1} chosen off the lattice.
struct DislocationSpec {
  Vec b{1.0, 0.0};
  Vec core{0.25, 0.35};
  double r_hat = 2.0;
  double nu = 0.25;

  void validate() const;
  bool above_cut(const Vec& x) const { return x[1] > core[1]; }
  // Omega_Gamma: the half-space where slip-corrected strains are used.
  bool in_omega_gamma(const Vec& x) const {
    return x[0] >= core[0] + r_hat + b[0];
  }
};

// Isotropic Volterra edge-dislocation displacement; the branch angle is
// measured in (0, 2 pi) from the Burgers direction so the jump across
// Gamma equals -b.  Throws on Gamma and at the core.
Vec cle_edge_solution(const DislocationSpec& spec, const Vec& x);

// xi(x) = x - b (1/2pi) eta(|x - core|/r_hat) arg(x - core), with
// eta(s) = 3 s^2 - 2 s^3 clamped to [0, 1].
Vec xi_map(const DislocationSpec& spec, const Vec& x);
// Damped fixed-point inversion of xi to 1e-12 (50-iteration cap).
Vec xi_inverse(const DislocationSpec& spec, const Vec& y);

// Core-regularized far-field predictor u0(x) = u^lin(xi^{-1}(x)).
Vec core_regularized_u0(const DislocationSpec& spec, const Vec& x);

// Slip-corrected reads: inside Omega_Gamma, cross-cut neighbors are read
// at labels shifted by the Burgers vector, with a -b/+b constant added to
// predictor-type fields.
struct SlipRead {
  Vec pos;       // label to read
  Vec u0_const;  // constant added to predictor fields (0 for correctors)
};
SlipRead slip_read(const DislocationSpec& spec, const Vec& site,
                   const Vec& rho);

// Elastic strain table e_rho(l) for the given stencil offsets.
std::vector<Vec> slip_strain(const DislocationSpec& spec, const Vec& site,
                             const std::vector<Vec>& offsets);

// Voigt-averaged Lame constants from the second Cauchy-Born tensor;
// nu = lambda / (2 (lambda + mu)).  Throws when the reduction is
// non-elliptic.
double poisson_from_cb(const CauchyBornTensor& cb);

}  // namespace latmix
