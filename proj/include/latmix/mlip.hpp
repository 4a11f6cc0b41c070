#pragma once

#include <Eigen/Dense>
#include <vector>

#include "latmix/cb_taylor.hpp"
#include "latmix/refmodel.hpp"

namespace latmix {

// Parameter-linear invariant basis: pair radial features plus triplet
// (radial x radial x Legendre-angle) invariants up to body order 3.
struct BasisSpec {
  int k_max_pair = 8;
  int k_max_trip = 4;
  int l_max = 4;
  double R_cut = 2.5;
  double r_in = 0.6;  // inner radius of the radial transform

  struct Feature {
    int kind;  // 0 = pair, 1 = triplet
    int k1 = 0, k2 = 0, l = 0;
  };

  // Deterministic basis enumeration: pairs by k, then triplets by
  // (k1 <= k2, l).
  std::vector<Feature> features() const;
  int count() const;

  bool operator==(const BasisSpec& o) const {
    return k_max_pair == o.k_max_pair && k_max_trip == o.k_max_trip &&
           l_max == o.l_max && R_cut == o.R_cut && r_in == o.r_in;
  }
};

struct Coefficients {
  std::vector<double> c;
};

// P_k(r): Chebyshev polynomials in x(r) = 2(r - r_in)/(R_cut - r_in) - 1
// times the envelope (R_cut - r)^2; value and first derivative vanish at
// the cutoff.
void radial_basis(const BasisSpec& spec, double r, std::vector<double>& P,
                  std::vector<double>* dP = nullptr);

// Feature vector B(g).  Stencil entries are sorted canonically first, so
// any neighbor permutation yields bitwise-identical values.
void descriptors(const BasisSpec& spec, const StencilView& s,
                 std::vector<double>& B);

// Reference double-loop implementation (also the d = 3 path).
void descriptors_ref(const BasisSpec& spec, const StencilView& s,
                     std::vector<double>& B);

// B(g) together with dB/dg: J[feature][slot].
void descriptor_jacobian(const BasisSpec& spec, const StencilView& s,
                         std::vector<double>& B,
                         std::vector<std::vector<Vec>>& J);

// V^ACE(g; c) = sum_B c_B B(g), linear in c.
class MlipPotential : public SitePotential {
 public:
  MlipPotential(const BasisSpec& spec, Coefficients c);

  std::string name() const override { return "mlip"; }
  double cutoff() const override { return spec_.R_cut; }
  double site_energy(const StencilView& s) const override;
  void site_gradient(const StencilView& s,
                     std::vector<Vec>& grad) const override;

  const BasisSpec& spec() const { return spec_; }
  const Coefficients& coefficients() const { return coeffs_; }

 private:
  BasisSpec spec_;
  Coefficients coeffs_;
  // coefficient-folded tables for the planar fast path
  std::vector<std::vector<double>> acoef_;  // Legendre-in-cos(m.) table
  std::vector<double> cpair_;
  std::vector<double> Q_;      // [pack(a,b) * (l_max+1) + m]
  std::vector<double> Wdiag_;  // [pack(a,b)]
  int dpack(int a, int b) const {
    return a * (spec_.k_max_trip + 1) - a * (a - 1) / 2 + (b - a);
  }
  double fast_energy(const StencilView& s) const;
  void fast_gradient(const StencilView& s, std::vector<Vec>& grad) const;
};

// Vector-valued homogeneous-lattice evaluators over the whole basis:
// the per-basis counterparts of HomogeneousModel, used to build design
// matrices.
class MlipHomogeneous {
 public:
  MlipHomogeneous(const LatticeSpec& lat, const BasisSpec& spec,
                  double patch_radius);

  const BasisSpec& basis() const { return spec_; }
  const LatticeSpec& lattice() const { return lat_; }
  const std::vector<Vec>& stencil() const { return stencil_; }
  const ReferenceConfig& patch() const { return patch_; }

  // B(g) on stencil-aligned displacements.
  Eigen::VectorXd energy(const std::vector<Vec>& g) const;
  // dB/dg as an (nB x nslots*d) matrix, columns slot-major.
  Eigen::MatrixXd jacobian(const std::vector<Vec>& g) const;
  // Per-basis force at the origin: (nB x d).
  Eigen::MatrixXd force_at_origin(const std::vector<Vec>& w) const;
  // Per-basis Cauchy-Born density B((F - I) Lambda^h_*).
  Eigen::VectorXd cb_density(const Mat& F) const;

 private:
  LatticeSpec lat_;
  BasisSpec spec_;
  ReferenceConfig patch_;
  NeighborTable nt_;
  int origin_ = -1;
  std::vector<Vec> stencil_;
};

}  // namespace latmix
