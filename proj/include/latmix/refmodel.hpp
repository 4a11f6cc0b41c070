#pragma once

#include <memory>
#include <string>
#include <vector>

#include "latmix/lattice.hpp"

namespace latmix {

// Uniform interface to site-energy models: reference EAM, Taylor-expanded
// MM, and the linear MLIP all evaluate V(Du(l)) on a stencil.
class SitePotential {
 public:
  virtual ~SitePotential() = default;
  virtual std::string name() const = 0;
  virtual double cutoff() const = 0;
  virtual double site_energy(const StencilView& s) const = 0;
  // dV/dg_k for every stencil entry, resized by the callee.
  virtual void site_gradient(const StencilView& s,
                             std::vector<Vec>& grad) const = 0;
  virtual bool has_hessian() const { return false; }
  // d^2 V / dg_k dg_l as n*n row-major d x d blocks.
  virtual void site_hessian(const StencilView&, std::vector<Mat>&) const {
    throw std::logic_error("site_hessian not available");
  }
};

struct EAMParams {
  double A_p = 0.2385;        // pair amplitude
  double p = 6.0;             // pair decay
  double q = 3.0;             // density decay
  double C_e = 1.0;           // embedding coefficient
  double R_cut = 2.6;
  double cutoff_width = 0.4;  // smooth-cutoff width

  void validate() const;
};

// Toy EAM: V(g) = 1/2 sum phi(|rho+g|) + F(sum psi(|rho+g|)) with
// phi(r) = A_p e^{-p(r-1)} s(r), psi(r) = e^{-q(r-1)} s(r),
// F(x) = -C_e sqrt(x), and s a C^2 envelope vanishing at R_cut.
// Parameters are tuned so the triangular lattice at r0 = 1 sits within
// 1% of its energy minimum.
class EAMPotential : public SitePotential {
 public:
  explicit EAMPotential(const EAMParams& params);

  std::string name() const override { return "eam"; }
  double cutoff() const override { return params_.R_cut; }
  double site_energy(const StencilView& s) const override;
  void site_gradient(const StencilView& s,
                     std::vector<Vec>& grad) const override;
  bool has_hessian() const override { return true; }
  void site_hessian(const StencilView& s,
                    std::vector<Mat>& hess) const override;

  const EAMParams& params() const { return params_; }

 private:
  EAMParams params_;
  double envelope(double r, double* ds = nullptr, double* dds = nullptr) const;
  double phi(double r, double* d1 = nullptr, double* d2 = nullptr) const;
  double psi(double r, double* d1 = nullptr, double* d2 = nullptr) const;
};

// Builds the stencil of `site` from D(u0+u) over the neighbor table.
// `stencil_mask`, when given, restricts stencils to the sites of a
// subsystem Omega (the V^Omega restriction).
StencilView make_stencil2(const ReferenceConfig& cfg, const NeighborTable& nt,
                          const DisplacementField* u0,
                          const DisplacementField& u, int site,
                          const std::vector<std::uint8_t>* stencil_mask);

// Energy-difference functional sum_l V_l(Du0+Du) - V_l(Du0).
// `site_mask`, when given, restricts the outer site sum.
double energy_difference(const SitePotential& V, const ReferenceConfig& cfg,
                         const NeighborTable& nt, const DisplacementField* u0,
                         const DisplacementField& u,
                         const std::vector<std::uint8_t>* stencil_mask = nullptr,
                         const std::vector<std::uint8_t>* site_mask = nullptr);

// F_l = -grad_l of the energy difference (analytic site gradients).
void forces(const SitePotential& V, const ReferenceConfig& cfg,
            const NeighborTable& nt, const DisplacementField* u0,
            const DisplacementField& u, std::vector<Vec>& F,
            const std::vector<std::uint8_t>* stencil_mask = nullptr,
            const std::vector<std::uint8_t>* site_mask = nullptr);

// Lattice offsets A Z^d \ 0 within radius R, deterministic order.
std::vector<Vec> lattice_offsets_within(const LatticeSpec& spec, double R);

// Homogeneous-lattice evaluators around the origin: V^h(g) on the
// interaction stencil, the homogeneous force functional F^h(w), and the
// analytic force-constant table.
class HomogeneousModel {
 public:
  HomogeneousModel(const LatticeSpec& spec, const SitePotential& V,
                   double patch_radius);

  const LatticeSpec& spec() const { return spec_; }
  const SitePotential& potential() const { return *V_; }
  const std::vector<Vec>& stencil() const { return stencil_; }
  const ReferenceConfig& patch() const { return patch_; }
  int origin() const { return origin_; }

  double V0() const { return V0_; }
  double energy(const std::vector<Vec>& g) const;  // V^h(g), stencil order
  void gradient(const std::vector<Vec>& g, std::vector<Vec>& grad) const;

  // Force at the origin site for a displacement field on the patch.
  Vec force_at_origin(const std::vector<Vec>& w) const;
  // d F^h_0 / d w(l) for every patch site l (analytic when the model has a
  // Hessian, else centered finite differences with the given step).
  std::vector<Mat> force_jacobian_at_origin(double fd_step = 1e-5) const;

 private:
  LatticeSpec spec_;
  const SitePotential* V_;
  ReferenceConfig patch_;
  NeighborTable nt_;
  int origin_ = -1;
  std::vector<Vec> stencil_;
  double V0_ = 0.0;
};

struct TBParams {
  double a = 0.0, b = 0.4, c = -0.15, d = 0.05;  // on-site coefficients
  double lambda = 1.1;                           // density decay
  double e_h = -1.0, f_h = 0.3, g_h = 0.0, h_h = 1.3;  // hopping
  double R_c = 2.8;  // kept off the lattice shells at 2.6458 and 3
  double l_c = 0.5, L_c = 5.0;  // cutoff profile
  double electrons_per_atom = 0.5;
};

// Simplified s-band tight binding (one orbital per atom, identity overlap,
// diagonal on-site terms, zero electronic temperature).
class TightBinding {
 public:
  explicit TightBinding(const TBParams& p) : params_(p) {}

  const TBParams& params() const { return params_; }
  double cutoff_profile(double r) const;

  // Occupation-weighted site energies: E_l = sum_{s occ} lambda_s psi_s[l]^2.
  std::vector<double> site_energies(const ReferenceConfig& cfg,
                                    const DisplacementField& u) const;
  double band_energy(const ReferenceConfig& cfg,
                     const DisplacementField& u) const;
  double energy_difference(const ReferenceConfig& cfg,
                           const DisplacementField* u0,
                           const DisplacementField& u) const;
  // Central finite differences of the band energy (step 1e-5).
  std::vector<Vec> forces(const ReferenceConfig& cfg,
                          const DisplacementField& u) const;

 private:
  TBParams params_;
};

}  // namespace latmix
