#pragma once

#include <memory>

#include "latmix/cb_taylor.hpp"
#include "latmix/predictor.hpp"
#include "latmix/refmodel.hpp"

namespace latmix {

// Disjoint partition QM / MM / FF by distance from the defect center, with
// a buffer shell (subset of MM) feeding the QM site energies.
struct Decomposition {
  Vec center{};
  double R_QM = 0.0, buf_width = 0.0, R_MM = 0.0;
  std::vector<Region> region;         // per defective-config site
  std::vector<std::uint8_t> buffer;   // BUF flag
  std::vector<std::uint8_t> qm_buf;   // QM u BUF (the V^QM restriction)
  int n_qm = 0, n_buf = 0, n_mm = 0, n_ff = 0;

  Region classify(const Vec& x) const;
  bool in_buffer(const Vec& x) const;
};

Decomposition decompose(const ReferenceConfig& cfg, const Vec& center,
                        double R_QM, double buf_width, double R_MM);

// Interpolation onto the homogeneous lattice: identity on common sites,
// missing sites (the vacancy) filled with the average of their
// nearest-neighbor values.
class Interpolant {
 public:
  Interpolant(const ReferenceConfig& defective,
              const ReferenceConfig& homogeneous);

  const ReferenceConfig& homogeneous() const { return *hom_; }
  // hom-site value slots: either a direct defective site or a fill list.
  struct Read {
    int direct = -1;  // defective site id, or -1 when filled
    std::vector<std::pair<int, double>> fill;
  };
  const std::vector<Read>& reads() const { return reads_; }

  DisplacementField apply(const DisplacementField& u) const;

 private:
  const ReferenceConfig* def_;
  const ReferenceConfig* hom_;
  std::vector<Read> reads_;
};

// Force law on the homogeneous lattice: the force at a stencil center as a
// function of relative displacements on the support (slot 0 = center).
class ForceLaw {
 public:
  virtual ~ForceLaw() = default;
  virtual const std::vector<Vec>& support() const = 0;
  virtual Vec force(const std::vector<Vec>& w_rel) const = 0;
};

// Taylor-expanded homogeneous force.
class TaylorForceLaw : public ForceLaw {
 public:
  explicit TaylorForceLaw(TaylorForce tf) : tf_(std::move(tf)) {}
  const std::vector<Vec>& support() const override { return tf_.support(); }
  Vec force(const std::vector<Vec>& w_rel) const override {
    return tf_.eval(w_rel);
  }
  const TaylorForce& table() const { return tf_; }

 private:
  TaylorForce tf_;
};

// Conservative force of a site potential (the MLIP force-mixing law).
class PotentialForceLaw : public ForceLaw {
 public:
  PotentialForceLaw(const LatticeSpec& lat, const SitePotential& V);
  const std::vector<Vec>& support() const override { return support_; }
  Vec force(const std::vector<Vec>& w_rel) const override;
  const SitePotential& potential() const { return *V_; }

 private:
  const SitePotential* V_;
  std::vector<Vec> support_;             // slot 0 = center, radius 2 R_cut
  std::vector<Vec> inner_;               // sites within R_cut of the center
  std::vector<std::vector<int>> slots_;  // per inner site: stencil slot ->
                                         // support slot
  std::vector<int> back_;                // per inner site: stencil slot
                                         // pointing at the center (-1: none)
  std::vector<int> inner_slot_;          // per inner site: its support slot
  std::vector<Vec> stencil_;             // shared stencil offsets
};

struct HybridBuild {
  const ReferenceConfig* config = nullptr;  // defective Lambda
  const SitePotential* Vref = nullptr;      // reference (QM) model
  Vec center{};
  double R_QM = 4.0, buf_width = 4.0, R_MM = 12.0;
  const SitePotential* Vmm = nullptr;  // energy-mixing MM site potential
  const ForceLaw* Fmm = nullptr;       // force-mixing MM force law
  const DislocationSpec* dislocation = nullptr;  // null for point defects
  double nbr_slack = 0.6;  // neighbor-table slack beyond the QM cutoff
};

// Domain-decomposed hybrid model: energy mixing (with ghost-force
// correction) and force mixing over a shared decomposition.
class HybridModel {
 public:
  explicit HybridModel(const HybridBuild& build);

  const Decomposition& decomposition() const { return dec_; }
  const ReferenceConfig& config() const { return *cfg_; }
  const ReferenceConfig& homogeneous() const { return interp_->homogeneous(); }
  const std::vector<double>& beta() const { return beta_; }
  const std::vector<Vec>& predictor() const { return u0_; }

  // E^H(u) and its gradient on the defective configuration.
  double hybrid_energy(const DisplacementField& u) const;
  void hybrid_energy_gradient(const DisplacementField& u,
                              std::vector<Vec>& grad) const;

  // -delta E^H(0): the uncorrected residual at the homogeneous state.
  std::vector<Vec> ghost_force_field() const;

  // E^GFC(u) = E^H(u) - sum g(l) . beta(l) u(l), dead load cached at 0.
  double hybrid_energy_gfc(const DisplacementField& u) const;
  void hybrid_energy_gfc_gradient(const DisplacementField& u,
                                  std::vector<Vec>& grad) const;
  const std::vector<Vec>& dead_load() const { return dead_load_; }

  // Hybrid force field F^H on QM u MM sites (zero elsewhere).
  void hybrid_forces(const DisplacementField& u, std::vector<Vec>& F) const;

  bool has_energy_mixing() const { return Vmm_ != nullptr; }
  bool has_force_mixing() const { return Fmm_ != nullptr; }

 private:
  const ReferenceConfig* cfg_;
  const SitePotential* Vref_;
  const SitePotential* Vmm_;
  const ForceLaw* Fmm_;
  const DislocationSpec* disl_;
  Decomposition dec_;
  NeighborTable nt_;  // defective config, slack cutoff
  std::unique_ptr<ReferenceConfig> hom_owned_;
  std::unique_ptr<Interpolant> interp_;
  std::vector<Vec> u0_;      // predictor on the defective config
  std::vector<double> beta_;
  std::vector<Vec> dead_load_;

  // MM energy bookkeeping on the homogeneous lattice.
  struct MMSite {
    int hom_id;
    std::vector<int> read;   // per offset: hom site id (-1 outside domain)
    std::vector<Vec> base;   // e_rho(l): predictor strain entries
    double base_energy;      // V^MM(e(l))
  };
  std::vector<Vec> mm_offsets_;
  std::vector<MMSite> mm_sites_;
  std::vector<Region> hom_region_;

  // Force-mixing bookkeeping.
  struct FMSite {
    int def_id;
    std::vector<int> read;  // per support slot: hom site id (-1 outside)
    std::vector<Vec> base;  // predictor strain entries on the force support
  };
  std::vector<FMSite> fm_sites_;
  // Conservative force laws evaluate by a single assembly sweep over the
  // homogeneous lattice instead of per-site cluster evaluations.
  const SitePotential* fm_potential_ = nullptr;
  std::vector<Vec> fm_offsets_;
  std::vector<MMSite> fm_bulk_;          // every hom site
  std::vector<int> fm_def_to_hom_;       // MM defective site -> hom id

  void build_mm_tables();
  void build_fm_tables();
  double mm_energy(const DisplacementField& uh) const;
  void mm_energy_gradient(const DisplacementField& uh,
                          std::vector<Vec>& grad_h) const;
  void scatter_hom_gradient(const std::vector<Vec>& grad_h,
                            std::vector<Vec>& grad) const;
  DisplacementField lift(const DisplacementField& u) const;  // I^h u
};

}  // namespace latmix
